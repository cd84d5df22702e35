// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Instance store and method dispatch. A store is a directory of
// `*.instance.json` files; each instance names its sidecar files by role:
//
//   attention            similarity matrix or attention stack (default layer)
//   attention.L<l>       the same for layer l (used by layer sweeps)
//   hidden               hidden states
//   response_attention   response-to-response scores
//   depparse             dependency parse JSON
//
// Sidecars load lazily, once, and are shared read-only afterwards.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "spanattr/attribution.hpp"
#include "spanattr/baselines.hpp"
#include "spanattr/depaug.hpp"
#include "spanattr/error.hpp"
#include "spanattr/interchange.hpp"
#include "spanattr/similarity.hpp"
#include "spanattr/types.hpp"

namespace spanattr {

enum class Method {
  kAttnUnion,
  kAttnUnionDep,
  kHssAvg,
  kHssAvgDep,
  kHssUnion,
  kSentComp,
  kAugmentByAttn,
};

inline const std::vector<std::pair<Method, std::string>>& method_names() {
  static const std::vector<std::pair<Method, std::string>> names = {
      {Method::kAttnUnion, "attn-union"},       {Method::kAttnUnionDep, "attn-union-dep"},
      {Method::kHssAvg, "hss-avg"},             {Method::kHssAvgDep, "hss-avg-dep"},
      {Method::kHssUnion, "hss-union"},         {Method::kSentComp, "sent-comp"},
      {Method::kAugmentByAttn, "augment-by-attn"},
  };
  return names;
}

inline std::string method_name(Method m) {
  for (const auto& [k, v] : method_names()) {
    if (k == m) return v;
  }
  return "unknown";
}

inline std::optional<Method> parse_method(const std::string& s) {
  for (const auto& [k, v] : method_names()) {
    if (v == s) return k;
  }
  return std::nullopt;
}

inline bool needs_depparse(Method m) { return m == Method::kAttnUnionDep || m == Method::kHssAvgDep; }

/// Missing sidecar required by the requested method.
class MissingInputError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

struct MethodConfig {
  EngineConfig engine;
  std::size_t window = 8;
  AttnVariant variant = AttnVariant::kFull;
  std::optional<int> layer;  // attention layer; default sidecar when absent
};

/// One instance plus its lazily loaded sidecars and compute-once caches.
class InstanceBundle {
 public:
  InstanceBundle(fs::path instance_path, TokenizedInstance inst)
      : dir_(instance_path.parent_path()),
        inst_(std::make_shared<const TokenizedInstance>(std::move(inst))) {}

  static std::shared_ptr<InstanceBundle> open(const fs::path& instance_path) {
    return std::make_shared<InstanceBundle>(instance_path, load_instance(instance_path));
  }

  /// Same instance and sidecar files with empty caches.
  std::shared_ptr<InstanceBundle> fresh() const {
    return std::shared_ptr<InstanceBundle>(new InstanceBundle(dir_, inst_));
  }

  const TokenizedInstance& instance() const noexcept { return *inst_; }
  std::shared_ptr<const TokenizedInstance> instance_ptr() const noexcept { return inst_; }

  bool has_sidecar(const std::string& role) const { return inst_->sidecars.count(role) > 0; }

  fs::path sidecar_path(const std::string& role) const {
    auto it = inst_->sidecars.find(role);
    if (it == inst_->sidecars.end()) {
      throw MissingInputError("instance '" + inst_->instance_id + "' has no '" + role + "' sidecar");
    }
    return dir_ / it->second;
  }

  /// Attention similarity of the requested layer (heads averaged on load).
  std::shared_ptr<const SimilarityMatrix> attention(std::optional<int> layer = std::nullopt) const {
    std::lock_guard lock(mu_);
    const int key = layer.value_or(-1);
    if (auto it = attention_.find(key); it != attention_.end()) return it->second;
    std::shared_ptr<const SimilarityMatrix> sim;
    if (layer && has_sidecar("attention.L" + std::to_string(*layer))) {
      sim = load_similarity("attention.L" + std::to_string(*layer));
    } else {
      sim = load_similarity("attention");
      if (layer && sim->provenance.layer != layer) {
        throw MissingInputError("instance '" + inst_->instance_id + "' has no attention for layer " +
                                std::to_string(*layer));
      }
    }
    attention_[key] = sim;
    return sim;
  }

  std::shared_ptr<const HiddenStates> hidden() const {
    std::lock_guard lock(mu_);
    if (!hidden_) {
      auto loaded = load_matrix(sidecar_path("hidden"), *inst_);
      if (!std::holds_alternative<HiddenStates>(loaded)) {
        throw SchemaError("sidecars.hidden", "expected a hidden-states matrix");
      }
      hidden_ = std::make_shared<const HiddenStates>(std::get<HiddenStates>(std::move(loaded)));
    }
    return hidden_;
  }

  std::shared_ptr<const SimilarityMatrix> hidden_similarity() const {
    auto h = hidden();
    std::lock_guard lock(mu_);
    if (!hidden_sim_) hidden_sim_ = std::make_shared<const SimilarityMatrix>(hidden_cosine(*h));
    return hidden_sim_;
  }

  std::shared_ptr<const ResponseMatrix> response_attention() const {
    std::lock_guard lock(mu_);
    if (!response_) {
      auto loaded = load_matrix(sidecar_path("response_attention"), *inst_);
      if (!std::holds_alternative<ResponseMatrix>(loaded)) {
        throw SchemaError("sidecars.response_attention", "expected a response-attention matrix");
      }
      response_ = std::make_shared<const ResponseMatrix>(std::get<ResponseMatrix>(std::move(loaded)));
    }
    return response_;
  }

  std::shared_ptr<const DepAugmenter> dep_augmenter() const {
    std::lock_guard lock(mu_);
    if (!dep_) {
      if (!has_sidecar("depparse")) {
        throw MissingInputError("instance '" + inst_->instance_id +
                                "' has no dependency parse; -dep methods need one");
      }
      auto parse = std::make_shared<const DepParse>(load_depparse(sidecar_path("depparse")));
      check_against(*parse, *inst_);
      dep_ = std::make_shared<const DepAugmenter>(std::move(parse), inst_->response_count());
    }
    return dep_;
  }

  std::shared_ptr<const AttnAugmenter> attn_augmenter(std::size_t k, AttnVariant variant) const {
    auto resp = response_attention();
    std::lock_guard lock(mu_);
    auto key = std::make_pair(k, static_cast<int>(variant));
    auto& slot = attn_aug_[key];
    if (!slot) slot = std::make_shared<const AttnAugmenter>(inst_, resp, k, variant);
    return slot;
  }

  /// Memoized engine over the attention matrix of `layer`. Keyed by (layer, k, tau).
  std::shared_ptr<const Attributor> attention_attributor(const MethodConfig& cfg) const {
    auto sim = attention(cfg.layer);
    return attributor("attention/" + std::to_string(cfg.layer.value_or(-1)), sim, cfg.engine);
  }

  std::shared_ptr<const Attributor> hidden_attributor(const MethodConfig& cfg) const {
    auto sim = hidden_similarity();
    return attributor("hidden-cosine", sim, cfg.engine);
  }

 private:
  InstanceBundle(fs::path dir, std::shared_ptr<const TokenizedInstance> inst)
      : dir_(std::move(dir)), inst_(std::move(inst)) {}

  std::shared_ptr<const SimilarityMatrix> load_similarity(const std::string& role) const {
    auto loaded = load_matrix(sidecar_path(role), *inst_);
    if (auto* s = std::get_if<SimilarityMatrix>(&loaded)) {
      return std::make_shared<const SimilarityMatrix>(std::move(*s));
    }
    if (auto* st = std::get_if<AttentionStack>(&loaded)) {
      return std::make_shared<const SimilarityMatrix>(attention_average(*st));
    }
    throw SchemaError("sidecars." + role, "expected a similarity matrix or attention stack");
  }

  std::shared_ptr<const Attributor> attributor(const std::string& matrix_key,
                                               std::shared_ptr<const SimilarityMatrix> sim,
                                               const EngineConfig& cfg) const {
    std::lock_guard lock(mu_);
    auto key = std::make_tuple(matrix_key, cfg.k, cfg.tau.value());
    auto& slot = attributors_[key];
    if (!slot) slot = std::make_shared<const Attributor>(inst_, std::move(sim), cfg);
    return slot;
  }

  fs::path dir_;
  std::shared_ptr<const TokenizedInstance> inst_;
  mutable std::mutex mu_;
  mutable std::map<int, std::shared_ptr<const SimilarityMatrix>> attention_;
  mutable std::shared_ptr<const HiddenStates> hidden_;
  mutable std::shared_ptr<const SimilarityMatrix> hidden_sim_;
  mutable std::shared_ptr<const ResponseMatrix> response_;
  mutable std::shared_ptr<const DepAugmenter> dep_;
  mutable std::map<std::pair<std::size_t, int>, std::shared_ptr<const AttnAugmenter>> attn_aug_;
  mutable std::map<std::tuple<std::string, std::size_t, std::size_t>, std::shared_ptr<const Attributor>>
      attributors_;
};

/// Directory of instances, scanned once at construction.
class InstanceStore {
 public:
  InstanceStore() = default;

  explicit InstanceStore(const fs::path& dir) : dir_(dir) {
    if (!fs::is_directory(dir)) throw Error("instance directory " + dir.string() + " does not exist");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_regular_file() && name.size() > 14 &&
          name.compare(name.size() - 14, 14, ".instance.json") == 0) {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) add(InstanceBundle::open(f));
  }

  void add(std::shared_ptr<InstanceBundle> b) {
    const std::string id = b->instance().instance_id;
    if (bundles_.count(id)) throw ValidationError("duplicate instance id '" + id + "'");
    bundles_.emplace(id, std::move(b));
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : bundles_) out.push_back(id);
    return out;
  }

  std::shared_ptr<const InstanceBundle> find(const std::string& id) const {
    auto it = bundles_.find(id);
    return it == bundles_.end() ? nullptr : it->second;
  }

  const InstanceBundle& get(const std::string& id) const {
    auto b = find(id);
    if (!b) throw NotFoundError("unknown instance '" + id + "'");
    return *b;
  }

  const fs::path& dir() const noexcept { return dir_; }

 private:
  fs::path dir_;
  std::map<std::string, std::shared_ptr<InstanceBundle>> bundles_;
};

/// Outcome of running one method on one span.
struct MethodResult {
  Method method = Method::kAttnUnion;
  std::vector<std::size_t> span;            // tokens actually attributed
  EvidenceSet evidence;                     // union methods; window tokens for hss-avg*
  std::optional<WindowScore> window;        // hss-avg*
  std::optional<std::size_t> predicted;
  std::vector<std::size_t> cited;
  // (token, A(token)) for augmenting methods, in span order.
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> augmentation;
};

namespace detail {

inline void record_augmentation(MethodResult& r, std::span<const std::size_t> tokens, const Augmenter& aug) {
  for (std::size_t i : tokens) r.augmentation.emplace_back(i, aug.elements(i));
}

inline EvidenceSet window_evidence(const TokenizedInstance& inst, const WindowScore& w,
                                   std::vector<std::size_t> span) {
  EvidenceSet ev;
  ev.span_tokens = std::move(span);
  for (std::size_t j = w.start; j < w.start + w.width; ++j) ev.evidence.push_back({j, w.score});
  ev.passage_scores = w.passage_best;
  (void)inst;
  return ev;
}

}  // namespace detail

/// Runs `method` on `span` of one instance.
inline MethodResult run_method(const InstanceBundle& b, Method method, const MethodConfig& cfg,
                               std::vector<std::size_t> span) {
  const auto& inst = b.instance();
  span = normalize_span(std::move(span), inst.response_count());
  MethodResult r;
  r.method = method;
  r.span = span;
  const double theta = cfg.engine.citation_threshold;

  auto finish_union = [&](EvidenceSet ev) {
    r.evidence = std::move(ev);
    r.predicted = predict_passage(r.evidence);
    r.cited = cite_passages(r.evidence, theta);
  };
  auto finish_window = [&](const WindowScore& w, std::vector<std::size_t> tokens) {
    r.window = w;
    r.span = tokens;
    r.evidence = detail::window_evidence(inst, w, std::move(tokens));
    r.predicted = w.passage;
    r.cited = cite_passages(w.passage_best, theta);
  };

  switch (method) {
    case Method::kAttnUnion:
      finish_union(b.attention_attributor(cfg)->attribute(span));
      break;
    case Method::kAttnUnionDep: {
      auto aug = b.dep_augmenter();
      auto attr = b.attention_attributor(cfg);
      detail::record_augmentation(r, span, *aug);
      finish_union(attr->attribute(span, aug.get()));
      break;
    }
    case Method::kHssAvg:
      finish_window(hss_avg(inst, *b.hidden(), span, cfg.window), span);
      break;
    case Method::kHssAvgDep: {
      auto aug = b.dep_augmenter();
      detail::record_augmentation(r, span, *aug);
      auto expanded = expand_span(span, *aug);
      finish_window(hss_avg(inst, *b.hidden(), expanded, cfg.window), expanded);
      break;
    }
    case Method::kHssUnion:
      finish_union(b.hidden_attributor(cfg)->attribute(span));
      break;
    case Method::kSentComp: {
      auto attr = b.attention_attributor(cfg);
      r.span = sentence_completion(inst, span);
      finish_union(attr->attribute(r.span));
      break;
    }
    case Method::kAugmentByAttn: {
      auto aug = b.attn_augmenter(cfg.engine.k, cfg.variant);
      auto attr = b.attention_attributor(cfg);
      detail::record_augmentation(r, span, *aug);
      finish_union(augment_by_attn(*attr, *aug, span));
      break;
    }
  }
  return r;
}

}  // namespace spanattr
