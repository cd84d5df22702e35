// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/**
 * Token-wise attribution with union aggregation.
 *
 * Every response token r_i is attributed to the document tokens whose score
 * in row S_i reaches the k-th largest value of the whole prompt row (ties at
 * the k-th value are all kept, question columns can crowd documents out).
 * A span's evidence is the union of its tokens' evidence with scores summed;
 * evidence tokens without another evidence token within tau positions are
 * then dropped.
 *
 * Per-token maps do not depend on the span, so Attributor computes each row
 * at most once and every later span reuses it.
 */

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spanattr/error.hpp"
#include "spanattr/types.hpp"

namespace spanattr {

/// Isolation threshold; `infinite()` disables filtering.
class Tau {
 public:
  constexpr Tau() = default;
  constexpr explicit Tau(std::size_t v) : value_(v) {}
  static constexpr Tau infinite() { return Tau(kInf); }

  constexpr bool is_infinite() const noexcept { return value_ == kInf; }
  constexpr std::size_t value() const noexcept { return value_; }

  std::string str() const { return is_infinite() ? "inf" : std::to_string(value_); }

  /// Parses "inf", "infinity" or a positive integer.
  static Tau parse(const std::string& s) {
    if (s == "inf" || s == "infinity" || s == "∞") return infinite();
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      throw ArgumentError("tau must be a positive integer or 'inf', got '" + s + "'");
    }
    if (pos != s.size() || v == 0) {
      throw ArgumentError("tau must be a positive integer or 'inf', got '" + s + "'");
    }
    return Tau(static_cast<std::size_t>(v));
  }

  friend constexpr bool operator==(Tau, Tau) = default;

 private:
  static constexpr std::size_t kInf = std::numeric_limits<std::size_t>::max();
  std::size_t value_ = 2;
};

struct EngineConfig {
  std::size_t k = 2;
  Tau tau{2};
  double citation_threshold = 0.0;

  void validate() const {
    if (k < 1) throw ArgumentError("k must be >= 1");
    if (tau.value() < 1) throw ArgumentError("tau must be >= 1 or inf");
  }
};

struct ScoredToken {
  std::size_t index = 0;
  double score = 0.0;
  friend bool operator==(const ScoredToken&, const ScoredToken&) = default;
};

/// Sparse evidence map, sorted by document token index.
using TokenMap = std::vector<ScoredToken>;

struct EvidenceSet {
  std::vector<std::size_t> span_tokens;  // sorted response token indices
  TokenMap evidence;                     // sorted document token indices
  std::vector<double> passage_scores;

  double total() const {
    double s = 0.0;
    for (const auto& e : evidence) s += e.score;
    return s;
  }
  bool empty() const noexcept { return evidence.empty(); }
  friend bool operator==(const EvidenceSet&, const EvidenceSet&) = default;
};

/// Score of the k-th largest entry of `row` (the row minimum once k reaches
/// the row length).
inline double kth_largest(std::span<const double> row, std::size_t k) {
  if (row.empty()) return std::numeric_limits<double>::infinity();
  if (k >= row.size()) return *std::min_element(row.begin(), row.end());
  std::vector<double> scratch(row.begin(), row.end());
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   scratch.end(), std::greater<>());
  return scratch[k - 1];
}

/// Evidence of response token i: document columns [o, o + c) of row S_i that
/// reach the k-th largest value of the full row and are strictly positive.
/// Keys are document-local indices.
inline TokenMap token_attribution(const SimilarityMatrix& s, std::size_t i,
                                  const TokenizedInstance& inst, const EngineConfig& cfg) {
  if (i >= s.values.rows()) {
    throw ArgumentError("response token " + std::to_string(i) + " outside [0, " +
                        std::to_string(s.values.rows()) + ")");
  }
  const auto row = s.values.row(i);
  const double kth = kth_largest(row, cfg.k);
  const std::size_t o = inst.doc_offset;
  const std::size_t c = inst.doc_count();
  TokenMap out;
  for (std::size_t j = 0; j < c; ++j) {
    const double v = row[o + j];
    if (v >= kth && v > 0.0) out.push_back({j, v});
  }
  return out;
}

/// Per-passage sums of evidence scores.
inline std::vector<double> passage_rollup(const TokenMap& evidence, const TokenizedInstance& inst) {
  std::vector<double> scores(inst.passage_count(), 0.0);
  const auto& bounds = inst.passage_boundaries;
  for (const auto& e : evidence) {
    auto it = std::upper_bound(bounds.begin(), bounds.end(), e.index,
                               [](std::size_t j, const Range& r) { return j < r.end; });
    if (it == bounds.end()) {
      throw ArgumentError("evidence token " + std::to_string(e.index) + " outside all passages");
    }
    scores[static_cast<std::size_t>(it - bounds.begin())] += e.score;
  }
  return scores;
}

/// Exact union of sparse maps with scores summed in the order given.
inline TokenMap sum_maps(std::span<const TokenMap* const> maps) {
  std::map<std::size_t, double> acc;
  for (const TokenMap* m : maps) {
    for (const auto& e : *m) acc[e.index] += e.score;
  }
  TokenMap out;
  out.reserve(acc.size());
  for (const auto& [j, w] : acc) out.push_back({j, w});
  return out;
}

/// Union aggregation of the per-token maps of a span. `maps[t]` belongs to
/// `span_tokens[t]`.
inline EvidenceSet aggregate_union(std::span<const TokenMap> maps,
                                   std::vector<std::size_t> span_tokens,
                                   const TokenizedInstance& inst) {
  if (maps.empty()) throw ArgumentError("cannot aggregate an empty span");
  std::vector<const TokenMap*> ptrs;
  ptrs.reserve(maps.size());
  for (const auto& m : maps) ptrs.push_back(&m);
  EvidenceSet out;
  out.span_tokens = std::move(span_tokens);
  out.evidence = sum_maps(ptrs);
  out.passage_scores = passage_rollup(out.evidence, inst);
  return out;
}

/// Keeps evidence token j iff another evidence token j' != j has |j' - j| <= tau.
inline EvidenceSet remove_isolated(const EvidenceSet& in, Tau tau, const TokenizedInstance& inst) {
  if (tau.is_infinite()) return in;
  EvidenceSet out;
  out.span_tokens = in.span_tokens;
  const auto& ev = in.evidence;
  const std::size_t t = tau.value();
  for (std::size_t p = 0; p < ev.size(); ++p) {
    const bool near_prev = p > 0 && ev[p].index - ev[p - 1].index <= t;
    const bool near_next = p + 1 < ev.size() && ev[p + 1].index - ev[p].index <= t;
    if (near_prev || near_next) out.evidence.push_back(ev[p]);
  }
  out.passage_scores = passage_rollup(out.evidence, inst);
  return out;
}

/// Passage with the highest cumulative score; lowest index wins ties.
/// nullopt when the evidence set is empty.
inline std::optional<std::size_t> predict_passage(const EvidenceSet& ev) {
  if (ev.evidence.empty() || ev.passage_scores.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t p = 1; p < ev.passage_scores.size(); ++p) {
    if (ev.passage_scores[p] > ev.passage_scores[best]) best = p;
  }
  return best;
}

/// Passages scoring strictly above `threshold`.
inline std::vector<std::size_t> cite_passages(std::span<const double> passage_scores,
                                              double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < passage_scores.size(); ++p) {
    if (passage_scores[p] > threshold) out.push_back(p);
  }
  return out;
}

inline std::vector<std::size_t> cite_passages(const EvidenceSet& ev, double threshold) {
  return cite_passages(ev.passage_scores, threshold);
}

/// Sorted, de-duplicated token list for a span; throws on empty or
/// out-of-range spans.
inline std::vector<std::size_t> normalize_span(std::vector<std::size_t> tokens, std::size_t n) {
  if (tokens.empty()) throw ArgumentError("target span is empty");
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  if (tokens.back() >= n) {
    throw ArgumentError("span token " + std::to_string(tokens.back()) +
                        " outside response of length " + std::to_string(n));
  }
  return tokens;
}

/// Supplies the token set A(r_i) whose maps are summed into token i's map.
class Augmenter {
 public:
  virtual ~Augmenter() = default;
  /// Response tokens whose evidence token i absorbs; always contains i.
  virtual const std::vector<std::size_t>& elements(std::size_t i) const = 0;
};

/// Memoized attribution engine for one (instance, similarity matrix, config).
///
/// Safe for concurrent use: each per-token map is computed exactly once
/// (std::call_once per slot) and is immutable afterwards.
class Attributor {
 public:
  Attributor(std::shared_ptr<const TokenizedInstance> inst,
             std::shared_ptr<const SimilarityMatrix> sim, EngineConfig cfg)
      : inst_(std::move(inst)), sim_(std::move(sim)), cfg_(cfg) {
    cfg_.validate();
    if (sim_->values.rows() != inst_->response_count() ||
        sim_->values.cols() != inst_->prompt_length()) {
      throw ShapeError("similarity matrix is " + std::to_string(sim_->values.rows()) + "x" +
                       std::to_string(sim_->values.cols()) + ", instance needs " +
                       std::to_string(inst_->response_count()) + "x" +
                       std::to_string(inst_->prompt_length()));
    }
    if (sim_->doc_offset != inst_->doc_offset) {
      throw ShapeError("similarity matrix doc offset differs from the instance");
    }
    slots_ = std::make_unique<Slot[]>(inst_->response_count());
  }

  Attributor(const Attributor&) = delete;
  Attributor& operator=(const Attributor&) = delete;

  const TokenizedInstance& instance() const noexcept { return *inst_; }
  const SimilarityMatrix& similarity() const noexcept { return *sim_; }
  const EngineConfig& config() const noexcept { return cfg_; }

  /// Unfiltered evidence map of response token i (memoized).
  const TokenMap& token_map(std::size_t i) const {
    if (i >= inst_->response_count()) {
      throw ArgumentError("response token " + std::to_string(i) + " out of range");
    }
    Slot& slot = slots_[i];
    std::call_once(slot.once, [&] {
      slot.map = token_attribution(*sim_, i, *inst_, cfg_);
      row_scans_.fetch_add(1, std::memory_order_relaxed);
    });
    return slot.map;
  }

  /// Token i's map after summing the maps of its augmentation elements.
  TokenMap augmented_map(std::size_t i, const Augmenter& aug) const {
    const auto& elems = aug.elements(i);
    std::vector<const TokenMap*> maps;
    maps.reserve(elems.size());
    for (std::size_t a : elems) maps.push_back(&token_map(a));
    return sum_maps(maps);
  }

  /// Full pipeline: per-token maps (optionally augmented), union, isolation filter.
  EvidenceSet attribute(std::vector<std::size_t> tokens, const Augmenter* aug = nullptr) const {
    tokens = normalize_span(std::move(tokens), inst_->response_count());
    std::vector<TokenMap> maps;
    maps.reserve(tokens.size());
    for (std::size_t i : tokens) {
      maps.push_back(aug ? augmented_map(i, *aug) : token_map(i));
    }
    return remove_isolated(aggregate_union(maps, std::move(tokens), *inst_), cfg_.tau, *inst_);
  }

  EvidenceSet attribute(const Range& span, const Augmenter* aug = nullptr) const {
    if (span.empty()) throw ArgumentError("target span is empty");
    return attribute(indices_of(span), aug);
  }

  /// Number of similarity rows scanned so far.
  std::size_t row_scans() const noexcept { return row_scans_.load(std::memory_order_relaxed); }

 private:
  struct Slot {
    std::once_flag once;
    TokenMap map;
  };

  std::shared_ptr<const TokenizedInstance> inst_;
  std::shared_ptr<const SimilarityMatrix> sim_;
  EngineConfig cfg_;
  std::unique_ptr<Slot[]> slots_;
  mutable std::atomic<std::size_t> row_scans_{0};
};

}  // namespace spanattr
