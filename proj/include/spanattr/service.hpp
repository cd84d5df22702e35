// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Attribute requests and evidence payloads. The CLI and the HTTP server both
// go through handle_attribute, so identical requests serialize identically.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "spanattr/attribution.hpp"
#include "spanattr/error.hpp"
#include "spanattr/interchange.hpp"
#include "spanattr/store.hpp"

namespace spanattr {

/// Invalid request; `field` names the offending request field.
class RequestError : public Error {
 public:
  RequestError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)), message_(message) {}
  const std::string& field() const noexcept { return field_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string field_;
  std::string message_;
};

inline std::string variant_name(AttnVariant v) { return v == AttnVariant::kFull ? "full" : "local-sentence"; }

inline std::optional<AttnVariant> parse_variant(const std::string& s) {
  if (s == "full") return AttnVariant::kFull;
  if (s == "local-sentence") return AttnVariant::kLocalSentence;
  return std::nullopt;
}

struct Overrides {
  std::optional<std::size_t> k;
  std::optional<Tau> tau;
  std::optional<double> theta;
  std::optional<std::size_t> window;
  std::optional<AttnVariant> variant;
  std::optional<int> layer;

  /// Fields set here win over `base`.
  MethodConfig apply(MethodConfig base) const {
    if (k) base.engine.k = *k;
    if (tau) base.engine.tau = *tau;
    if (theta) base.engine.citation_threshold = *theta;
    if (window) base.window = *window;
    if (variant) base.variant = *variant;
    if (layer) base.layer = *layer;
    return base;
  }
};

namespace detail {

inline std::size_t positive_field(const json& v, const std::string& field) {
  if (!v.is_number_integer() || v.get<long long>() < 1) throw RequestError(field, "expected a positive integer");
  return v.get<std::size_t>();
}

inline Range request_range(const json& v, const std::string& field) {
  auto index = [](const json& x) { return x.is_number_integer() && x.get<long long>() >= 0; };
  if (!v.is_array() || v.size() != 2 || !index(v[0]) || !index(v[1])) {
    throw RequestError(field, "expected [begin, end] with non-negative integers");
  }
  Range r{v[0].get<std::size_t>(), v[1].get<std::size_t>()};
  if (r.empty()) throw RequestError(field, "range is empty");
  return r;
}

}  // namespace detail

/// Reads k, tau, theta, window, variant and layer from a JSON object; other
/// keys are ignored.
inline Overrides overrides_from_json(const json& doc) {
  Overrides o;
  if (!doc.is_object()) throw RequestError("$", "expected a JSON object");
  if (auto it = doc.find("k"); it != doc.end()) o.k = detail::positive_field(*it, "k");
  if (auto it = doc.find("tau"); it != doc.end()) {
    if (it->is_string()) {
      try {
        o.tau = Tau::parse(it->get<std::string>());
      } catch (const Error& e) {
        throw RequestError("tau", e.what());
      }
    } else {
      o.tau = Tau(detail::positive_field(*it, "tau"));
    }
  }
  if (auto it = doc.find("theta"); it != doc.end()) {
    if (!it->is_number()) throw RequestError("theta", "expected a number");
    o.theta = it->get<double>();
    if (!std::isfinite(*o.theta)) throw RequestError("theta", "expected a finite number");
  }
  if (auto it = doc.find("window"); it != doc.end()) o.window = detail::positive_field(*it, "window");
  if (auto it = doc.find("variant"); it != doc.end()) {
    if (!it->is_string() || !parse_variant(it->get<std::string>())) {
      throw RequestError("variant", "expected \"full\" or \"local-sentence\"");
    }
    o.variant = parse_variant(it->get<std::string>());
  }
  if (auto it = doc.find("layer"); it != doc.end()) {
    if (!it->is_number_integer() || it->get<long long>() < 1) {
      throw RequestError("layer", "expected a positive integer");
    }
    o.layer = it->get<int>();
  }
  return o;
}

/// Built-in defaults overridden by an optional JSON config file.
inline MethodConfig load_config(const std::optional<fs::path>& path) {
  MethodConfig cfg;
  if (!path) return cfg;
  try {
    cfg = overrides_from_json(detail::read_json(*path)).apply(cfg);
  } catch (const RequestError& e) {
    throw SchemaError(e.field(), path->string() + ": " + e.message());
  }
  return cfg;
}

struct AttributeRequest {
  std::string instance_id;
  std::optional<Range> tokens;
  std::optional<Range> chars;
  Method method = Method::kAttnUnion;
  Overrides overrides;
};

/// Parses a request body. `span` holds exactly one of {"tokens": [b, e]} or
/// {"chars": [b, e]}, end-exclusive.
inline AttributeRequest request_from_json(const std::string& instance_id, const json& body) {
  if (!body.is_object()) throw RequestError("$", "expected a JSON object");
  AttributeRequest req;
  req.instance_id = instance_id;
  const auto m = body.find("method");
  if (m == body.end() || !m->is_string()) throw RequestError("method", "required string");
  const auto method = parse_method(m->get<std::string>());
  if (!method) throw RequestError("method", "unknown method '" + m->get<std::string>() + "'");
  req.method = *method;

  const auto s = body.find("span");
  if (s == body.end() || !s->is_object()) throw RequestError("span", "required object");
  const bool has_tokens = s->contains("tokens");
  const bool has_chars = s->contains("chars");
  if (has_tokens == has_chars) throw RequestError("span", "give exactly one of \"tokens\" or \"chars\"");
  if (has_tokens) req.tokens = detail::request_range((*s)["tokens"], "span.tokens");
  if (has_chars) req.chars = detail::request_range((*s)["chars"], "span.chars");
  req.overrides = overrides_from_json(body);
  return req;
}

inline json request_to_json(const AttributeRequest& req) {
  json body;
  body["method"] = method_name(req.method);
  if (req.tokens) body["span"]["tokens"] = detail::range_json(*req.tokens);
  if (req.chars) body["span"]["chars"] = detail::range_json(*req.chars);
  const auto& o = req.overrides;
  if (o.k) body["k"] = *o.k;
  if (o.tau) body["tau"] = o.tau->str();
  if (o.theta) body["theta"] = *o.theta;
  if (o.window) body["window"] = *o.window;
  if (o.variant) body["variant"] = variant_name(*o.variant);
  if (o.layer) body["layer"] = *o.layer;
  return body;
}

/// Smallest token range whose character spans cover [chars.begin, chars.end).
inline Range chars_to_tokens(const TokenizedInstance& inst, const Range& chars) {
  if (chars.end > inst.response_text.size()) {
    throw RequestError("span.chars", "range ends past the response text (" +
                                         std::to_string(inst.response_text.size()) + " chars)");
  }
  std::optional<std::size_t> first;
  std::size_t last = 0;
  for (std::size_t i = 0; i < inst.response_char_spans.size(); ++i) {
    const Range& t = inst.response_char_spans[i];
    if (t.overlaps(chars)) {
      if (!first) first = i;
      last = i;
    }
  }
  if (!first) throw RequestError("span.chars", "range covers no token");
  return {*first, last + 1};
}

inline Range resolve_span(const TokenizedInstance& inst, const AttributeRequest& req) {
  if (req.chars) return chars_to_tokens(inst, *req.chars);
  if (req.tokens->end > inst.response_count()) {
    throw RequestError("span.tokens", "range ends past the response (" + std::to_string(inst.response_count()) +
                                          " tokens)");
  }
  return *req.tokens;
}

namespace detail {

inline json score_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace detail

/// Evidence payload for one method run.
inline json result_to_json(const TokenizedInstance& inst, const Range& target, const MethodConfig& cfg,
                           const MethodResult& r) {
  json out;
  out["instance_id"] = inst.instance_id;
  out["method"] = method_name(r.method);
  out["config"] = {{"k", cfg.engine.k},
                   {"tau", cfg.engine.tau.str()},
                   {"theta", cfg.engine.citation_threshold},
                   {"window", cfg.window},
                   {"variant", variant_name(cfg.variant)},
                   {"layer", cfg.layer ? json(*cfg.layer) : json(nullptr)}};
  out["target"] = {{"tokens", detail::range_json(target)},
                   {"chars", detail::range_json({inst.response_char_spans[target.begin].begin,
                                                 inst.response_char_spans[target.end - 1].end})}};
  out["span_tokens"] = r.span;
  json ev = json::array();
  for (const auto& e : r.evidence.evidence) {
    ev.push_back({{"token", e.index}, {"passage", inst.passage_of(e.index)}, {"score", e.score},
                  {"text", inst.doc_token(e.index)}});
  }
  out["evidence"] = std::move(ev);
  json ps = json::array();
  for (double v : r.evidence.passage_scores) ps.push_back(detail::score_json(v));
  out["passage_scores"] = std::move(ps);
  out["predicted_passage"] = r.predicted ? json(*r.predicted) : json(nullptr);
  out["cited_passages"] = r.cited;
  if (!r.augmentation.empty() || needs_depparse(r.method) || r.method == Method::kAugmentByAttn) {
    json aug = json::array();
    for (const auto& [tok, elems] : r.augmentation) aug.push_back({{"token", tok}, {"elements", elems}});
    out["augmentation"] = std::move(aug);
  }
  if (r.window) {
    out["window"] = {{"start", r.window->start},
                     {"width", r.window->width},
                     {"score", r.window->score},
                     {"passage", r.window->passage}};
  }
  return out;
}

/// Runs a parsed request against the store. Throws NotFoundError for an
/// unknown instance and RequestError for invalid fields.
inline json handle_attribute(const InstanceStore& store, const MethodConfig& defaults,
                             const AttributeRequest& req) {
  const auto bundle = store.find(req.instance_id);
  if (!bundle) throw NotFoundError("unknown instance '" + req.instance_id + "'");
  const auto& inst = bundle->instance();
  const Range target = resolve_span(inst, req);
  const MethodConfig cfg = req.overrides.apply(defaults);
  if (cfg.window > inst.doc_count() && (req.method == Method::kHssAvg || req.method == Method::kHssAvgDep)) {
    throw RequestError("window", "exceeds document length " + std::to_string(inst.doc_count()));
  }
  const auto result = run_method(*bundle, req.method, cfg, indices_of(target));
  return result_to_json(inst, target, cfg, result);
}

inline json instance_summary(const InstanceBundle& b) {
  const auto& inst = b.instance();
  json roles = json::array();
  for (const auto& [role, _] : inst.sidecars) roles.push_back(role);
  return {{"instance_id", inst.instance_id},
          {"passages", inst.passage_count()},
          {"doc_tokens", inst.doc_count()},
          {"question_tokens", inst.question_count()},
          {"response_tokens", inst.response_count()},
          {"sentences", inst.sentence_boundaries.size()},
          {"sidecars", std::move(roles)}};
}

inline json list_instances(const InstanceStore& store) {
  json out = json::array();
  for (const auto& id : store.ids()) out.push_back(instance_summary(*store.find(id)));
  return {{"instances", std::move(out)}};
}

inline json error_json(const std::string& message, const std::optional<std::string>& field = std::nullopt) {
  json e = {{"message", message}};
  if (field) e["field"] = *field;
  return {{"error", std::move(e)}};
}

}  // namespace spanattr
