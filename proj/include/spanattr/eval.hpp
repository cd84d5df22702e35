// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Evaluation protocols: passage accuracy, log-probability drop with the
// random and oracle references, hyperparameter sweeps, latency, and
// citation emission.
//
// Latency numbers exclude model forward passes (matrices are read from
// disk), so they are not comparable to end-to-end generation timings.

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "spanattr/attribution.hpp"
#include "spanattr/error.hpp"
#include "spanattr/interchange.hpp"
#include "spanattr/store.hpp"
#include "spanattr/types.hpp"

namespace spanattr {

struct EvalRecord {
  std::string instance_id;
  Range span;
  std::string method;
  std::optional<std::size_t> predicted;
  std::vector<std::size_t> cited;
  std::optional<std::size_t> gold;
  std::vector<double> drops;  // per-passage log-prob drop; empty when unknown

  /// Drop of the predicted passage; no prediction removes nothing.
  std::optional<double> predicted_drop() const {
    if (drops.empty()) return std::nullopt;
    return predicted ? drops.at(*predicted) : 0.0;
  }
};

/// 100 * correct / total. Every record must carry a gold passage.
inline double accuracy(std::span<const EvalRecord> records) {
  if (records.empty()) throw ArgumentError("accuracy of an empty record set");
  std::size_t correct = 0;
  for (const auto& r : records) {
    if (!r.gold) throw ArgumentError("record for '" + r.instance_id + "' has no gold passage");
    if (r.predicted && *r.predicted == *r.gold) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(records.size());
}

inline double log_prob_drop(const DropEntry& e, std::size_t passage) {
  if (passage >= e.log_p_ablated.size()) {
    throw ArgumentError("drop table for '" + e.instance_id + "' has no passage " + std::to_string(passage));
  }
  return e.log_p_full - e.log_p_ablated[passage];
}

inline std::vector<double> passage_drops(const DropEntry& e) {
  std::vector<double> out(e.log_p_ablated.size());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = log_prob_drop(e, p);
  return out;
}

struct OracleDrop {
  std::size_t passage = 0;
  double drop = 0.0;
};

/// Passage with the largest drop; ties to the lowest index.
inline OracleDrop oracle_drop(const DropEntry& e) {
  if (e.log_p_ablated.empty()) throw ArgumentError("drop table for '" + e.instance_id + "' is empty");
  OracleDrop best{0, log_prob_drop(e, 0)};
  for (std::size_t p = 1; p < e.log_p_ablated.size(); ++p) {
    const double d = log_prob_drop(e, p);
    if (d > best.drop) best = {p, d};
  }
  return best;
}

inline double mean_oracle_drop(std::span<const DropEntry> entries) {
  if (entries.empty()) throw ArgumentError("empty drop table");
  double sum = 0.0;
  for (const auto& e : entries) sum += oracle_drop(e).drop;
  return sum / static_cast<double>(entries.size());
}

/// Expected drop of a uniformly chosen passage.
inline double random_drop_exact(const DropEntry& e) {
  if (e.log_p_ablated.empty()) throw ArgumentError("drop table for '" + e.instance_id + "' is empty");
  double sum = 0.0;
  for (std::size_t p = 0; p < e.log_p_ablated.size(); ++p) sum += log_prob_drop(e, p);
  return sum / static_cast<double>(e.log_p_ablated.size());
}

inline double random_drop_exact(std::span<const DropEntry> entries) {
  if (entries.empty()) throw ArgumentError("empty drop table");
  double sum = 0.0;
  for (const auto& e : entries) sum += random_drop_exact(e);
  return sum / static_cast<double>(entries.size());
}

inline constexpr std::array<std::uint64_t, 3> kDefaultSeeds = {0, 1, 2};

/// One seeded run: a uniform passage per record, mean drop over records.
inline double random_drop_run(std::span<const DropEntry> entries, std::uint64_t seed) {
  if (entries.empty()) throw ArgumentError("empty drop table");
  std::mt19937_64 rng(seed);
  double sum = 0.0;
  for (const auto& e : entries) {
    if (e.log_p_ablated.empty()) throw ArgumentError("drop table for '" + e.instance_id + "' is empty");
    std::uniform_int_distribution<std::size_t> pick(0, e.log_p_ablated.size() - 1);
    sum += log_prob_drop(e, pick(rng));
  }
  return sum / static_cast<double>(entries.size());
}

/// Mean over seeded runs.
inline double random_drop(std::span<const DropEntry> entries,
                          std::span<const std::uint64_t> seeds = kDefaultSeeds) {
  if (seeds.empty()) throw ArgumentError("random_drop needs at least one seed");
  double sum = 0.0;
  for (auto s : seeds) sum += random_drop_run(entries, s);
  return sum / static_cast<double>(seeds.size());
}

/// Runs `method` on every target. Drops are attached when `drops` has an
/// entry for the target.
inline std::vector<EvalRecord> evaluate(const InstanceStore& store, std::span<const Target> targets,
                                        const DropTable* drops, Method method, const MethodConfig& cfg) {
  std::vector<EvalRecord> out;
  out.reserve(targets.size());
  for (const auto& t : targets) {
    const auto& b = store.get(t.instance_id);
    if (t.gold_passage && *t.gold_passage >= b.instance().passage_count()) {
      throw ValidationError("target for '" + t.instance_id + "' has gold passage " +
                            std::to_string(*t.gold_passage) + " out of range");
    }
    const auto res = run_method(b, method, cfg, indices_of(t.span));
    EvalRecord r;
    r.instance_id = t.instance_id;
    r.span = t.span;
    r.method = method_name(method);
    r.predicted = res.predicted;
    r.cited = res.cited;
    r.gold = t.gold_passage;
    if (drops) {
      if (const DropEntry* e = drops->find(t.instance_id, t.span)) {
        check_against(*e, b.instance());
        r.drops = passage_drops(*e);
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct EvalSummary {
  std::size_t records = 0;
  std::optional<double> accuracy;   // when every record has gold
  std::optional<double> mean_drop;  // when every record has drops
};

inline EvalSummary summarize(std::span<const EvalRecord> records) {
  EvalSummary s;
  s.records = records.size();
  if (records.empty()) return s;
  bool all_gold = true;
  bool all_drops = true;
  double drop_sum = 0.0;
  for (const auto& r : records) {
    all_gold = all_gold && r.gold.has_value();
    if (auto d = r.predicted_drop()) {
      drop_sum += *d;
    } else {
      all_drops = false;
    }
  }
  if (all_gold) s.accuracy = accuracy(records);
  if (all_drops) s.mean_drop = drop_sum / static_cast<double>(records.size());
  return s;
}

// ---------------------------------------------------------------------------
// Sweeps

inline constexpr int kReportVersion = 1;

struct SweepGrid {
  std::vector<Method> methods = {Method::kAttnUnionDep};
  std::vector<std::size_t> ks = {2};
  std::vector<Tau> taus = {Tau(2)};
  std::vector<std::optional<int>> layers = {std::nullopt};
  std::vector<std::size_t> windows = {8};
  double citation_threshold = 0.0;
  AttnVariant variant = AttnVariant::kFull;

  std::size_t size() const {
    return methods.size() * ks.size() * taus.size() * layers.size() * windows.size();
  }
};

struct SweepRow {
  Method method = Method::kAttnUnion;
  std::size_t k = 2;
  Tau tau;
  std::optional<int> layer;
  std::size_t window = 8;
  EvalSummary summary;

  MethodConfig config(double theta, AttnVariant variant) const {
    MethodConfig c;
    c.engine.k = k;
    c.engine.tau = tau;
    c.engine.citation_threshold = theta;
    c.window = window;
    c.layer = layer;
    c.variant = variant;
    return c;
  }
};

/// Evaluates every grid cell. Rows follow method, k, tau, layer, window order.
inline std::vector<SweepRow> sweep(const InstanceStore& store, std::span<const Target> targets,
                                   const DropTable* drops, const SweepGrid& grid) {
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (Method m : grid.methods) {
    for (std::size_t k : grid.ks) {
      for (Tau tau : grid.taus) {
        for (const auto& layer : grid.layers) {
          for (std::size_t w : grid.windows) {
            SweepRow row{m, k, tau, layer, w, {}};
            const auto cfg = row.config(grid.citation_threshold, grid.variant);
            cfg.engine.validate();
            const auto records = evaluate(store, targets, drops, m, cfg);
            row.summary = summarize(records);
            rows.push_back(std::move(row));
          }
        }
      }
    }
  }
  return rows;
}

namespace detail {

inline std::string fmt_double(std::optional<double> v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace detail

inline const char* kSweepCsvHeader = "report_version,method,k,tau,layer,window,n_records,accuracy,mean_drop";

inline std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << kSweepCsvHeader << "\n";
  for (const auto& r : rows) {
    out << kReportVersion << "," << method_name(r.method) << "," << r.k << "," << r.tau.str() << ","
        << (r.layer ? std::to_string(*r.layer) : std::string("default")) << "," << r.window << ","
        << r.summary.records << "," << detail::fmt_double(r.summary.accuracy) << ","
        << detail::fmt_double(r.summary.mean_drop) << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Latency

struct LatencyRow {
  std::string method;
  std::size_t spans = 0;
  double cold_ms = 0.0;  // fresh caches, including sidecar loads
  double warm_ms = 0.0;  // after every span has been attributed once
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace detail

/// Mean wall-clock per target span, instances fed one by one. Cold timings
/// reopen the instance's sidecars for every span; warm timings reuse one
/// primed bundle.
inline std::vector<LatencyRow> latency_report(const fs::path& store_dir, std::span<const Target> targets,
                                              std::span<const Method> methods, const MethodConfig& cfg) {
  const InstanceStore index(store_dir);
  std::map<std::string, std::vector<const Target*>> by_instance;
  for (const auto& t : targets) by_instance[t.instance_id].push_back(&t);

  std::vector<LatencyRow> rows;
  for (Method m : methods) {
    LatencyRow row;
    row.method = method_name(m);
    double cold = 0.0;
    double warm = 0.0;
    for (const auto& [id, ts] : by_instance) {
      const auto& proto = index.get(id);
      for (const Target* t : ts) {
        auto fresh = proto.fresh();
        const auto t0 = detail::Clock::now();
        (void)run_method(*fresh, m, cfg, indices_of(t->span));
        cold += detail::ms_since(t0);
      }
      auto shared = proto.fresh();
      for (const Target* t : ts) (void)run_method(*shared, m, cfg, indices_of(t->span));
      for (const Target* t : ts) {
        const auto t0 = detail::Clock::now();
        (void)run_method(*shared, m, cfg, indices_of(t->span));
        warm += detail::ms_since(t0);
      }
      row.spans += ts.size();
    }
    if (row.spans > 0) {
      row.cold_ms = cold / static_cast<double>(row.spans);
      row.warm_ms = warm / static_cast<double>(row.spans);
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string latency_csv(std::span<const LatencyRow> rows) {
  std::ostringstream out;
  out << "report_version,method,spans,cold_ms_per_span,warm_ms_per_span\n";
  for (const auto& r : rows) {
    out << kReportVersion << "," << r.method << "," << r.spans << "," << detail::fmt_double(r.cold_ms) << ","
        << detail::fmt_double(r.warm_ms) << "\n";
  }
  return out.str();
}

struct ReuseTiming {
  double cold_ms = 0.0;
  double warm_ms = 0.0;
  std::size_t cold_row_scans = 0;
  std::size_t warm_row_scans = 0;
};

/// In-memory reuse measurement for one instance: cold spans use a fresh
/// engine each, warm spans hit an engine that has seen every span once.
inline ReuseTiming measure_reuse(std::shared_ptr<const TokenizedInstance> inst,
                                 std::shared_ptr<const SimilarityMatrix> sim, const EngineConfig& cfg,
                                 std::span<const Range> spans) {
  if (spans.empty()) throw ArgumentError("measure_reuse needs at least one span");
  ReuseTiming out;
  for (const auto& s : spans) {
    const auto t0 = detail::Clock::now();
    Attributor fresh(inst, sim, cfg);
    (void)fresh.attribute(s);
    out.cold_ms += detail::ms_since(t0);
    out.cold_row_scans += fresh.row_scans();
  }
  Attributor shared(inst, sim, cfg);
  for (const auto& s : spans) (void)shared.attribute(s);
  const std::size_t primed = shared.row_scans();
  for (const auto& s : spans) {
    const auto t0 = detail::Clock::now();
    (void)shared.attribute(s);
    out.warm_ms += detail::ms_since(t0);
  }
  out.warm_row_scans = shared.row_scans() - primed;
  out.cold_ms /= static_cast<double>(spans.size());
  out.warm_ms /= static_cast<double>(spans.size());
  return out;
}

// ---------------------------------------------------------------------------
// Citations

struct CitationLine {
  std::string instance_id;
  std::size_t statement_index = 0;
  std::string statement;
  std::vector<std::size_t> citations;  // 0-based passage indices
};

/// Statement text of response sentence `s`, from the token character spans.
inline std::string sentence_text(const TokenizedInstance& inst, std::size_t s) {
  const Range toks = inst.sentence_boundaries.at(s);
  const auto& cs = inst.response_char_spans;
  const std::size_t b = cs[toks.begin].begin;
  const std::size_t e = cs[toks.end - 1].end;
  return inst.response_text.substr(b, e - b);
}

/// One citation line per response sentence of every instance in the store.
inline std::vector<CitationLine> cite_statements(const InstanceStore& store, Method method,
                                                 const MethodConfig& cfg) {
  std::vector<CitationLine> out;
  for (const auto& id : store.ids()) {
    const auto& b = store.get(id);
    const auto& inst = b.instance();
    for (std::size_t s = 0; s < inst.sentence_boundaries.size(); ++s) {
      const auto res = run_method(b, method, cfg, indices_of(inst.sentence_boundaries[s]));
      out.push_back({id, s, sentence_text(inst, s), res.cited});
    }
  }
  return out;
}

/// JSON Lines; `output` carries the statement with 1-based [n] markers.
inline std::string citations_jsonl(std::span<const CitationLine> lines) {
  std::string out;
  for (const auto& l : lines) {
    std::string marked = l.statement;
    for (std::size_t p : l.citations) marked += "[" + std::to_string(p + 1) + "]";
    json j = {{"instance_id", l.instance_id},
              {"statement_index", l.statement_index},
              {"statement", l.statement},
              {"citations", l.citations},
              {"output", marked}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace spanattr
