// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <sstream>

#include "oracles.hpp"
#include "spanattr/eval.hpp"
#include "spanattr/fixtures.hpp"
#include "test_util.hpp"

using namespace spanattr;
using Catch::Approx;
using testutil::TempDir;

namespace {

EvalRecord record(std::optional<std::size_t> predicted, std::optional<std::size_t> gold) {
  EvalRecord r;
  r.instance_id = "x";
  r.predicted = predicted;
  r.gold = gold;
  return r;
}

DropEntry entry(double full, std::vector<double> ablated) { return {"x", {0, 1}, full, std::move(ablated)}; }

// Prediction from scratch: sparse union over the oracle maps, passage sums,
// first maximum.
std::optional<std::size_t> oracle_prediction(const fixtures::Fig1& fx, const Range& span,
                                             const std::function<std::vector<std::size_t>(std::size_t)>& elems) {
  const auto& inst = fx.instance;
  const auto rows = testutil::rows_of(attention_average(fx.attention).values);
  const auto ev = oracle::span_evidence(rows, inst.doc_count(), inst.doc_offset, 2, 2, indices_of(span), elems);
  if (ev.empty()) return std::nullopt;
  std::vector<double> sums(inst.passage_count(), 0.0);
  for (const auto& [j, w] : ev) sums[inst.passage_of(j)] += w;
  return static_cast<std::size_t>(std::max_element(sums.begin(), sums.end()) - sums.begin());
}

}  // namespace

TEST_CASE("accuracy", "[eval]") {
  std::vector<EvalRecord> rs = {record(0, 0), record(1, 1), record(1, 1), record(0, 0)};
  CHECK(accuracy(rs) == 100.0);
  rs[2].predicted = 0;
  CHECK(accuracy(rs) == 75.0);
  std::reverse(rs.begin(), rs.end());
  CHECK(accuracy(rs) == 75.0);
  rs[0].predicted = std::nullopt;
  CHECK(accuracy(rs) == 50.0);
  CHECK_THROWS_AS(accuracy(std::vector<EvalRecord>{}), ArgumentError);
  rs[1].gold = std::nullopt;
  CHECK_THROWS(accuracy(rs));
}

TEST_CASE("log-probability drop", "[eval]") {
  CHECK(log_prob_drop(entry(-2.0, {-2.0}), 0) == 0.0);
  CHECK(log_prob_drop(entry(-2.0, {-3.5}), 0) == 1.5);
  CHECK_THROWS(log_prob_drop(entry(-2.0, {-3.5}), 1));
  const auto e = entry(-1.0, {-1.5, -4.0, -1.0});
  const auto batch = passage_drops(e);
  for (std::size_t p = 0; p < 3; ++p) CHECK(batch[p] == log_prob_drop(e, p));
}

TEST_CASE("oracle drop takes the first maximum", "[eval]") {
  const auto o = oracle_drop(entry(0.0, {-0.1, -0.9, -0.9}));
  CHECK(o.passage == 1);
  CHECK(o.drop == 0.9);
  CHECK(oracle_drop(entry(-1.0, {-2.0})).passage == 0);
  CHECK_THROWS_AS(oracle_drop(entry(-1.0, {})), ArgumentError);
}

TEST_CASE("random and oracle drops bound each other", "[eval]") {
  fixtures::Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<DropEntry> table;
    const std::size_t rows = fixtures::uniform_int(rng, 1, 6);
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> ablated(fixtures::uniform_int(rng, 1, 5));
      for (double& v : ablated) v = -5.0 * fixtures::uniform01(rng);
      table.push_back(entry(-1.0 * fixtures::uniform01(rng), ablated));
    }
    double oracle_sum = 0.0;
    double min_sum = 0.0;
    for (const auto& e : table) {
      const auto o = oracle_drop(e);
      double scan_best = -1e300;
      std::size_t scan_arg = 0;
      double lo = 1e300;
      for (std::size_t p = 0; p < e.log_p_ablated.size(); ++p) {
        const double d = log_prob_drop(e, p);
        CHECK(o.drop >= d);
        if (d > scan_best) {
          scan_best = d;
          scan_arg = p;
        }
        lo = std::min(lo, d);
      }
      CHECK(o.passage == scan_arg);
      CHECK(random_drop_exact(e) <= o.drop + 1e-12);
      oracle_sum += o.drop;
      min_sum += lo;
    }
    const double n = static_cast<double>(table.size());
    CHECK(mean_oracle_drop(table) == Approx(oracle_sum / n));
    CHECK(random_drop_exact(table) <= mean_oracle_drop(table) + 1e-12);
    const double seeded = random_drop(table);
    CHECK(seeded <= oracle_sum / n + 1e-12);
    CHECK(seeded >= min_sum / n - 1e-12);
    CHECK(random_drop(table) == seeded);
    CHECK(random_drop_run(table, 5) == random_drop_run(table, 5));
  }
}

TEST_CASE("random drop on a single passage and exact expectation", "[eval]") {
  const std::vector<DropEntry> one = {entry(-1.0, {-2.25})};
  CHECK(random_drop(one) == 1.25);
  CHECK(random_drop_exact(one) == 1.25);
  const auto e = entry(0.0, {-1.0, -2.0, -6.0});
  CHECK(random_drop_exact(e) == 3.0);
  CHECK_THROWS_AS(random_drop(one, std::vector<std::uint64_t>{}), ArgumentError);
}

TEST_CASE("missing prediction removes nothing", "[eval]") {
  auto r = record(std::nullopt, 0);
  CHECK_FALSE(r.predicted_drop().has_value());
  r.drops = {0.5, 2.0};
  CHECK(r.predicted_drop() == 0.0);
  r.predicted = 1;
  CHECK(r.predicted_drop() == 2.0);
}

TEST_CASE("fig1 evaluation agrees with recomputed predictions", "[eval]") {
  TempDir dir;
  fixtures::write_fig1(dir.path());
  const InstanceStore store(dir.path());
  const auto fx = fixtures::fig1();
  const auto drops = load_drops(dir / "drops.json");

  const auto plain = evaluate(store, fx.targets, &drops, Method::kAttnUnion, MethodConfig{});
  std::size_t correct = 0;
  for (std::size_t t = 0; t < fx.targets.size(); ++t) {
    const auto want = oracle_prediction(fx, fx.targets[t].span, [](std::size_t i) {
      return std::vector<std::size_t>{i};
    });
    CHECK(plain[t].predicted == want);
    if (want == fx.targets[t].gold_passage) ++correct;
  }
  const auto s = summarize(plain);
  CHECK(s.records == 4);
  CHECK(*s.accuracy == Approx(100.0 * static_cast<double>(correct) / 4.0));
  CHECK(*s.accuracy == 75.0);
  // drops 0.3 (wrong pick) + 2.8 + 2.4 + 1.8 over four targets
  CHECK(*s.mean_drop == Approx(1.825));

  const auto dep = evaluate(store, fx.targets, &drops, Method::kAttnUnionDep, MethodConfig{});
  for (std::size_t t = 0; t < fx.targets.size(); ++t) {
    const auto want = oracle_prediction(fx, fx.targets[t].span, [&](std::size_t i) {
      return atomic_fact_elements(fx.depparse, i);
    });
    CHECK(dep[t].predicted == want);
  }
  CHECK(*summarize(dep).accuracy == 100.0);
  CHECK(*summarize(dep).mean_drop == Approx(mean_oracle_drop(drops.entries)));
  CHECK(random_drop_exact(drops.entries) == Approx(1.35));

  const auto no_drops = summarize(evaluate(store, fx.targets, nullptr, Method::kHssAvg, MethodConfig{}));
  CHECK_FALSE(no_drops.mean_drop.has_value());
  CHECK(no_drops.accuracy.has_value());
}

TEST_CASE("sweep cells equal standalone evaluations", "[eval]") {
  TempDir dir;
  fixtures::write_fig1(dir.path());
  const InstanceStore store(dir.path());
  const auto fx = fixtures::fig1();
  const auto drops = load_drops(dir / "drops.json");

  SweepGrid one;
  const auto single = sweep(store, fx.targets, &drops, one);
  REQUIRE(single.size() == 1);
  MethodConfig base;
  base.engine.k = 2;
  const auto direct = summarize(evaluate(store, fx.targets, &drops, Method::kAttnUnionDep, base));
  CHECK(single[0].summary.accuracy == direct.accuracy);
  CHECK(single[0].summary.mean_drop == direct.mean_drop);

  SweepGrid grid;
  grid.methods = {Method::kAttnUnion, Method::kHssAvg};
  grid.ks = {1, 3};
  grid.taus = {Tau(1), Tau::infinite()};
  grid.layers = {std::nullopt, 4};
  grid.windows = {4};
  const auto rows = sweep(store, fx.targets, &drops, grid);
  REQUIRE(rows.size() == grid.size());
  CHECK(rows.size() == 16);
  CHECK(rows[0].method == Method::kAttnUnion);
  CHECK(rows[0].k == 1);
  CHECK(rows[1].layer == 4);
  CHECK(rows[2].tau.is_infinite());
  CHECK(rows[8].method == Method::kHssAvg);
  for (const auto& r : rows) {
    const auto cfg = r.config(grid.citation_threshold, grid.variant);
    const auto alone = summarize(evaluate(store, fx.targets, &drops, r.method, cfg));
    CHECK(r.summary.accuracy == alone.accuracy);
    CHECK(r.summary.mean_drop == alone.mean_drop);
  }

  const auto csv = sweep_csv(rows);
  CHECK(csv == sweep_csv(sweep(store, fx.targets, &drops, grid)));
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header == "report_version,method,k,tau,layer,window,n_records,accuracy,mean_drop");
  std::string first;
  std::getline(lines, first);
  CHECK(first.rfind("1,attn-union,1,1,default,4,4,", 0) == 0);
  CHECK(csv.find(",inf,4,4,") != std::string::npos);
}

TEST_CASE("latency report", "[eval]") {
  TempDir dir;
  fixtures::write_fig1(dir.path());
  const auto fx = fixtures::fig1();
  const std::vector<Method> one = {Method::kAttnUnion};
  const auto rows = latency_report(dir.path(), fx.targets, one, MethodConfig{});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].method == "attn-union");
  CHECK(rows[0].spans == 4);
  CHECK(rows[0].cold_ms >= 0.0);
  const std::vector<Method> two = {Method::kAttnUnionDep, Method::kHssAvg};
  const auto more = latency_report(dir.path(), fx.targets, two, MethodConfig{});
  CHECK(more.size() == 2);
  const auto csv = latency_csv(more);
  CHECK(csv.rfind("report_version,method,spans,cold_ms_per_span,warm_ms_per_span\n1,attn-union-dep,4,", 0) == 0);
}

TEST_CASE("warm reuse scans no rows", "[eval]") {
  const auto syn = fixtures::synthetic(3, 1024, 32, 4);
  auto inst = std::make_shared<const TokenizedInstance>(syn.instance);
  auto sim = std::make_shared<const SimilarityMatrix>(syn.similarity);
  fixtures::Rng rng(2);
  const auto spans = fixtures::random_spans(rng, 32, 20, 6);
  const auto t = measure_reuse(inst, sim, EngineConfig{}, spans);
  std::size_t tokens = 0;
  for (const auto& s : spans) tokens += s.size();
  CHECK(t.cold_row_scans == tokens);
  CHECK(t.warm_row_scans == 0);
}

TEST_CASE("citations per statement", "[eval]") {
  TempDir dir;
  fixtures::write_fig1(dir.path());
  const InstanceStore store(dir.path());
  const auto lines = cite_statements(store, Method::kAttnUnion, MethodConfig{});
  REQUIRE(lines.size() == 1);
  CHECK(lines[0].statement ==
        "The company earned one million dollars and two million dollars in 2012 and 2013, respectively.");
  const auto res = run_method(store.get("fig1"), Method::kAttnUnion, MethodConfig{}, indices_of(Range{0, 17}));
  CHECK(lines[0].citations == res.cited);

  std::vector<CitationLine> fake = {{"a", 0, "Hello.", {0, 2}}, {"a", 1, "Bye.", {}}};
  const auto text = citations_jsonl(fake);
  std::istringstream in(text);
  std::string l1;
  std::string l2;
  std::getline(in, l1);
  std::getline(in, l2);
  const auto j1 = json::parse(l1);
  CHECK(j1["instance_id"] == "a");
  CHECK(j1["statement_index"] == 0);
  CHECK(j1["citations"] == json::array({0, 2}));
  CHECK(j1["output"] == "Hello.[1][3]");
  CHECK(json::parse(l2)["output"] == "Bye.");
}
