// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <set>
#include <thread>

#include "oracles.hpp"
#include "spanattr/attribution.hpp"
#include "spanattr/fixtures.hpp"
#include "spanattr/similarity.hpp"
#include "test_util.hpp"

using namespace spanattr;
using Catch::Approx;

namespace {

oracle::Sparse to_sparse(const TokenMap& m) {
  oracle::Sparse out;
  for (const auto& e : m) out[e.index] = e.score;
  return out;
}

TokenMap from_sparse(const oracle::Sparse& s) {
  TokenMap out;
  for (const auto& [j, w] : s) out.push_back({j, w});
  return out;
}

EvidenceSet evidence_of(const std::vector<std::size_t>& support, const TokenizedInstance& inst) {
  EvidenceSet ev;
  for (std::size_t j : support) ev.evidence.push_back({j, 1.0});
  ev.passage_scores = passage_rollup(ev.evidence, inst);
  return ev;
}

std::vector<std::size_t> support_of(const EvidenceSet& ev) {
  std::vector<std::size_t> out;
  for (const auto& e : ev.evidence) out.push_back(e.index);
  return out;
}

constexpr std::size_t kNoFilter = std::numeric_limits<std::size_t>::max();

}  // namespace

TEST_CASE("top-k over the full row, then document columns", "[attribution]") {
  const auto inst = testutil::make_instance({3}, 2, 1);
  EngineConfig cfg;
  SECTION("documents win") {
    const std::vector<double> row = {0.1, 0.5, 0.2, 0.05, 0.15};
    const oracle::Sparse expected = {{1, 0.5}, {2, 0.2}};
    REQUIRE(oracle::token_evidence(row, 3, 0, 2) == expected);
    const auto s = testutil::make_similarity(1, 5, row);
    CHECK(to_sparse(token_attribution(s, 0, inst, cfg)) == expected);
  }
  SECTION("question columns crowd documents out") {
    const std::vector<double> row = {0.1, 0.2, 0.05, 0.6, 0.5};
    REQUIRE(oracle::token_evidence(row, 3, 0, 2).empty());
    const auto s = testutil::make_similarity(1, 5, row);
    CHECK(token_attribution(s, 0, inst, cfg).empty());
  }
  SECTION("k saturating the row keeps every positive document column") {
    const std::vector<double> row = {0.1, 0.0, 0.2, 0.05, 0.15};
    cfg.k = 9;
    const auto s = testutil::make_similarity(1, 5, row);
    CHECK(to_sparse(token_attribution(s, 0, inst, cfg)) == oracle::Sparse{{0, 0.1}, {2, 0.2}});
  }
  SECTION("ties at the k-th value are all kept") {
    const std::vector<double> row = {0.5, 0.3, 0.3, 0.1, 0.3};
    const auto s = testutil::make_similarity(1, 5, row);
    CHECK(to_sparse(token_attribution(s, 0, inst, cfg)) == oracle::Sparse{{0, 0.5}, {1, 0.3}, {2, 0.3}});
  }
  SECTION("non-positive scores never enter") {
    const std::vector<double> row = {-0.1, -0.5, 0.0, -0.2, -0.3};
    const auto s = testutil::make_similarity(1, 5, row);
    CHECK(token_attribution(s, 0, inst, cfg).empty());
  }
}

TEST_CASE("doc offset shifts the document columns", "[attribution]") {
  // prompt: q0 q1 q2 | d0 d1 d2 | q3
  const auto inst = testutil::make_instance({3}, 4, 1, 3);
  const std::vector<double> row = {0.9, 0.0, 0.0, 0.1, 0.4, 0.3, 0.2};
  const auto s = testutil::make_similarity(1, 7, row, 3);
  const oracle::Sparse expected = {{1, 0.4}};
  REQUIRE(oracle::token_evidence(row, 3, 3, 2) == expected);
  CHECK(to_sparse(token_attribution(s, 0, inst, EngineConfig{})) == expected);
}

TEST_CASE("token attribution matches the sort oracle on random cases", "[attribution]") {
  fixtures::Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const auto rc = fixtures::random_case(rng);
    const auto& inst = rc.instance;
    EngineConfig cfg;
    cfg.k = fixtures::uniform_int(rng, 1, 5);
    const auto rows = testutil::rows_of(rc.similarity.values);
    for (std::size_t i = 0; i < inst.response_count(); ++i) {
      const auto got = token_attribution(rc.similarity, i, inst, cfg);
      CHECK(to_sparse(got) == oracle::token_evidence(rows[i], inst.doc_count(), inst.doc_offset, cfg.k));
      for (const auto& e : got) CHECK(e.score == rc.similarity.values(i, e.index + inst.doc_offset));
    }
  }
}

TEST_CASE("union sums scores over the span", "[attribution]") {
  const auto inst = testutil::make_instance({4, 4}, 0, 2);
  SECTION("overlap") {
    const std::vector<TokenMap> maps = {{{2, 0.5}, {3, 0.2}}, {{3, 0.1}, {5, 0.4}}};
    const auto ev = aggregate_union(maps, {0, 1}, inst);
    REQUIRE(ev.evidence.size() == 3);
    CHECK(ev.evidence[0].index == 2);
    CHECK(ev.evidence[0].score == 0.5);
    CHECK(ev.evidence[1].index == 3);
    CHECK(ev.evidence[1].score == Approx(0.3).epsilon(1e-15));
    CHECK(ev.evidence[2].index == 5);
    CHECK(ev.evidence[2].score == 0.4);
    CHECK(ev.passage_scores[0] == Approx(0.8));
    CHECK(ev.passage_scores[1] == Approx(0.4));
    CHECK(ev.passage_scores[0] + ev.passage_scores[1] == Approx(ev.total()));
  }
  SECTION("single map") {
    const std::vector<TokenMap> maps = {{{1, 0.25}, {6, 0.5}}};
    CHECK(aggregate_union(maps, {0}, inst).evidence == maps[0]);
  }
  SECTION("disjoint supports concatenate") {
    const std::vector<TokenMap> maps = {{{1, 0.25}}, {{6, 0.5}}};
    const auto ev = aggregate_union(maps, {0, 1}, inst);
    CHECK(ev.evidence == TokenMap{{1, 0.25}, {6, 0.5}});
  }
  SECTION("empty span") {
    CHECK_THROWS_AS(aggregate_union(std::vector<TokenMap>{}, {}, inst), ArgumentError);
  }
}

TEST_CASE("isolated evidence tokens are removed", "[attribution]") {
  const auto inst = testutil::make_instance({30}, 0, 1);
  CHECK(support_of(remove_isolated(evidence_of({4, 5, 20}, inst), Tau(2), inst)) ==
        std::vector<std::size_t>{4, 5});
  CHECK(remove_isolated(evidence_of({7}, inst), Tau(2), inst).empty());
  const auto ev = evidence_of({1, 9, 20}, inst);
  CHECK(remove_isolated(ev, Tau::infinite(), inst) == ev);
  // distance exactly tau is near, tau + 1 is not
  CHECK(support_of(remove_isolated(evidence_of({3, 5, 8}, inst), Tau(2), inst)) == std::vector<std::size_t>{3, 5});
}

TEST_CASE("isolation filter matches pairwise oracle and is idempotent", "[attribution]") {
  fixtures::Rng rng(99);
  const auto inst = testutil::make_instance({25, 25}, 0, 1);
  for (int trial = 0; trial < 300; ++trial) {
    oracle::Sparse in;
    const std::size_t count = fixtures::uniform_int(rng, 0, 12);
    for (std::size_t t = 0; t < count; ++t) in[fixtures::uniform_int(rng, 0, 49)] = 0.5;
    const std::size_t tau = fixtures::uniform_int(rng, 1, 4);
    EvidenceSet ev;
    ev.evidence = from_sparse(in);
    ev.passage_scores = passage_rollup(ev.evidence, inst);
    const auto once = remove_isolated(ev, Tau(tau), inst);
    CHECK(to_sparse(once.evidence) == oracle::drop_isolated(in, tau));
    CHECK(remove_isolated(once, Tau(tau), inst) == once);
  }
}

TEST_CASE("span attribution equals brute-force recomputation", "[attribution]") {
  fixtures::Rng rng(7);
  for (int trial = 0; trial < 250; ++trial) {
    const auto rc = fixtures::random_case(rng);
    auto inst = std::make_shared<const TokenizedInstance>(rc.instance);
    auto sim = std::make_shared<const SimilarityMatrix>(rc.similarity);
    const auto rows = testutil::rows_of(rc.similarity.values);
    const std::size_t n = inst->response_count();
    for (Tau tau : {Tau::infinite(), Tau(2)}) {
      EngineConfig cfg;
      cfg.tau = tau;
      Attributor engine(inst, sim, cfg);
      const auto spans = fixtures::random_spans(rng, n, 3, n);
      for (const auto& span : spans) {
        const auto got = engine.attribute(span);
        const auto want = oracle::span_evidence(rows, inst->doc_count(), inst->doc_offset, cfg.k,
                                                tau.is_infinite() ? kNoFilter : tau.value(), indices_of(span),
                                                [](std::size_t i) { return std::vector<std::size_t>{i}; });
        REQUIRE(got.evidence.size() == want.size());
        auto it = want.begin();
        for (const auto& e : got.evidence) {
          CHECK(e.index == it->first);
          CHECK(e.score == Approx(it->second).margin(1e-9));
          ++it;
        }
        double total = 0;
        for (double p : got.passage_scores) total += p;
        CHECK(total == Approx(got.total()).margin(1e-9));
      }
    }
  }
}

TEST_CASE("whole-response span without filtering is the union of all maps", "[attribution]") {
  fixtures::Rng rng(3);
  const auto rc = fixtures::random_case(rng);
  auto inst = std::make_shared<const TokenizedInstance>(rc.instance);
  EngineConfig cfg;
  cfg.tau = Tau::infinite();
  Attributor engine(inst, std::make_shared<const SimilarityMatrix>(rc.similarity), cfg);
  std::vector<const TokenMap*> all;
  for (std::size_t i = 0; i < inst->response_count(); ++i) all.push_back(&engine.token_map(i));
  CHECK(engine.attribute(Range{0, inst->response_count()}).evidence == sum_maps(all));
}

TEST_CASE("warm spans reuse memoized maps", "[attribution]") {
  fixtures::Rng rng(17);
  const auto rc = fixtures::random_case(rng, 20, 50);
  auto inst = std::make_shared<const TokenizedInstance>(rc.instance);
  auto sim = std::make_shared<const SimilarityMatrix>(rc.similarity);
  const std::size_t n = inst->response_count();
  Attributor warm(inst, sim, EngineConfig{});
  for (const auto& span : fixtures::random_spans(rng, n, 30, n)) {
    Attributor cold(inst, sim, EngineConfig{});
    const auto want = cold.attribute(span);
    CHECK(cold.row_scans() == span.size());
    (void)warm.attribute(span);
    const auto before = warm.row_scans();
    CHECK(warm.attribute(span) == want);
    CHECK(warm.row_scans() == before);
  }
  Attributor fresh(inst, sim, EngineConfig{});
  (void)fresh.attribute(Range{0, n});
  const auto scans = fresh.row_scans();
  CHECK(scans == n);
  for (const auto& span : fixtures::random_spans(rng, n, 20, n)) (void)fresh.attribute(span);
  CHECK(fresh.row_scans() == scans);
}

TEST_CASE("enlarging a span never shrinks unfiltered support", "[attribution]") {
  fixtures::Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const auto rc = fixtures::random_case(rng);
    auto inst = std::make_shared<const TokenizedInstance>(rc.instance);
    EngineConfig cfg;
    cfg.tau = Tau::infinite();
    Attributor engine(inst, std::make_shared<const SimilarityMatrix>(rc.similarity), cfg);
    const std::size_t n = inst->response_count();
    const auto span = fixtures::random_spans(rng, n, 1, n)[0];
    const Range bigger{span.begin > 0 ? span.begin - 1 : 0, std::min(n, span.end + 1)};
    const auto small = support_of(engine.attribute(span));
    const auto large = support_of(engine.attribute(bigger));
    CHECK(std::includes(large.begin(), large.end(), small.begin(), small.end()));
  }
}

TEST_CASE("predictions ignore positive rescaling of S", "[attribution]") {
  fixtures::Rng rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    auto rc = fixtures::random_case(rng);
    auto inst = std::make_shared<const TokenizedInstance>(rc.instance);
    auto scaled = rc.similarity;
    // powers of two keep exact ties exact
    const double f = std::ldexp(1.0, static_cast<int>(fixtures::uniform_int(rng, 0, 12)) - 6);
    for (double& v : scaled.values.values()) v *= f;
    Attributor a(inst, std::make_shared<const SimilarityMatrix>(rc.similarity), EngineConfig{});
    Attributor b(inst, std::make_shared<const SimilarityMatrix>(scaled), EngineConfig{});
    const Range all{0, inst->response_count()};
    const auto ea = a.attribute(all);
    const auto eb = b.attribute(all);
    CHECK(support_of(ea) == support_of(eb));
    CHECK(predict_passage(ea) == predict_passage(eb));
  }
}

TEST_CASE("passage prediction and citation", "[attribution]") {
  EvidenceSet ev;
  ev.evidence = {{0, 1.0}};
  ev.passage_scores = {0.3, 0.9};
  CHECK(predict_passage(ev) == 1u);
  ev.passage_scores = {0.5, 0.5};
  CHECK(predict_passage(ev) == 0u);
  ev.evidence.clear();
  ev.passage_scores = {0.0, 0.0};
  CHECK_FALSE(predict_passage(ev).has_value());

  const std::vector<double> s1 = {0.0, 0.2, 0.7};
  CHECK(cite_passages(s1, 0.0) == std::vector<std::size_t>{1, 2});
  const std::vector<double> s2 = {0.5, 0.6};
  CHECK(cite_passages(s2, 0.55) == std::vector<std::size_t>{1});
  const std::vector<double> s3 = {0.0, 0.0};
  CHECK(cite_passages(s3, 0.0).empty());
}

TEST_CASE("concentrating the target rows on passage 1 makes it win", "[attribution]") {
  const auto fx = fixtures::fig1();
  auto inst = std::make_shared<const TokenizedInstance>(fx.instance);
  SimilarityMatrix s;
  s.values = DenseMatrix(inst->response_count(), inst->prompt_length());
  s.doc_offset = inst->doc_offset;
  for (double& v : s.values.values()) v = 0.01;
  // "one million dollars" rows put their mass on "$1,000,000" (doc 12, 13)
  for (std::size_t i = 3; i < 6; ++i) {
    s.values(i, 12 + inst->doc_offset) = 0.4;
    s.values(i, 13 + inst->doc_offset) = 0.3;
  }
  Attributor engine(inst, std::make_shared<const SimilarityMatrix>(s), EngineConfig{});
  const auto ev = engine.attribute(Range{3, 6});
  CHECK(ev.passage_scores[0] == 0.0);
  CHECK(ev.passage_scores[1] == Approx(3 * 0.7));
  CHECK(predict_passage(ev) == 1u);
}

TEST_CASE("concurrent spans share one compute-once table", "[attribution]") {
  const auto syn = fixtures::synthetic(5, 2048, 48, 8);
  auto inst = std::make_shared<const TokenizedInstance>(syn.instance);
  auto sim = std::make_shared<const SimilarityMatrix>(syn.similarity);
  Attributor shared(inst, sim, EngineConfig{});
  fixtures::Rng rng(1);
  const auto spans = fixtures::random_spans(rng, inst->response_count(), 64, 8);
  std::vector<EvidenceSet> want;
  {
    Attributor seq(inst, sim, EngineConfig{});
    for (const auto& s : spans) want.push_back(seq.attribute(s));
  }
  std::vector<EvidenceSet> got(spans.size());
  std::vector<std::thread> pool;
  for (int t = 0; t < 4; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t s = static_cast<std::size_t>(t); s < spans.size(); s += 4) got[s] = shared.attribute(spans[s]);
    });
  }
  for (auto& th : pool) th.join();
  CHECK(got == want);
  std::set<std::size_t> touched;
  for (const auto& s : spans) {
    for (std::size_t i = s.begin; i < s.end; ++i) touched.insert(i);
  }
  CHECK(shared.row_scans() == touched.size());
}

TEST_CASE("engine configuration is validated", "[attribution]") {
  EngineConfig cfg;
  cfg.k = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  CHECK(Tau::parse("inf").is_infinite());
  CHECK(Tau::parse("3").value() == 3);
  CHECK_THROWS_AS(Tau::parse("0"), ArgumentError);
  CHECK_THROWS_AS(Tau::parse("two"), ArgumentError);
  const auto inst = std::make_shared<const TokenizedInstance>(testutil::make_instance({3}, 2, 1));
  auto bad = std::make_shared<const SimilarityMatrix>(testutil::make_similarity(1, 4, {0, 0, 0, 0}));
  CHECK_THROWS_AS(Attributor(inst, bad, EngineConfig{}), ShapeError);
  auto ok = std::make_shared<const SimilarityMatrix>(testutil::make_similarity(1, 5, {0, 0, 0, 0, 0}));
  Attributor engine(inst, ok, EngineConfig{});
  CHECK_THROWS_AS(engine.attribute(Range{0, 2}), ArgumentError);
  CHECK_THROWS_AS(engine.attribute(Range{0, 0}), ArgumentError);
}
