// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "spanattr/attribution.hpp"
#include "spanattr/baselines.hpp"
#include "spanattr/depaug.hpp"
#include "spanattr/eval.hpp"
#include "spanattr/fixtures.hpp"
#include "spanattr/http.hpp"
#include "spanattr/service.hpp"
#include "spanattr/similarity.hpp"
#include "test_util.hpp"

using namespace spanattr;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  std::size_t checks() const { return checks_; }
  bool ok() const { return failed_ == 0; }
  std::string failures() const {
    std::string out = std::to_string(failed_) + " failed:";
    for (const auto& f : failures_) out += " [" + f + "]";
    return out;
  }

 private:
  std::size_t checks_ = 0;
  std::size_t failed_ = 0;
  std::vector<std::string> failures_;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

oracle::Sparse to_sparse(const TokenMap& m) {
  oracle::Sparse out;
  for (const auto& e : m) out[e.index] = e.score;
  return out;
}

std::vector<std::vector<std::size_t>> groups_of(const std::vector<Coordination>& cs) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& c : cs) out.push_back(c.members);
  return out;
}

// ---------------------------------------------------------------------------

Outcome topk_oracle() {
  const auto t0 = Clock::now();
  fixtures::Rng rng(20260101);
  Checker c;
  std::size_t instances = 0;
  std::size_t crowded = 0;
  std::size_t tied = 0;
  for (; instances < 250; ++instances) {
    const auto rc = fixtures::random_case(rng, 20, 50, {0, 3});
    const auto& inst = rc.instance;
    const auto rows = testutil::rows_of(rc.similarity.values);
    EngineConfig cfg;
    cfg.k = fixtures::uniform_int(rng, 1, 6);
    for (std::size_t i = 0; i < inst.response_count(); ++i) {
      const auto got = to_sparse(token_attribution(rc.similarity, i, inst, cfg));
      const auto want = oracle::token_evidence(rows[i], inst.doc_count(), inst.doc_offset, cfg.k);
      c.expect(got == want, "instance " + std::to_string(instances) + " row " + std::to_string(i));
      if (want.size() > cfg.k) ++tied;
      if (want.empty()) ++crowded;
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 5.0, "runtime " + fmt(secs) + " s");
  if (!c.ok()) return {false, c.failures()};
  return {true, std::to_string(instances) + " instances, " + std::to_string(c.checks() - 1) + " rows exact (" +
                    std::to_string(tied) + " with ties past k, " + std::to_string(crowded) + " empty), " +
                    fmt(secs) + " s"};
}

Outcome union_filter_oracle() {
  fixtures::Rng rng(77);
  Checker c;
  std::size_t spans = 0;
  std::size_t warm_extra = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto rc = fixtures::random_case(rng);
    auto inst = std::make_shared<const TokenizedInstance>(rc.instance);
    auto sim = std::make_shared<const SimilarityMatrix>(rc.similarity);
    const auto rows = testutil::rows_of(rc.similarity.values);
    const std::size_t n = inst->response_count();
    for (Tau tau : {Tau::infinite(), Tau(2)}) {
      EngineConfig cfg;
      cfg.tau = tau;
      Attributor engine(inst, sim, cfg);
      const auto batch = fixtures::random_spans(rng, n, 4, n);
      for (const auto& span : batch) {
        const auto got = engine.attribute(span);
        const auto want = oracle::span_evidence(
            rows, inst->doc_count(), inst->doc_offset, cfg.k,
            tau.is_infinite() ? std::numeric_limits<std::size_t>::max() : tau.value(), indices_of(span),
            [](std::size_t i) { return std::vector<std::size_t>{i}; });
        bool same = got.evidence.size() == want.size();
        auto it = want.begin();
        for (std::size_t x = 0; same && x < got.evidence.size(); ++x, ++it) {
          same = got.evidence[x].index == it->first && std::abs(got.evidence[x].score - it->second) <= 1e-9;
        }
        c.expect(same, "trial " + std::to_string(trial) + " tau " + tau.str());
        ++spans;
      }
      const std::size_t before = engine.row_scans();
      for (const auto& span : batch) (void)engine.attribute(span);
      warm_extra += engine.row_scans() - before;
    }
  }
  c.expect(warm_extra == 0, "warm spans scanned " + std::to_string(warm_extra) + " rows");
  if (!c.ok()) return {false, c.failures()};
  return {true, std::to_string(spans) + " spans exact within 1e-9 (tau inf and 2), 0 warm row scans"};
}

Outcome dependency_golden() {
  const auto fx = fixtures::fig1();
  const auto got = atomic_fact_elements(fx.depparse, 3);
  // The company earned one million dollars in 2012 respectively
  const std::vector<std::size_t> want = {0, 1, 2, 3, 4, 5, 10, 11, 15};
  std::ostringstream words;
  for (std::size_t t : got) words << (t == got.front() ? "" : " ") << fx.depparse.sentences[0].words[t];
  if (got != want) return {false, "got {" + words.str() + "}"};
  return {true, "A(one) = {" + words.str() + "}"};
}

Outcome coordination_dual() {
  Checker c;
  fixtures::Rng rng(500);
  std::size_t trees = 0;
  std::size_t grouped = 0;
  for (; trees < 600; ++trees) {
    const auto t = fixtures::random_tree(rng, fixtures::uniform_int(rng, 1, 18));
    const auto got = find_coordinations(t.head, t.label);
    c.expect(groups_of(got) == oracle::find_coordinations(t.head, t.label), "tree " + std::to_string(trees));
    if (!got.empty()) ++grouped;
  }

  // Fig. 6 patterns: leader "apples" (2) with conj "pears" (4); "fresh" (1)
  // precedes the first non-leader member, "market" (6) follows it.
  const std::vector<int> head = {-1, 2, 0, 4, 2, 6, 2};
  const std::vector<std::string> label = {"root", "amod", "obj", "cc", "conj", "case", "nmod"};
  const auto reformed = reform_tree(head, find_coordinations(head, label));
  c.expect(reformed[4] == 0, "non-leader member re-headed");
  c.expect(reformed[1] == 2, "upper pattern: earlier child keeps the leader");
  c.expect(reformed[6] == 0, "lower pattern: later child lifted");

  const auto fx = fixtures::fig1();
  const auto two = atomic_fact_elements(fx.depparse, 7);
  const std::vector<std::size_t> want_two = {0, 1, 2, 6, 7, 8, 9, 12, 13, 15};
  c.expect(two == want_two, "A(two)");
  const auto& sent = fx.depparse.sentences[0];
  const auto coords = find_coordinations(sent);
  const auto pr = prune_coordinations(tree_path(reform_tree(sent.head, coords), 2, 7), coords, sent.size());
  c.expect(pr.deleted[5] && pr.deleted[11] && !pr.deleted[9] && !pr.deleted[13], "two: second components kept");
  if (!c.ok()) return {false, c.failures()};
  return {true, std::to_string(trees) + " fuzzed trees equal (" + std::to_string(grouped) +
                    " with groups); both reform patterns; 'two' keeps second components"};
}

Outcome hssavg_oracle() {
  Checker c;
  fixtures::Rng rng(4242);
  std::size_t cases = 0;
  for (std::size_t W : {1u, 4u, 8u}) {
    for (int trial = 0; trial < 80; ++trial, ++cases) {
      std::vector<std::size_t> passages;
      std::size_t total = 0;
      while (total < W || passages.empty()) {
        passages.push_back(fixtures::uniform_int(rng, 1, 12));
        total += passages.back();
      }
      const std::size_t o = fixtures::uniform_int(rng, 0, 3);
      const std::size_t m = o + fixtures::uniform_int(rng, 0, 4);
      const std::size_t n = fixtures::uniform_int(rng, 1, 12);
      const auto inst = testutil::make_instance(passages, m, n, o);
      const std::size_t dim = fixtures::uniform_int(rng, 2, 10);
      HiddenStates h;
      h.prompt = DenseMatrix(total + m, dim);
      h.response = DenseMatrix(n, dim);
      h.doc_offset = o;
      for (double& v : h.prompt.values()) v = 2.0 * fixtures::uniform01(rng) - 1.0;
      for (double& v : h.response.values()) v = 2.0 * fixtures::uniform01(rng) - 1.0;
      const auto span = indices_of(fixtures::random_spans(rng, n, 1, n)[0]);
      const auto got = hss_avg(inst, h, span, W);
      const auto want = oracle::best_window(testutil::rows_of(h.prompt), testutil::rows_of(h.response), span,
                                            total, o, W);
      c.expect(got.start == want.start && std::abs(got.score - want.score) <= 1e-6, "case " + std::to_string(cases));
      auto scaled = h;
      const double f = 0.01 + 50.0 * fixtures::uniform01(rng);
      const double g = 0.01 + 50.0 * fixtures::uniform01(rng);
      for (double& v : scaled.prompt.values()) v *= f;
      for (double& v : scaled.response.values()) v *= g;
      c.expect(hss_avg(inst, scaled, span, W).start == got.start, "rescaled case " + std::to_string(cases));
    }
  }
  if (!c.ok()) return {false, c.failures()};
  return {true, std::to_string(cases) + " cases (W = 1, 4, 8) exact argbest, scores within 1e-6, rescale-invariant"};
}

Outcome eval_formulas() {
  Checker c;
  const DropEntry e{"x", {0, 1}, -2.0, {-3.5, -2.0, -2.25}};
  c.expect(log_prob_drop(e, 0) == 1.5, "drop -2.0 vs -3.5");
  c.expect(log_prob_drop(e, 1) == 0.0, "equal log-probs");
  const auto o = oracle_drop(DropEntry{"x", {0, 1}, 0.0, {-0.1, -0.9, -0.9}});
  c.expect(o.passage == 1 && o.drop == 0.9, "oracle tie");

  fixtures::Rng rng(9);
  std::size_t tables = 0;
  for (; tables < 300; ++tables) {
    std::vector<DropEntry> table;
    const std::size_t rows = fixtures::uniform_int(rng, 1, 8);
    for (std::size_t r = 0; r < rows; ++r) {
      DropEntry d{"x", {r, r + 1}, -fixtures::uniform01(rng), {}};
      d.log_p_ablated.resize(fixtures::uniform_int(rng, 1, 6));
      for (double& v : d.log_p_ablated) v = -6.0 * fixtures::uniform01(rng);
      const auto od = oracle_drop(d);
      for (std::size_t p = 0; p < d.log_p_ablated.size(); ++p) {
        c.expect(od.drop >= log_prob_drop(d, p), "oracle below a passage drop");
      }
      c.expect(random_drop_exact(d) <= od.drop, "expectation above oracle");
      table.push_back(d);
    }
    c.expect(random_drop_exact(table) <= mean_oracle_drop(table), "table expectation above oracle");
    c.expect(random_drop(table) == random_drop(table), "seeded rerun");

    std::vector<EvalRecord> recs;
    for (std::size_t r = 0; r < rows; ++r) {
      EvalRecord rec;
      rec.gold = fixtures::uniform_int(rng, 0, 2);
      rec.predicted = fixtures::uniform_int(rng, 0, 2);
      recs.push_back(rec);
    }
    const double acc = accuracy(recs);
    std::reverse(recs.begin(), recs.end());
    c.expect(accuracy(recs) == acc && acc >= 0.0 && acc <= 100.0, "accuracy order");
  }
  if (!c.ok()) return {false, c.failures()};
  return {true, std::to_string(c.checks()) + " checks over " + std::to_string(tables) + " drop tables"};
}

Outcome latency_reuse() {
  const auto t0 = Clock::now();
  const auto syn = fixtures::synthetic(11, 8192, 64, 16);
  auto inst = std::make_shared<const TokenizedInstance>(syn.instance);
  auto sim = std::make_shared<const SimilarityMatrix>(syn.similarity);
  fixtures::Rng rng(5);
  const auto spans = fixtures::random_spans(rng, inst->response_count(), 50, 8);
  const auto t = measure_reuse(inst, sim, EngineConfig{}, spans);
  const double secs = seconds_since(t0);
  const double ratio = t.warm_ms / t.cold_ms;
  const std::string detail = "cold " + fmt(t.cold_ms, 4) + " ms, warm " + fmt(t.warm_ms, 4) + " ms per span (ratio " +
                             fmt(ratio) + "), warm row scans " + std::to_string(t.warm_row_scans) + ", " +
                             fmt(secs, 2) + " s";
  const bool ok = ratio < 0.5 && t.warm_row_scans == 0 && secs < 30.0;
  return {ok, detail};
}

Outcome cli_http_parity() {
  testutil::TempDir dir;
  const std::string cli = SPANATTR_CLI_PATH;
  const auto gen = testutil::run_command("'" + cli + "' fixtures generate --synthetic 1 --out " +
                                         testutil::quoted(dir.path()) + " 2>/dev/null");
  if (gen.exit_code != 0) return {false, "fixtures generate exited " + std::to_string(gen.exit_code)};

  auto store = std::make_shared<const InstanceStore>(dir.path());
  HttpServer server(store, MethodConfig{});
  const int port = server.bind("127.0.0.1", 0);
  if (port <= 0) return {false, "cannot bind a local port"};
  std::thread th([&] { server.listen(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  struct Case {
    std::string id;
    std::string method;
    std::string span_flag;
    json span;
    std::string extra_flags;
    json extra;
  };
  std::vector<Case> cases;
  const auto& fig1 = store->get("fig1").instance();
  for (const auto& [_, name] : method_names()) {
    for (const Range r : {Range{3, 6}, Range{7, 10}, Range{11, 12}, Range{13, 14}, Range{0, 17}}) {
      cases.push_back({"fig1", name, "--tokens " + std::to_string(r.begin) + " " + std::to_string(r.end),
                       {{"tokens", {r.begin, r.end}}}, "", json::object()});
    }
  }
  const std::size_t one = fig1.response_text.find("one million");
  cases.push_back({"fig1", "attn-union-dep", "--chars " + std::to_string(one) + " " + std::to_string(one + 11),
                   {{"chars", {one, one + 11}}}, "", json::object()});
  cases.push_back({"fig1", "attn-union", "--tokens 3 6", {{"tokens", {3, 6}}}, "--k 3 --tau inf",
                   {{"k", 3}, {"tau", "inf"}}});
  cases.push_back({"fig1", "hss-avg", "--tokens 3 6", {{"tokens", {3, 6}}}, "--window 4", {{"window", 4}}});
  cases.push_back({"fig1", "augment-by-attn", "--tokens 7 10", {{"tokens", {7, 10}}}, "--variant local-sentence",
                   {{"variant", "local-sentence"}}});
  cases.push_back({"fig1", "attn-union", "--tokens 3 6", {{"tokens", {3, 6}}}, "--layer 4", {{"layer", 4}}});
  cases.push_back({"synthetic-1", "attn-union", "--tokens 5 12", {{"tokens", {5, 12}}}, "", json::object()});
  cases.push_back({"synthetic-1", "sent-comp", "--tokens 20 21", {{"tokens", {20, 21}}}, "", json::object()});

  Checker c;
  for (const auto& k : cases) {
    const auto r = testutil::run_command("'" + cli + "' attribute --data-dir " + testutil::quoted(dir.path()) +
                                         " --instance " + k.id + " --method " + k.method + " " + k.span_flag + " " +
                                         k.extra_flags + " --json 2>/dev/null");
    json body = k.extra;
    body["method"] = k.method;
    body["span"] = k.span;
    auto res = client.Post("/instances/" + k.id + "/attribute", body.dump(), "application/json");
    const std::string label = k.id + " " + k.method + " " + k.span.dump() + " " + k.extra_flags;
    c.expect(r.exit_code == 0 && res && res->status == 200 && res->body == r.out, label);
  }
  server.stop();
  th.join();
  if (!c.ok()) return {false, c.failures()};
  return {true, std::to_string(cases.size()) + " requests byte-identical across CLI --json and POST"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"topk-oracle", topk_oracle},
      {"union-filter-oracle", union_filter_oracle},
      {"dependency-golden", dependency_golden},
      {"coordination-dual", coordination_dual},
      {"hssavg-oracle", hssavg_oracle},
      {"eval-formulas", eval_formulas},
      {"latency-reuse", latency_reuse},
      {"cli-http-parity", cli_http_parity},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    if (!o.pass) ++failed;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
