// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>

#include "spanattr/fixtures.hpp"
#include "spanattr/service.hpp"
#include "test_util.hpp"

using namespace spanattr;
using testutil::quoted;
using testutil::run_command;
using testutil::TempDir;

namespace {

const std::string kCli = SPANATTR_CLI_PATH;

std::string cli(const std::string& args) { return "'" + kCli + "' " + args + " 2>/dev/null"; }

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("fixtures generate writes a loadable store", "[cli]") {
  TempDir dir;
  const auto r = run_command(cli("fixtures generate --out " + quoted(dir.path())));
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(dir / "fig1.instance.json"));
  CHECK(fs::exists(dir / "targets.json"));
  CHECK(InstanceStore(dir.path()).ids() == std::vector<std::string>{"fig1"});
}

TEST_CASE("attribute command", "[cli]") {
  TempDir dir;
  fixtures::write_fig1(dir.path());
  const std::string data = " --data-dir " + quoted(dir.path());

  const auto human = run_command(cli("attribute" + data + " --instance fig1 --method attn-union-dep --tokens 3 6"));
  CHECK(human.exit_code == 0);
  CHECK(human.out.find("predicted passage: 1") != std::string::npos);

  const auto js = run_command(cli("attribute" + data + " --instance fig1 --method attn-union-dep --tokens 3 6 --json"));
  REQUIRE(js.exit_code == 0);
  const auto payload = json::parse(js.out);
  CHECK(payload["predicted_passage"] == 1);
  CHECK(payload["config"]["k"] == 2);

  const auto k3 = run_command(cli("attribute" + data + " --instance fig1 --method attn-union --tokens 3 6 --k 3 --json"));
  REQUIRE(k3.exit_code == 0);
  CHECK(json::parse(k3.out)["config"]["k"] == 3);

  const auto env = run_command("SPANATTR_DATA_DIR=" + quoted(dir.path()) + " " +
                               cli("attribute --instance fig1 --method attn-union-dep --tokens 3 6 --json"));
  CHECK(env.exit_code == 0);
  CHECK(env.out == js.out);

  detail::write_text(dir / "cfg.json", R"({"k": 5})");
  const auto cfg = run_command(
      cli("attribute" + data + " --config " + quoted(dir / "cfg.json") + " --instance fig1 --method attn-union --tokens 3 6 --json"));
  CHECK(json::parse(cfg.out)["config"]["k"] == 5);
  const auto flag_wins = run_command(cli("attribute" + data + " --config " + quoted(dir / "cfg.json") +
                                         " --instance fig1 --method attn-union --tokens 3 6 --k 1 --json"));
  CHECK(json::parse(flag_wins.out)["config"]["k"] == 1);
}

TEST_CASE("usage errors exit with 2", "[cli]") {
  TempDir dir;
  fixtures::write_fig1(dir.path());
  auto inst = load_instance(dir / "fig1.instance.json");
  inst.instance_id = "nodep";
  inst.sidecars.erase("depparse");
  save_instance(dir / "nodep.instance.json", inst);
  const std::string data = " --data-dir " + quoted(dir.path());

  CHECK(run_command(cli("attribute" + data + " --instance fig1 --method magic --tokens 3 6")).exit_code == 2);
  CHECK(run_command(cli("attribute" + data + " --instance nodep --method attn-union-dep --tokens 3 6")).exit_code == 2);
  CHECK(run_command(cli("attribute" + data + " --instance nodep --method hss-avg-dep --tokens 3 6")).exit_code == 2);
  CHECK(run_command(cli("attribute" + data + " --instance nodep --method attn-union --tokens 3 6")).exit_code == 0);
  CHECK(run_command(cli("attribute" + data + " --instance none --method attn-union --tokens 3 6")).exit_code == 2);
  CHECK(run_command(cli("attribute" + data + " --instance fig1 --method attn-union --tokens 3 60")).exit_code == 2);
  CHECK(run_command(cli("attribute" + data + " --instance fig1 --method attn-union")).exit_code == 2);
  CHECK(run_command(cli("attribute" + data + " --instance fig1 --method attn-union --tokens 3 6 --tau zero"))
            .exit_code == 2);
  CHECK(run_command(cli("frobnicate")).exit_code == 2);
}

TEST_CASE("eval prints accuracy and drops", "[cli]") {
  TempDir dir;
  fixtures::write_fig1(dir.path());
  const std::string data = " --data-dir " + quoted(dir.path());
  const auto r = run_command(cli("eval" + data + " --method attn-union --records " + quoted(dir / "rec.jsonl") +
                                 " --citations " + quoted(dir / "cite.jsonl")));
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("accuracy: 75.0\n") != std::string::npos);
  CHECK(r.out.find("oracle drop: ") != std::string::npos);
  CHECK(count_lines(detail::read_text(dir / "rec.jsonl")) == 4);
  CHECK(count_lines(detail::read_text(dir / "cite.jsonl")) == 1);
  const auto dep = run_command(cli("eval" + data + " --method attn-union-dep"));
  CHECK(dep.out.find("accuracy: 100.0\n") != std::string::npos);
}

TEST_CASE("sweep and latency emit CSV", "[cli]") {
  TempDir dir;
  fixtures::write_fig1(dir.path());
  const std::string data = " --data-dir " + quoted(dir.path());
  const std::string args = "sweep" + data + " --methods attn-union --k 1,2 --tau 2,inf";
  const auto a = run_command(cli(args));
  REQUIRE(a.exit_code == 0);
  CHECK(count_lines(a.out) == 5);
  CHECK(a.out.find(",inf,") != std::string::npos);
  const auto b = run_command(cli(args));
  CHECK(a.out == b.out);
  REQUIRE(run_command(cli(args + " --out " + quoted(dir / "sweep.csv"))).exit_code == 0);
  CHECK(detail::read_text(dir / "sweep.csv") == a.out);

  const auto lat = run_command(cli("latency" + data + " --methods attn-union,hss-avg"));
  REQUIRE(lat.exit_code == 0);
  CHECK(count_lines(lat.out) == 3);
  CHECK(lat.out.rfind("report_version,method,spans,cold_ms_per_span,warm_ms_per_span\n", 0) == 0);
}
