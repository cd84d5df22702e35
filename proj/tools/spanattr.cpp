// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

// spanattr command-line frontend.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error (unknown method,
// bad flags, missing dependency parse for a -dep method, invalid span).

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spanattr/eval.hpp"
#include "spanattr/fixtures.hpp"
#include "spanattr/http.hpp"
#include "spanattr/service.hpp"
#include "spanattr/store.hpp"

namespace {

using namespace spanattr;

struct Common {
  std::string data_dir = "data";
  std::optional<std::string> config;
};

struct Tuning {
  std::optional<std::size_t> k;
  std::optional<std::string> tau;
  std::optional<double> theta;
  std::optional<std::size_t> window;
  std::optional<std::string> variant;
  std::optional<int> layer;

  Overrides overrides() const {
    Overrides o;
    o.k = k;
    if (tau) o.tau = Tau::parse(*tau);
    o.theta = theta;
    o.window = window;
    if (variant) o.variant = parse_variant(*variant);
    o.layer = layer;
    return o;
  }
};

std::vector<std::string> all_method_names() {
  std::vector<std::string> out;
  for (const auto& [_, name] : method_names()) out.push_back(name);
  return out;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--data-dir", c.data_dir, "Instance directory")
      ->envname("SPANATTR_DATA_DIR")
      ->capture_default_str();
  cmd->add_option("--config", c.config, "JSON config file with default k, tau, theta, window, variant, layer");
}

void add_tuning(CLI::App* cmd, Tuning& t) {
  cmd->add_option("--k", t.k, "Top-k per response token (default 2)")->check(CLI::PositiveNumber);
  cmd->add_option("--tau", t.tau, "Isolation window, positive integer or 'inf' (default 2)");
  cmd->add_option("--theta", t.theta, "Citation threshold (default 0)");
  cmd->add_option("--window", t.window, "HSSAvg window width (default 8)")->check(CLI::PositiveNumber);
  cmd->add_option("--variant", t.variant, "AugmentByAttn variant")->check(CLI::IsMember({"full", "local-sentence"}));
  cmd->add_option("--layer", t.layer, "Attention layer (default: the instance's default sidecar)")
      ->check(CLI::PositiveNumber);
}

MethodConfig base_config(const Common& c) {
  return load_config(c.config ? std::optional<fs::path>(*c.config) : std::nullopt);
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const auto& n : names) out.push_back(*parse_method(n));
  return out;
}

template <class T>
std::string join(const std::vector<T>& v, const char* sep = " ") {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? sep : "") << v[i];
  return out.str();
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

void print_human(const TokenizedInstance& inst, const json& p) {
  const Range t{p["target"]["tokens"][0].get<std::size_t>(), p["target"]["tokens"][1].get<std::size_t>()};
  const Range ch{p["target"]["chars"][0].get<std::size_t>(), p["target"]["chars"][1].get<std::size_t>()};
  std::cout << "instance " << inst.instance_id << ", method " << p["method"].get<std::string>() << "\n";
  std::cout << "target tokens [" << t.begin << ", " << t.end << "): \""
            << inst.response_text.substr(ch.begin, ch.size()) << "\"\n";
  if (p.contains("augmentation")) {
    std::cout << "augmentation:\n";
    for (const auto& a : p["augmentation"]) {
      std::cout << "  " << a["token"].get<std::size_t>() << " \""
                << inst.response_tokens[a["token"].get<std::size_t>()] << "\" -> "
                << join(a["elements"].get<std::vector<std::size_t>>()) << "\n";
    }
  }
  if (p.contains("window")) {
    std::cout << "window start " << p["window"]["start"].get<std::size_t>() << ", width "
              << p["window"]["width"].get<std::size_t>() << ", score " << fmt(p["window"]["score"].get<double>())
              << "\n";
  }
  std::cout << "evidence (" << p["evidence"].size() << " tokens):\n";
  for (const auto& e : p["evidence"]) {
    std::cout << "  doc " << e["token"].get<std::size_t>() << "  passage " << e["passage"].get<std::size_t>()
              << "  score " << fmt(e["score"].get<double>()) << "  \"" << e["text"].get<std::string>() << "\"\n";
  }
  std::cout << "passage scores:";
  for (std::size_t i = 0; i < p["passage_scores"].size(); ++i) {
    const auto& v = p["passage_scores"][i];
    std::cout << " p" << i << "=" << (v.is_null() ? std::string("-") : fmt(v.get<double>()));
  }
  std::cout << "\npredicted passage: "
            << (p["predicted_passage"].is_null() ? std::string("none")
                                                 : std::to_string(p["predicted_passage"].get<std::size_t>()))
            << "\ncited passages: " << join(p["cited_passages"].get<std::vector<std::size_t>>()) << "\n";
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path or_default(const std::optional<std::string>& p, const fs::path& dflt) {
  return p ? fs::path(*p) : dflt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Span-level evidence attribution over precomputed attention and hidden states"};
  app.require_subcommand(1);

  // attribute
  Common attr_common;
  Tuning attr_tuning;
  std::string instance_id;
  std::string method;
  std::vector<std::size_t> token_range;
  std::vector<std::size_t> char_range;
  bool as_json = false;
  auto* attr = app.add_subcommand("attribute", "Attribute one answer span");
  add_common(attr, attr_common);
  add_tuning(attr, attr_tuning);
  attr->add_option("--instance", instance_id, "Instance id")->required();
  attr->add_option("--method", method, "Attribution method")->required()->check(CLI::IsMember(all_method_names()));
  auto* tok_opt = attr->add_option("--tokens", token_range, "Response token range BEGIN END (end-exclusive)")
                      ->expected(2);
  auto* chr_opt = attr->add_option("--chars", char_range, "Answer character range BEGIN END (end-exclusive)")
                      ->expected(2);
  tok_opt->excludes(chr_opt);
  attr->add_flag("--json", as_json, "Emit the JSON evidence payload");

  // eval
  Common eval_common;
  Tuning eval_tuning;
  std::string eval_method;
  std::optional<std::string> targets_file;
  std::optional<std::string> drops_file;
  std::optional<std::string> records_out;
  std::optional<std::string> citations_out;
  std::vector<std::uint64_t> seeds(kDefaultSeeds.begin(), kDefaultSeeds.end());
  auto* ev = app.add_subcommand("eval", "Passage accuracy and log-probability drop over target spans");
  add_common(ev, eval_common);
  add_tuning(ev, eval_tuning);
  ev->add_option("--method", eval_method, "Attribution method")->required()->check(CLI::IsMember(all_method_names()));
  ev->add_option("--targets", targets_file, "Targets file (default <data-dir>/targets.json)");
  ev->add_option("--drops", drops_file, "Drop table (default <data-dir>/drops.json when present)");
  ev->add_option("--seeds", seeds, "Seeds for the random-passage reference")->capture_default_str();
  ev->add_option("--records", records_out, "Write per-target records as JSON Lines");
  ev->add_option("--citations", citations_out, "Write per-sentence citations as JSON Lines");

  // sweep
  Common sweep_common;
  std::vector<std::string> sweep_methods = {"attn-union-dep"};
  std::vector<std::size_t> sweep_k = {2};
  std::vector<std::string> sweep_tau = {"2"};
  std::vector<std::string> sweep_layer = {"default"};
  std::vector<std::size_t> sweep_window = {8};
  std::optional<double> sweep_theta;
  std::optional<std::string> sweep_targets;
  std::optional<std::string> sweep_drops;
  std::optional<std::string> sweep_out;
  auto* sw = app.add_subcommand("sweep", "Evaluate a grid over method, k, tau, layer and window; emits CSV");
  add_common(sw, sweep_common);
  sw->add_option("--methods", sweep_methods, "Methods")->delimiter(',')->check(CLI::IsMember(all_method_names()));
  sw->add_option("--k", sweep_k, "k values")->delimiter(',')->check(CLI::PositiveNumber);
  sw->add_option("--tau", sweep_tau, "tau values (integers or inf)")->delimiter(',');
  sw->add_option("--layer", sweep_layer, "Attention layers ('default' for the default sidecar)")->delimiter(',');
  sw->add_option("--window", sweep_window, "Window widths")->delimiter(',')->check(CLI::PositiveNumber);
  sw->add_option("--theta", sweep_theta, "Citation threshold");
  sw->add_option("--targets", sweep_targets, "Targets file (default <data-dir>/targets.json)");
  sw->add_option("--drops", sweep_drops, "Drop table (default <data-dir>/drops.json when present)");
  sw->add_option("--out", sweep_out, "CSV output path (default stdout)");

  // latency
  Common lat_common;
  Tuning lat_tuning;
  std::vector<std::string> lat_methods = {"attn-union", "attn-union-dep"};
  std::optional<std::string> lat_targets;
  std::optional<std::string> lat_out;
  auto* lat = app.add_subcommand("latency", "Mean wall-clock per target span, cold and warm caches");
  add_common(lat, lat_common);
  add_tuning(lat, lat_tuning);
  lat->add_option("--methods", lat_methods, "Methods")->delimiter(',')->check(CLI::IsMember(all_method_names()));
  lat->add_option("--targets", lat_targets, "Targets file (default <data-dir>/targets.json)");
  lat->add_option("--out", lat_out, "CSV output path (default stdout)");

  // serve
  Common serve_common;
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve the HTTP/JSON API");
  add_common(serve, serve_common);
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port (0 picks a free one)")->capture_default_str();

  // fixtures generate
  auto* fx = app.add_subcommand("fixtures", "Fixture utilities");
  fx->require_subcommand(1);
  std::string fx_out = "data";
  std::vector<std::uint64_t> fx_synthetic;
  auto* gen = fx->add_subcommand("generate", "Write the fig1 fixture (and optional synthetic instances)");
  gen->add_option("--out", fx_out, "Output directory")->capture_default_str();
  gen->add_option("--synthetic", fx_synthetic, "Also write an 8k-document-token instance per seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (attr->parsed()) {
      if (token_range.empty() && char_range.empty()) throw UsageError("give --tokens or --chars");
      InstanceStore store(attr_common.data_dir);
      AttributeRequest req;
      req.instance_id = instance_id;
      req.method = *parse_method(method);
      if (!token_range.empty()) req.tokens = Range{token_range[0], token_range[1]};
      if (!char_range.empty()) req.chars = Range{char_range[0], char_range[1]};
      req.overrides = attr_tuning.overrides();
      // Same parser as the HTTP body so both paths validate identically.
      req = request_from_json(instance_id, request_to_json(req));
      const json payload = handle_attribute(store, base_config(attr_common), req);
      if (as_json) {
        std::cout << canonical_dump(payload);
      } else {
        print_human(store.get(instance_id).instance(), payload);
      }
      return 0;
    }

    if (ev->parsed()) {
      const fs::path dir = eval_common.data_dir;
      InstanceStore store(dir);
      const auto cfg = eval_tuning.overrides().apply(base_config(eval_common));
      cfg.engine.validate();
      const auto targets = load_targets(or_default(targets_file, dir / "targets.json"));
      std::optional<DropTable> drops;
      const fs::path dpath = or_default(drops_file, dir / "drops.json");
      if (drops_file || fs::exists(dpath)) drops = load_drops(dpath);
      const Method m = *parse_method(eval_method);
      const auto records = evaluate(store, targets, drops ? &*drops : nullptr, m, cfg);
      const auto summary = summarize(records);
      std::cout << "method: " << eval_method << "\nrecords: " << summary.records << "\n";
      if (summary.accuracy) std::cout << "accuracy: " << fmt(*summary.accuracy, 1) << "\n";
      if (summary.mean_drop) {
        std::cout << "mean log-prob drop: " << fmt(*summary.mean_drop) << "\n";
        std::vector<DropEntry> used;
        for (const auto& t : targets) {
          if (const DropEntry* e = drops->find(t.instance_id, t.span)) used.push_back(*e);
        }
        std::cout << "random drop (seeds " << join(seeds, ",") << "): " << fmt(random_drop(used, seeds)) << "\n"
                  << "random drop (expectation): " << fmt(random_drop_exact(used)) << "\n"
                  << "oracle drop: " << fmt(mean_oracle_drop(used)) << "\n";
      }
      if (records_out) {
        std::string text;
        for (const auto& r : records) {
          json j = {{"instance_id", r.instance_id},
                    {"span", detail::range_json(r.span)},
                    {"method", r.method},
                    {"predicted", r.predicted ? json(*r.predicted) : json(nullptr)},
                    {"cited", r.cited},
                    {"gold", r.gold ? json(*r.gold) : json(nullptr)},
                    {"drops", r.drops}};
          text += j.dump() + "\n";
        }
        detail::write_text(*records_out, text);
      }
      if (citations_out) detail::write_text(*citations_out, citations_jsonl(cite_statements(store, m, cfg)));
      return 0;
    }

    if (sw->parsed()) {
      const fs::path dir = sweep_common.data_dir;
      InstanceStore store(dir);
      const auto base = base_config(sweep_common);
      SweepGrid grid;
      grid.methods = parse_methods(sweep_methods);
      grid.ks = sweep_k;
      grid.taus.clear();
      for (const auto& t : sweep_tau) grid.taus.push_back(Tau::parse(t));
      grid.layers.clear();
      for (const auto& l : sweep_layer) {
        if (l == "default") {
          grid.layers.push_back(std::nullopt);
        } else {
          grid.layers.push_back(std::stoi(l));
        }
      }
      grid.windows = sweep_window;
      grid.citation_threshold = sweep_theta.value_or(base.engine.citation_threshold);
      grid.variant = base.variant;
      const auto targets = load_targets(or_default(sweep_targets, dir / "targets.json"));
      std::optional<DropTable> drops;
      const fs::path dpath = or_default(sweep_drops, dir / "drops.json");
      if (sweep_drops || fs::exists(dpath)) drops = load_drops(dpath);
      const auto csv = sweep_csv(sweep(store, targets, drops ? &*drops : nullptr, grid));
      if (sweep_out) {
        detail::write_text(*sweep_out, csv);
      } else {
        std::cout << csv;
      }
      return 0;
    }

    if (lat->parsed()) {
      const fs::path dir = lat_common.data_dir;
      const auto cfg = lat_tuning.overrides().apply(base_config(lat_common));
      const auto targets = load_targets(or_default(lat_targets, dir / "targets.json"));
      const auto methods = parse_methods(lat_methods);
      const auto csv = latency_csv(latency_report(dir, targets, methods, cfg));
      if (lat_out) {
        detail::write_text(*lat_out, csv);
      } else {
        std::cout << csv;
      }
      std::cerr << "note: timings exclude model forward passes\n";
      return 0;
    }

    if (serve->parsed()) {
      auto store = std::make_shared<const InstanceStore>(serve_common.data_dir);
      HttpServer server(store, base_config(serve_common));
      const int bound = server.bind(host, port);
      if (bound < 0) {
        std::cerr << "error: cannot bind " << host << ":" << port << "\n";
        return 1;
      }
      std::cout << "listening on http://" << host << ":" << bound << " (" << store->ids().size()
                << " instances)" << std::endl;
      return server.listen() ? 0 : 1;
    }

    if (gen->parsed()) {
      fixtures::write_fig1(fx_out);
      for (auto seed : fx_synthetic) {
        auto s = fixtures::synthetic(seed);
        const std::string base = s.instance.instance_id;
        s.instance.sidecars["attention"] = base + ".attention";
        save_instance(fs::path(fx_out) / (base + ".instance.json"), s.instance);
        save_matrix(fs::path(fx_out) / (base + ".attention"), s.similarity);
      }
      std::cout << "wrote fixtures to " << fx_out << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const RequestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const MissingInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NotFoundError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
