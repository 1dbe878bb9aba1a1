// Command-line front end: one subcommand per experiment plus emit-plotdata.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "chemolab/error.hpp"
#include "chemolab/harness.hpp"

namespace h = chemo::harness;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned parallelism = 1;
};

void add_common(CLI::App* sub, Common& c, bool need_config) {
  auto* opt = sub->add_option("--config", c.config, "configuration file (JSON)");
  if (need_config) opt->required()->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "output directory (defaults to output.dir)");
  sub->add_option("--seed", c.seed, "overrides the configured seed");
  sub->add_option("--parallelism", c.parallelism, "worker threads")->check(CLI::Range(1u, 1024u));
}

int run_experiment(h::Experiment e, const Common& c) {
  std::ifstream in(c.config);
  h::json doc;
  try {
    doc = h::json::parse(in);
  } catch (const h::json::parse_error& err) {
    throw chemo::ConfigError(std::string("invalid JSON: ") + err.what(), "--config");
  }
  if (c.seed) {
    if (!doc.is_object()) throw chemo::ConfigError("configuration must be a JSON object");
    doc["seed"] = *c.seed;
    if (doc.contains("initial") && doc["initial"].is_object()) doc["initial"].erase("seed");
  }
  const h::RunConfig cfg = h::parse_config(doc);
  const h::fs::path out = c.out.empty() ? h::fs::path(cfg.out_dir) : h::fs::path(c.out);
  const h::RunOutcome o = h::run(cfg, e, out, c.parallelism);
  std::cout << o.result.value("status", std::string("done")) << ' ' << (out / "result.json").string() << '\n';
  if (o.result.contains("error")) std::cerr << "error: " << o.result["error"].get<std::string>() << '\n';
  return o.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical lab for parabolic-elliptic chemotaxis with singular sensitivity and logistic source"};
  app.set_version_flag("--version", std::string(h::kVersion));
  app.require_subcommand(1);

  struct Entry {
    const char* name;
    h::Experiment experiment;
    const char* help;
  };
  const Entry entries[] = {
      {"check-thresholds", h::Experiment::thresholds, "evaluate the closed-form constants and threshold conditions"},
      {"simulate", h::Experiment::simulate, "run a trajectory and check the diagnostics"},
      {"periodic", h::Experiment::periodic, "Poincare-map fixed point for time-periodic coefficients"},
      {"steady", h::Experiment::steady, "steady state for time-independent coefficients"},
      {"entire", h::Experiment::entire, "pullback construction of an entire solution"},
      {"sweep", h::Experiment::sweep, "Cartesian parameter sweep"},
  };
  Common common[std::size(entries)];
  CLI::App* subs[std::size(entries)];
  for (std::size_t i = 0; i < std::size(entries); ++i) {
    subs[i] = app.add_subcommand(entries[i].name, entries[i].help);
    add_common(subs[i], common[i], true);
  }

  std::string kind, ledger;
  auto* plot = app.add_subcommand("emit-plotdata", "write plot-ready CSV from a finished ledger");
  plot->add_option("kind", kind, "envelope | persistence | region")->required();
  plot->add_option("--out", ledger, "ledger directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return h::kConfigError;
  }

  try {
    if (plot->parsed()) {
      std::cout << h::emit_plotdata(ledger, kind).string() << '\n';
      return h::kOk;
    }
    for (std::size_t i = 0; i < std::size(entries); ++i)
      if (subs[i]->parsed()) return run_experiment(entries[i].experiment, common[i]);
  } catch (const chemo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return h::kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return h::kRuntimeFailure;
  }
  return h::kConfigError;
}
