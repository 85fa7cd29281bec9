/*
 * Copyright 2026 The cfproto Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command line driver.
//
//   cfproto train    --config german.json --out runs/german
//   cfproto explain  --config german.json --out runs/german --framework both --n-queries 20
//   cfproto evaluate --config german.json --out runs/german
//   cfproto scatter  --config pima.json --out runs/pima
//   cfproto report   --config pima.json --config cancer.json --seed 1 --out runs/table
//
// Exit status: 0 on success, 2 on usage errors, otherwise a per-stage code
// (see kStageCodes) with "error [stage] message" on stderr.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cfproto/cfproto.hpp"

namespace {

namespace fs = std::filesystem;
using namespace cfproto;

const std::map<std::string, int> kStageCodes = {
    {"config", 3}, {"preprocess", 4}, {"train", 5},    {"sample", 6},
    {"explain", 7}, {"evaluate", 8},  {"scatter", 9},  {"write", 10},
};

struct Options {
  std::vector<std::string> configs;
  std::uint64_t seed = 0;
  std::string out;
  std::string framework = "both";
  std::size_t n_queries = 0;
};

struct Flags {
  CLI::Option* seed = nullptr;
  CLI::Option* out = nullptr;
  CLI::Option* n_queries = nullptr;
};

ExperimentConfig resolve_config(const std::string& path, const Options& opt, const Flags& flags,
                                const std::string& out_dir) {
  ExperimentConfig cfg = run_stage("config", [&] { return load_experiment_config(path); });
  if (flags.seed && flags.seed->count() > 0) cfg.seed = opt.seed;
  if (flags.n_queries && flags.n_queries->count() > 0) cfg.n_queries = opt.n_queries;
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (opt.framework == "both") cfg.frameworks = {"ss", "u"};
  else cfg.frameworks = {opt.framework};
  run_stage("config", [&] { cfg.validate(); });
  return cfg;
}

std::string single_out(const Options& opt, const Flags& flags) {
  return flags.out && flags.out->count() > 0 ? opt.out : std::string();
}

LoadedExperiment load_trained(const ExperimentConfig& cfg) {
  return run_stage("preprocess", [&] { return load_experiment(cfg, cfg.output_dir); });
}

void cmd_train(const ExperimentConfig& cfg) {
  OutputTracker out(cfg.output_dir);
  const LoadedExperiment le = stage_train(cfg, out);
  out.commit();
  std::cout << cfg.name << ": trained; test accuracy SS " << le.models.ae_d.report.test_accuracy.value_or(-1.0)
            << ", U " << le.models.h.report.test_accuracy.value_or(-1.0) << "; checkpoints in " << cfg.output_dir
            << "\n";
}

void cmd_explain(const ExperimentConfig& cfg) {
  const LoadedExperiment le = load_trained(cfg);
  OutputTracker out(cfg.output_dir);
  stage_explain(cfg, le, out);
  out.commit();
  std::cout << cfg.name << ": explanations written to " << cfg.output_dir << "\n";
}

void cmd_evaluate(const ExperimentConfig& cfg) {
  const LoadedExperiment le = load_trained(cfg);
  OutputTracker out(cfg.output_dir);
  const EvaluatedDataset ev = stage_evaluate(cfg, le, cfg.output_dir);
  const MetricsReport report = make_report(std::span<const EvaluatedDataset>(&ev, 1));
  run_stage("write", [&] { write_report(out, report); });
  out.commit();
  std::cout << emit_table(report);
}

void cmd_scatter(const ExperimentConfig& cfg) {
  const LoadedExperiment le = load_trained(cfg);
  OutputTracker out(cfg.output_dir);
  const std::size_t n = stage_scatter(cfg, le, out, true);
  out.commit();
  std::cout << cfg.name << ": " << n << " scatter export(s) written to " << cfg.output_dir << "\n";
}

void cmd_report(const Options& opt, const Flags& flags) {
  const fs::path root = flags.out->count() > 0 ? fs::path(opt.out) : fs::path("out");
  std::vector<EvaluatedDataset> rows;
  for (const std::string& path : opt.configs) {
    ExperimentConfig cfg = resolve_config(path, opt, flags, "");
    cfg.output_dir = (root / cfg.name).string();
    std::cerr << cfg.name << ": running (seed " << cfg.seed << ")\n";
    rows.push_back(run_experiment(cfg));
  }
  const MetricsReport report = make_report(rows);
  OutputTracker out(root);
  run_stage("write", [&] { write_report(out, report, "report"); });
  out.commit();
  std::cout << emit_table(report);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-guided counterfactual explanations for tabular classifiers"};
  app.require_subcommand(1);
  Options opt;
  std::map<CLI::App*, Flags> flags;

  const auto add = [&](const std::string& name, const std::string& help, bool many) {
    CLI::App* sub = app.add_subcommand(name, help);
    Flags f;
    CLI::Option* cfg = sub->add_option("--config", opt.configs, "experiment config (JSON)")->required();
    if (!many) cfg->expected(1);
    f.seed = sub->add_option("--seed", opt.seed, "master seed (overrides the config)");
    f.out = sub->add_option("--out", opt.out, "output directory (overrides the config)");
    sub->add_option("--framework", opt.framework, "ss, u or both")
        ->check(CLI::IsMember({"ss", "u", "both"}))
        ->capture_default_str();
    f.n_queries = sub->add_option("--n-queries", opt.n_queries, "number of query instances")
                      ->check(CLI::PositiveNumber);
    flags[sub] = f;
    return sub;
  };
  CLI::App* train = add("train", "train every model family and write checkpoints", false);
  CLI::App* explain = add("explain", "sample queries and generate counterfactuals", false);
  CLI::App* evaluate = add("evaluate", "compute metrics over written explanations", false);
  CLI::App* scatter = add("scatter", "export latent scatter and probability grid (latent dim 2)", false);
  CLI::App* report = add("report", "run the full pipeline for one or more configs", true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (auto& [sub, f] : flags) {
      if (!sub->parsed()) continue;
      if (sub == report) {
        cmd_report(opt, f);
        break;
      }
      const ExperimentConfig cfg = resolve_config(opt.configs.front(), opt, f, single_out(opt, f));
      if (sub == train) cmd_train(cfg);
      else if (sub == explain) cmd_explain(cfg);
      else if (sub == evaluate) cmd_evaluate(cfg);
      else if (sub == scatter) cmd_scatter(cfg);
    }
  } catch (const StageError& e) {
    std::cerr << "error " << e.what() << "\n";
    const auto it = kStageCodes.find(e.stage());
    return it == kStageCodes.end() ? 1 : it->second;
  } catch (const std::exception& e) {
    std::cerr << "error [internal] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
