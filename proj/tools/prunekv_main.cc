// Copyright 2026 The PruneKV Authors
// SPDX-License-Identifier: Apache-2.0

// prunekv: command-line front end (genmodel, run, replay, eval-chair, bench).

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "prunekv/commands.h"
#include "prunekv/errors.h"

namespace {

using namespace prunekv;

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::string preset, policy, weights, out_dir, history_refresh;
  std::optional<std::size_t> max_new_tokens;

  void Attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "TOML-like run config file");
    app->add_option("--set", sets, "Override a config key (section.key=value)");
    app->add_option("--preset", preset, "llava7b-like, instructblip-like or qwenvl-like");
    app->add_option("--policy", policy, "none, fixed_topk, adaptive, random_keep, bottom_k");
    app->add_option("--weights", weights, "PKVW weight file");
    app->add_option("--out-dir", out_dir, "Output directory");
    app->add_option("--history-refresh", history_refresh, "prev-step or post-prune-step");
    app->add_option("--max-new-tokens", max_new_tokens, "Tokens to generate");
  }

  ConfigValues Values() const {
    ConfigValues v;
    if (!config_path.empty()) v = ReadConfigFile(config_path);
    auto put = [&](const std::string& key, const std::string& value) {
      if (!value.empty()) v[key] = value;
    };
    put("preset", preset);
    put("policy.kind", policy);
    put("model.weights", weights);
    put("output.dir", out_dir);
    put("policy.history-refresh", history_refresh);
    if (max_new_tokens) v["decode.max_new_tokens"] = std::to_string(*max_new_tokens);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ConfigError("--set expects key=value, got '" + s + "'");
      }
      v[s.substr(0, eq)] = s.substr(eq + 1);
    }
    // A preset implies the adaptive policy unless the policy is set explicitly.
    if (v.count("preset") && v.count("policy.kind") == 0 && v.count("policy") == 0) {
      v["policy.kind"] = "adaptive";
    }
    return v;
  }

  RunConfig Build() const {
    RunConfig c = BuildRunConfig(Values());
    c.Validate();
    return c;
  }
};

template <typename Fn>
void WithOutput(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  fn(out);
}

int Run(int argc, char** argv) {
  CLI::App app{"prunekv: adaptive visual KV-cache pruning runtime"};
  app.require_subcommand(1);

  // genmodel
  CLI::App* gen = app.add_subcommand("genmodel", "Write seeded synthetic weights (PKVW)");
  ConfigFlags gen_flags;
  std::string gen_out;
  std::uint64_t gen_seed = 1;
  bool gen_seed_set = false;
  gen->add_option("-c,--config", gen_flags.config_path, "Config file (model.* keys)");
  gen->add_option("--set", gen_flags.sets, "Override a config key");
  gen->add_option("-o,--out", gen_out, "Output weight file")->required();
  gen->add_option("--seed", gen_seed, "Weight seed")->each([&](const std::string&) {
    gen_seed_set = true;
  });

  // run
  CLI::App* run = app.add_subcommand("run", "Decode one synthetic request");
  ConfigFlags run_flags;
  run_flags.Attach(run);

  // replay
  CLI::App* replay = app.add_subcommand("replay", "Replay pruning decisions from a trace");
  ConfigFlags replay_flags;
  std::string trace_path, replay_out;
  replay->add_option("trace", trace_path, "trace.jsonl")->required();
  replay_flags.Attach(replay);
  replay->add_option("-o,--out", replay_out, "Report path (default stdout)");

  // eval-chair
  CLI::App* chair = app.add_subcommand("eval-chair", "Score captions with CHAIR");
  std::string captions, annotations, chair_out;
  chair->add_option("--captions", captions, "Captions JSONL")->required();
  chair->add_option("--annotations", annotations, "Annotations JSON")->required();
  chair->add_option("-o,--out", chair_out, "Report path (default stdout)");

  // bench
  CLI::App* bench = app.add_subcommand("bench", "Latency and FLOPs: policy vs no pruning");
  ConfigFlags bench_flags;
  bench_flags.Attach(bench);
  std::size_t reps = 5;
  std::string bench_out;
  bench->add_option("--reps", reps, "Repetitions (>= 3)");
  bench->add_option("-o,--out", bench_out, "Report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (gen->parsed()) {
    RunConfig c = BuildRunConfig(gen_flags.Values());
    cmd_genmodel(c.model.config, gen_seed_set ? gen_seed : c.model.seed, gen_out);
    std::cout << "wrote " << gen_out << '\n';
  } else if (run->parsed()) {
    const RunArtifacts art = cmd_run(run_flags.Build());
    std::size_t prunes = 0;
    for (const TraceEvent& e : art.result.trace.events) prunes += e.prune_triggered;
    std::cout << "generated " << art.result.tokens.size() << " tokens, " << prunes
              << " prune events\n"
              << art.tokens_path << '\n'
              << art.trace_path << '\n'
              << art.csv_path << '\n'
              << art.flops_path << '\n';
  } else if (replay->parsed()) {
    std::optional<RunConfig> cfg;
    const ConfigValues v = replay_flags.Values();
    if (!v.empty()) cfg = BuildRunConfig(v);
    ReplayReport report;
    if (cfg) {
      report = cmd_replay(trace_path, cfg);
    } else {
      report = cmd_replay(trace_path, std::nullopt);
    }
    WithOutput(replay_out, [&](std::ostream& out) { WriteReplayReport(report, out); });
    if (report.first_divergence()) {
      std::cerr << "first divergence at step " << *report.first_divergence() << '\n';
    }
  } else if (chair->parsed()) {
    const ChairReport report = cmd_eval_chair(captions, annotations);
    WithOutput(chair_out, [&](std::ostream& out) { WriteChairReport(report, out); });
  } else if (bench->parsed()) {
    const BenchReport report = cmd_bench(bench_flags.Build(), reps);
    WithOutput(bench_out, [&](std::ostream& out) { WriteBenchReport(report, out); });
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return Run(argc, argv);
  } catch (const prunekv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return prunekv::kExitConfig;
  } catch (const prunekv::ContractViolation& e) {
    std::cerr << "contract violation: " << e.what() << '\n';
    return prunekv::kExitContract;
  } catch (const prunekv::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return prunekv::kExitIo;
  } catch (const prunekv::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return prunekv::kExitIo;
  }
}
