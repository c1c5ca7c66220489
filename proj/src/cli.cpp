// SPDX-License-Identifier: Apache-2.0

#include "role_forge/cli.hpp"

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "role_forge/checkpoint.hpp"
#include "role_forge/checks.hpp"
#include "role_forge/report.hpp"

namespace role_forge::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// A checkpoint whose config disagrees with the one supplied is only used
// when forced.
void check_hash(const Checkpoint& ck, const TrainConfig* expected, bool force, std::ostream& log) {
  const std::uint64_t embedded = config_hash(ck.config.train);
  bool mismatch = embedded != ck.config_hash;
  if (expected && config_hash(*expected) != ck.config_hash) mismatch = true;
  if (!mismatch) return;
  log << "warning: checkpoint config hash does not match the configuration in use\n";
  if (!force) throw std::runtime_error("refusing to load a checkpoint with a different config (use --force)");
}

std::int64_t checkpoint_every(const TrainConfig& c) { return c.eval_interval > 0 ? c.eval_interval : 200; }

}  // namespace

TrainOutcome train_run(const RunConfig& config, const fs::path& dir, std::ostream& log, const fs::path& resume_from,
                       bool force) {
  fs::create_directories(dir);
  write_text(dir / "resolved_config.json", dump_run_config(config));
  const fs::path metrics_path = dir / "metrics.csv";
  const fs::path ckpt_path = dir / "checkpoint.bin";

  Trainer trainer(config.train);
  if (!resume_from.empty()) {
    Checkpoint ck = load_checkpoint(resume_from);
    check_hash(ck, &config.train, force, log);
    if (!ck.state.params.same_layout(trainer.state().params))
      throw CheckpointError("checkpoint parameters do not fit this model");
    trainer.state() = std::move(ck.state);
    log << "resumed at update " << trainer.state().updates << ", " << trainer.state().env_steps << " env steps\n";
  } else if (fs::exists(metrics_path)) {
    fs::remove(metrics_path);
  }

  MetricsWriter metrics(metrics_path);
  TrainOutcome outcome;
  const auto every = static_cast<std::uint64_t>(checkpoint_every(config.train));
  try {
    while (!trainer.done()) {
      for (const auto& row : trainer.round()) {
        metrics.write(row);
        if (row.eval_return)
          log << "update " << row.update << "  steps " << row.env_steps << "  loss " << format_double(row.total)
              << "  eval return " << format_double(*row.eval_return) << '\n';
        if (row.update % every == 0) save_checkpoint(ckpt_path, config, trainer.state());
      }
    }
  } catch (const NonFiniteLoss& e) {
    // The failing update was never applied, so the current state is the last good one.
    save_checkpoint(ckpt_path, config, trainer.state());
    log << "aborted: " << e.what() << "; last good state saved to " << ckpt_path.string() << '\n';
    outcome.aborted = true;
  }
  if (!outcome.aborted) save_checkpoint(ckpt_path, config, trainer.state());
  outcome.updates = trainer.state().updates;
  outcome.env_steps = trainer.state().env_steps;
  return outcome;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"role_forge: emergent-role multi-agent Q-learning on toy cooperative tasks"};
  app.require_subcommand(1, 1);

  // train
  auto* train = app.add_subcommand("train", "train from a JSON config");
  std::string config_path, output_dir, resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> total_steps;
  bool single_thread = false, force = false;
  train->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--output-dir", output_dir, "override output_dir");
  train->add_option("--total-env-steps", total_steps, "override total_env_steps");
  train->add_flag("--single-thread", single_thread, "collect episodes on the training thread");
  train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_flag("--force", force, "accept a checkpoint whose config hash differs");

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "greedy evaluation of a checkpoint");
  std::string ckpt;
  std::string eval_config;
  int episodes = 0;
  evaluate_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--config", eval_config, "expected configuration")->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--episodes", episodes, "evaluation episodes (default: config eval_episodes)");
  evaluate_cmd->add_flag("--force", force, "accept a checkpoint whose config hash differs");

  // export-roles
  auto* export_cmd = app.add_subcommand("export-roles", "write the role CSV of a greedy evaluation");
  std::string roles_out;
  export_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--episodes", episodes, "evaluation episodes (default: config eval_episodes)");
  export_cmd->add_option("--out", roles_out, "output CSV (default: roles.csv next to the checkpoint)");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render SVG plots from CSV files");
  std::string metrics_csv, roles_csv, plot_dir;
  plot_cmd->add_option("--metrics", metrics_csv, "metrics CSV")->check(CLI::ExistingFile);
  plot_cmd->add_option("--roles", roles_csv, "role CSV")->check(CLI::ExistingFile);
  plot_cmd->add_option("--out-dir", plot_dir, "output directory (default: next to the inputs)");

  auto* selftest = app.add_subcommand("selftest", "run the oracle suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*train) {
      RunConfig rc = load_run_config(config_path);
      if (seed) rc.train.seed = *seed;
      if (total_steps) rc.train.total_env_steps = *total_steps;
      if (single_thread) rc.train.single_thread = true;
      if (!output_dir.empty()) rc.output_dir = output_dir;
      rc.train.validate();
      const fs::path dir = resolve_output_dir(rc);
      const auto outcome = train_run(rc, dir, out, resume, force);
      out << "finished: " << outcome.updates << " updates, " << outcome.env_steps << " env steps, outputs in "
          << dir.string() << '\n';
      return outcome.aborted ? kExitFailure : kExitOk;
    }

    if (*evaluate_cmd || *export_cmd) {
      const Checkpoint ck = load_checkpoint(ckpt);
      std::optional<RunConfig> expected;
      if (!eval_config.empty()) expected = load_run_config(eval_config);
      check_hash(ck, expected ? &expected->train : nullptr, force, err);
      const TrainConfig& c = ck.config.train;
      const ModelSpec spec = make_model_spec(envs::env_contract(c.env_kind), c.ablation, c.input_last_action,
                                             c.input_agent_id);
      const int n = episodes > 0 ? episodes : c.eval_episodes;
      const std::uint64_t eval_seed = c.seed * 7919 + ck.state.updates;
      const EvalResult ev = role_forge::evaluate(ck.state.params, spec, c.env_kind, n, eval_seed);
      if (*export_cmd) {
        const fs::path dest = roles_out.empty() ? fs::path(ckpt).parent_path() / "roles.csv" : fs::path(roles_out);
        write_roles_csv(dest, ev.roles);
        out << "wrote " << ev.roles.size() << " role rows to " << dest.string() << '\n';
        return kExitOk;
      }
      nlohmann::ordered_json report;
      report["env_kind"] = envs::env_kind_name(c.env_kind);
      report["ablation"] = ablation_name(c.ablation);
      report["updates"] = ck.state.updates;
      report["env_steps"] = ck.state.env_steps;
      report["episodes"] = n;
      report["mean_return"] = ev.mean_return;
      report["success_rate"] = ev.success_rate ? nlohmann::json(*ev.success_rate) : nlohmann::json(nullptr);
      if (uses_roles(c.ablation)) {
        const auto gap = dissimilarity_gap(ck.state.params, spec, c.env_kind, n, eval_seed);
        report["between_d"] = gap.between ? nlohmann::json(*gap.between) : nlohmann::json(nullptr);
        report["within_d"] = gap.within ? nlohmann::json(*gap.within) : nlohmann::json(nullptr);
      }
      out << report.dump(2) << '\n';
      return kExitOk;
    }

    if (*plot_cmd) {
      if (metrics_csv.empty() && roles_csv.empty()) {
        err << "error: plot needs --metrics and/or --roles\n\n" << plot_cmd->help();
        return kExitUsage;
      }
      if (!metrics_csv.empty()) {
        const fs::path dir = plot_dir.empty() ? fs::path(metrics_csv).parent_path() : fs::path(plot_dir);
        if (!dir.empty()) fs::create_directories(dir);
        write_text(dir / "learning_curve.svg", learning_curve_svg(read_csv(metrics_csv)));
        out << "wrote " << (dir / "learning_curve.svg").string() << '\n';
      }
      if (!roles_csv.empty()) {
        const fs::path dir = plot_dir.empty() ? fs::path(roles_csv).parent_path() : fs::path(plot_dir);
        if (!dir.empty()) fs::create_directories(dir);
        write_text(dir / "role_scatter.svg", role_scatter_svg(read_csv(roles_csv)));
        out << "wrote " << (dir / "role_scatter.svg").string() << '\n';
      }
      return kExitOk;
    }

    if (*selftest) {
      bool all = true;
      for (const auto& r : checks::selftest_suite()) {
        out << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.seconds << " s): " << r.detail << '\n';
        all = all && r.passed;
      }
      return all ? kExitOk : kExitFailure;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace role_forge::cli
