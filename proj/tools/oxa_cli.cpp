// oxa: command-line front end for the curation pipeline, the gradient
// checker and the toy-model trainer.
//
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 internal
// invariant violation (including a failed grad-check).

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "oxa/errors.hpp"
#include "oxa/objective.hpp"
#include "oxa/pipeline.hpp"
#include "oxa/record.hpp"
#include "oxa/sampler.hpp"
#include "oxa/toy_lm.hpp"

namespace {

using namespace oxa;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path));
  out << text;
  if (!out) throw IoError(fmt::format("error writing '{}'", path));
}

// --config is read before CLI11 parses, so explicit flags override file values.
std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) return argv[i + 1];
    if (std::strncmp(argv[i], "--config=", 9) == 0) return argv[i] + 9;
  }
  return {};
}

void add_target_options(CLI::App* cmd, PipelineConfig& cfg) {
  cmd->add_option("--mu", cfg.target.mu, "Target PPL center")->capture_default_str();
  cmd->add_option("--sigma", cfg.target.sigma, "Target PPL dispersion")->capture_default_str();
  cmd->add_option("--ppl-min", cfg.target.p_min, "Lower end of the PPL range")->capture_default_str();
  cmd->add_option("--ppl-max", cfg.target.p_max, "Upper end of the PPL range")->capture_default_str();
  cmd->add_option("--bin-width", cfg.target.bin_width, "PPL bin width")->capture_default_str();
  cmd->add_option("--total", cfg.target.total, "Number of records to select")->capture_default_str();
  cmd->add_option_function<std::string>(
         "--max-per-query",
         [&cfg](const std::string& v) { cfg.target.max_per_query = parse_cap(v); },
         "Responses per query (integer or 'inf')")
      ->default_str("1");
  cmd->add_flag_callback(
      "--no-remainder-topup", [&cfg] { cfg.promotion.remainder_topup = false; },
      "Keep floor quotas without distributing the remainder");
  cmd->add_flag_callback(
      "--redistribute", [&cfg] { cfg.promotion.redistribute = true; },
      "Reallocate quota of under-filled bins");
}

void add_suppress_options(CLI::App* cmd, PipelineConfig& cfg) {
  cmd->add_option("--count", cfg.suppress_count, "Number of records to select")->capture_default_str();
  cmd->add_option_function<std::string>(
         "--suppress-max-per-query",
         [&cfg](const std::string& v) { cfg.suppress_max_per_query = parse_cap(v); },
         "Responses per query for suppression (integer or 'inf')")
      ->default_str("1");
  cmd->add_option_function<std::string>(
         "--direction",
         [&cfg](const std::string& v) { cfg.suppress_direction = parse_direction(v); },
         "lowest | highest")
      ->default_str("lowest");
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Exploration-aware fine-tuning data curation and diagnostics"};
  app.require_subcommand(1);

  PipelineConfig cfg;
  if (const std::string path = find_config_arg(argc, argv); !path.empty()) {
    cfg = load_config_file(path);
  }
  std::string config_path;
  std::string in_path = cfg.input.string();
  std::string out_path;
  std::string report_path;

  auto add_io = [&](CLI::App* cmd, bool need_output) {
    cmd->add_option("--config", config_path, "JSON config file (flags override)");
    cmd->add_option("-i,--input", in_path, "Input JSONL corpus");
    auto* o = cmd->add_option("-o,--output", out_path, "Output JSONL corpus");
    if (need_output) o->required();
  };

  auto* verify_cmd = app.add_subcommand("verify", "Fill 'verified' from boxed-answer checks");
  add_io(verify_cmd, true);

  auto* ppl_cmd = app.add_subcommand("ppl", "Fill 'ppl' and 'length' from token_logprobs");
  add_io(ppl_cmd, true);

  auto* promote_cmd =
      app.add_subcommand("select-promote", "Gaussian-guided selection of verified-correct records");
  add_io(promote_cmd, true);
  add_target_options(promote_cmd, cfg);
  promote_cmd->add_option("--report", report_path, "Write the per-bin allocation CSV here");

  auto* suppress_cmd =
      app.add_subcommand("select-suppress", "Lowest-PPL selection of verification failures");
  add_io(suppress_cmd, true);
  suppress_cmd->add_option("--count", cfg.suppress_count, "Number of records to select")
      ->capture_default_str();
  suppress_cmd
      ->add_option_function<std::string>(
          "--max-per-query",
          [&cfg](const std::string& v) { cfg.suppress_max_per_query = parse_cap(v); },
          "Responses per query (integer or 'inf')")
      ->default_str("1");
  suppress_cmd
      ->add_option_function<std::string>(
          "--direction", [&cfg](const std::string& v) { cfg.suppress_direction = parse_direction(v); },
          "lowest | highest")
      ->default_str("lowest");

  std::string out_dir = cfg.output_dir.string();
  std::string rollouts_path = cfg.rollouts ? cfg.rollouts->string() : std::string();

  auto* run_cmd = app.add_subcommand("run", "Full curation pipeline");
  run_cmd->add_option("--config", config_path, "JSON config file (flags override)");
  run_cmd->add_option("-i,--input", in_path, "Raw JSONL corpus");
  run_cmd->add_option("--rollouts", rollouts_path, "Separate corpus supplying suppression candidates");
  run_cmd->add_option("--out-dir", out_dir, "Output directory");
  add_target_options(run_cmd, cfg);
  add_suppress_options(run_cmd, cfg);
  run_cmd->add_option("--alpha", cfg.alpha, "UL weight recorded for the downstream trainer")
      ->capture_default_str();
  run_cmd->add_option("--seed", cfg.seed, "Run seed (recorded)")->capture_default_str();

  std::vector<std::string> interval_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Select one training file per PPL interval");
  sweep_cmd->add_option("--config", config_path, "JSON config file (flags override)");
  sweep_cmd->add_option("-i,--input", in_path, "Raw JSONL corpus");
  sweep_cmd->add_option("--out-dir", out_dir, "Output directory");
  sweep_cmd->add_option("--interval", interval_args, "Interval LOW:HIGH (repeatable)");
  sweep_cmd->add_option("--total", cfg.target.total, "Records per interval")->capture_default_str();
  sweep_cmd
      ->add_option_function<std::string>(
          "--max-per-query",
          [&cfg](const std::string& v) { cfg.target.max_per_query = parse_cap(v); },
          "Responses per query (integer or 'inf')")
      ->default_str("1");

  GradCheckOptions gc;
  std::string loss_name = "ce";
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of CE/UL gradients");
  grad_cmd->add_option("--loss", loss_name, "ce | ul")->check(CLI::IsMember({"ce", "ul"}));
  grad_cmd->add_option("--trials", gc.trials, "Random trials")->capture_default_str();
  grad_cmd->add_option("--seed", gc.seed, "RNG seed")->capture_default_str();
  grad_cmd->set_help_flag("--help", "Print this help message and exit");
  grad_cmd->add_option("--h", gc.h, "Central-difference step")->capture_default_str();

  TrainConfig tc;
  tc.alpha = kDefaultAlpha;
  tc.step_size = kToyStepSize;
  tc.steps = kToySteps;
  std::string objective_name = "ce";
  std::string task_path;
  std::string trace_path;
  std::string task_out;
  std::string subset = "all";
  double split_ppl = kToySplitPerplexity;
  std::size_t eval_samples = 16;
  std::size_t eval_k = 4;
  double temperature = 0.6;
  auto* toy_cmd = app.add_subcommand("train-toy", "Train the tabular toy model and trace entropy");
  toy_cmd->add_option("--objective", objective_name, "ce | oxa")->check(CLI::IsMember({"ce", "oxa"}));
  toy_cmd->add_option("--alpha", tc.alpha, "UL weight")->capture_default_str();
  toy_cmd->add_option("--steps", tc.steps, "Full-batch steps")->capture_default_str();
  toy_cmd->add_option("--step-size", tc.step_size, "Learning rate")->capture_default_str();
  toy_cmd->add_option("--seed", tc.seed, "Seed for evaluation rollouts")->capture_default_str();
  toy_cmd->add_option("--task", task_path, "Task JSON (default: built-in entropy task)");
  toy_cmd->add_option("--trace-out", trace_path, "Write the per-step trace CSV here");
  toy_cmd->add_option("--task-out", task_out, "Write the task JSON in use here");
  toy_cmd->add_option("--subset", subset, "Correct sequences to train on: all | high-ppl | low-ppl")
      ->check(CLI::IsMember({"all", "high-ppl", "low-ppl"}));
  toy_cmd->add_option("--ppl-threshold", split_ppl, "PPL split for --subset")->capture_default_str();
  toy_cmd->add_option("--eval-samples", eval_samples, "Rollouts per prompt for pass@k")
      ->capture_default_str();
  toy_cmd->add_option("--eval-k", eval_k, "k for pass@k")->capture_default_str();
  toy_cmd->add_option("--temperature", temperature, "Sampling temperature for evaluation")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kValidation);
  }

  cfg.input = in_path;
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (!rollouts_path.empty()) cfg.rollouts = rollouts_path;

  auto require_input = [&] {
    if (in_path.empty()) throw ValidationError("--input is required");
  };

  if (*verify_cmd) {
    require_input();
    VerifyCounts counts;
    save_corpus(verify_corpus(load_corpus(in_path), &counts), out_path);
    fmt::print("verified: correct={} incorrect={} unparseable={}\n", counts.correct,
               counts.incorrect, counts.unparseable);
  } else if (*ppl_cmd) {
    require_input();
    const Corpus out = fill_perplexity(load_corpus(in_path));
    save_corpus(out, out_path);
    fmt::print("ppl filled for {} records\n", out.size());
  } else if (*promote_cmd) {
    require_input();
    const Corpus correct = filter_verified(load_corpus(in_path), true);
    const PromotionResult result = select_promotion(correct, cfg.target, cfg.promotion);
    save_corpus(result.selected, out_path);
    if (!report_path.empty()) write_text(report_path, allocation_report_csv(result.allocation));
    fmt::print("promoted {} of {} candidates ({} outside the PPL range, {} bins)\n",
               result.selected.size(), correct.size(), result.discarded,
               result.allocation.bin_count);
  } else if (*suppress_cmd) {
    require_input();
    const Corpus incorrect = filter_verified(load_corpus(in_path), false);
    Corpus picked;
    if (!incorrect.empty()) {
      picked = select_extreme(incorrect, cfg.suppress_count, cfg.suppress_direction,
                              cfg.suppress_max_per_query);
    }
    save_corpus(picked, out_path);
    fmt::print("suppressed {} of {} candidates\n", picked.size(), incorrect.size());
  } else if (*run_cmd) {
    require_input();
    const auto manifest = run_pipeline(cfg);
    std::cout << manifest["counts"].dump(2) << "\n";
  } else if (*sweep_cmd) {
    require_input();
    auto intervals = cfg.intervals;
    if (!interval_args.empty()) {
      intervals.clear();
      for (const auto& arg : interval_args) {
        const auto colon = arg.find(':');
        if (colon == std::string::npos) {
          throw ValidationError(fmt::format("interval '{}' must be LOW:HIGH", arg));
        }
        try {
          intervals.emplace_back(std::stod(arg.substr(0, colon)), std::stod(arg.substr(colon + 1)));
        } catch (const std::exception&) {
          throw ValidationError(fmt::format("interval '{}' must be LOW:HIGH", arg));
        }
      }
    }
    const auto rows = sweep_ppl_intervals(cfg, intervals);
    std::cout << sweep_summary_csv(rows);
  } else if (*grad_cmd) {
    gc.loss = loss_name == "ce" ? LossKind::kCe : LossKind::kUl;
    const GradCheckReport report = grad_check(gc);
    std::cout << report.to_string() << "\n";
    if (!report.passed) return static_cast<int>(ExitCode::kInvariant);
  } else if (*toy_cmd) {
    tc.objective = objective_name == "ce" ? ToyObjective::kCeOnly : ToyObjective::kOxaFull;
    ToyTask task = task_path.empty() ? entropy_dynamics_task() : load_task(task_path);
    ToyModel model = make_model(task);
    if (subset != "all") {
      auto split = split_by_perplexity(model, task, split_ppl);
      task = subset == "high-ppl" ? split.high : split.low;
    }
    if (!task_out.empty()) write_text(task_out, task_to_json(task).dump(2) + "\n");
    const TrainResult result = train(model, task, tc);
    if (!trace_path.empty()) write_text(trace_path, trace_csv(result.trace));
    const TraceRow& first = result.trace.front();
    const TraceRow& last = result.trace.back();
    fmt::print("objective={} alpha={} steps={} step_size={}\n", to_string(tc.objective), tc.alpha,
               tc.steps, tc.step_size);
    fmt::print("mean_entropy: {:.6f} -> {:.6f}\n", first.mean_entropy, last.mean_entropy);
    fmt::print("loss_combined: {:.6f} -> {:.6f} (ce {:.6f}, ul {:.6f})\n", first.loss_combined,
               last.loss_combined, last.loss_ce, last.loss_ul);
    fmt::print("clamp_events={}\n", result.clamp_events);
    if (eval_samples > 0 && eval_k >= 1 && eval_k <= eval_samples) {
      const auto eval =
          evaluate_pass_at_k(result.model, task, eval_samples, eval_k, temperature, tc.seed);
      fmt::print("pass@1={:.4f} pass@{}={:.4f} (n={}, T={})\n", eval.pass_at_1, eval.k,
                 eval.pass_at_k, eval.samples, temperature);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const oxa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return static_cast<int>(oxa::ExitCode::kInvariant);
  }
}
