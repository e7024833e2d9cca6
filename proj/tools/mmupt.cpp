#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mmupt/mmupt.hpp"

using namespace mmupt;

namespace {

std::istream& open_input(const std::string& path, std::ifstream& file) {
  if (path == "-") return std::cin;
  file.open(path);
  if (!file) throw std::runtime_error("cannot read " + path);
  return file;
}

int cmd_train(const std::string& config_path, const std::string& tasks_path, const std::string& out,
              std::optional<double> init_p, double designated, const std::string& init_ckpt) {
  const TrainConfig cfg = load_config(config_path);
  const TaskSet tasks = load_taskset(tasks_path);
  const auto policy = make_policy(cfg.policy_kind, tasks);
  PolicyParams init(policy->dim());
  if (!init_ckpt.empty()) {
    const auto ck = read_checkpoint(init_ckpt);
    if (ck.kind != cfg.policy_kind) throw std::runtime_error("initial checkpoint is for a different policy kind");
    init = ck.params;
  } else if (init_p) {
    init = policy->init_with_accuracy(tasks, *init_p,
                                      designated > 0.0 ? WrongMass::concentrated(designated) : WrongMass::uniform());
  }
  TrainOptions opts;
  opts.out_dir = out;
  try {
    const auto run = train(cfg, tasks, init, opts);
    write_checkpoint((std::filesystem::path(out) / "final.ckpt").string(), cfg.policy_kind, run.params);
    const auto& last = run.metrics.back();
    std::printf("steps %llu  mean_majority_reward %.4f  greedy_accuracy %s\n",
                static_cast<unsigned long long>(run.steps), last.mean_majority_reward,
                last.greedy_accuracy ? std::to_string(*last.greedy_accuracy).c_str() : "n/a");
    std::printf("run directory: %s\n", out.c_str());
  } catch (const TrainAborted& e) {
    write_checkpoint((std::filesystem::path(out) / "last_valid.ckpt").string(), cfg.policy_kind, e.last_valid());
    std::fprintf(stderr, "%s\nlast valid parameters: %s/last_valid.ckpt\n", e.what(), out.c_str());
    return 2;
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& tasks_path, const std::string& mode_name,
             std::size_t samples, std::uint64_t seed, const std::string& report) {
  const auto ck = read_checkpoint(ckpt_path);
  const TaskSet tasks = load_taskset(tasks_path);
  const auto policy = make_policy(ck.kind, tasks);
  AccuracyMode mode = AccuracyMode::greedy();
  if (mode_name == "sampled") mode = AccuracyMode::sampled(samples, seed);
  else if (mode_name == "expected") mode = AccuracyMode::expected();
  const auto rep = evaluate(*policy, ck.params, tasks, mode, report);
  std::printf("%s accuracy %.6f over %zu tasks\n", mode.name().c_str(), rep.accuracy, tasks.size());
  if (!report.empty()) std::printf("per-task report: %s\n", report.c_str());
  return 0;
}

int cmd_suite(const std::string& name, const std::string& out) {
  const auto rep = run_experiment_suite(suite_from_string(name));
  if (!out.empty()) write_suite(out, rep);
  auto j = to_json(rep);
  j.erase("curves");  // in report.json when --out is given
  std::cout << j.dump(2) << '\n';
  return rep.pass() ? 0 : 1;
}

int cmd_synth(const std::string& strategy, const std::string& seed_path, std::size_t per_seed, std::uint64_t seed,
              const std::string& out) {
  const TaskSet seeds = load_taskset(seed_path);
  TaskSet result;
  result.seed = seed;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const Task& s = seeds.tasks[i];
    CounterRng rng(stream_key({seed, hash_string(s.id()), i}));
    for (std::size_t k = 0; k < per_seed; ++k) {
      if (strategy == "in_context") {
        result.tasks.push_back(synthesize_in_context(s, rng));
      } else {
        DirectSynthesisOptions opt;
        opt.answer_count = s.answer_space().size();
        result.tasks.push_back(synthesize_direct(s.features(), rng, opt));
      }
    }
  }
  validate(result);
  if (out.empty() || out == "-") write_taskset(std::cout, result);
  else save_taskset(out, result);
  return 0;
}

int cmd_extract(const std::string& in_path) {
  std::ifstream file;
  std::istream& in = open_input(in_path, file);
  std::string line;
  while (std::getline(in, line)) {
    const auto a = extract(line);
    std::cout << to_string(a.kind) << '\t' << a.canonical << '\n';
  }
  return 0;
}

int cmd_binomial(double p, std::uint64_t n, bool inclusive) {
  const BinomialVoteModel m{n, p};
  const double strict = majority_success_prob(m, MajorityRule::strict);
  const double incl = majority_success_prob(m, MajorityRule::inclusive);
  std::printf("n = %llu, p = %.17g\n", static_cast<unsigned long long>(n), p);
  std::printf("strict    P(X > n/2)        = %.12f\n", strict);
  std::printf("inclusive P(X >= ceil(n/2)) = %.12f\n", incl);
  const auto rule = inclusive ? MajorityRule::inclusive : MajorityRule::strict;
  std::printf("terms (%s):\n", inclusive ? "inclusive" : "strict");
  for (const auto& [i, t] : majority_terms(m, rule))
    std::printf("  i = %llu  C(n,i) p^i (1-p)^(n-i) = %.12e\n", static_cast<unsigned long long>(i), t);
  return 0;
}

int cmd_gen_tasks(const std::string& family, std::size_t count, std::uint64_t seed, std::size_t answers,
                  const std::string& out) {
  const TaskSet set = generate_tasks(family, count, seed, answers);
  if (out.empty() || out == "-") write_taskset(std::cout, set);
  else save_taskset(out, set);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Majority-vote GRPO on synthetic tasks with toy policies"};
  app.require_subcommand(1);

  std::string config, tasks, out = "run", ckpt, report, strategy, seed_tasks, in, suite_name, family = "linear",
                                    mode = "greedy", init_ckpt;
  std::optional<double> init_p;
  double designated = 0.0, p = 0.0;
  std::uint64_t n = 1, seed = 0;
  std::size_t samples = 100, per_seed = 1, count = 50, answers = 4;
  bool inclusive = false;

  auto* train_cmd = app.add_subcommand("train", "Train from a config and a task file");
  train_cmd->add_option("--config", config, "key = value config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--tasks", tasks, "task file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out, "run directory")->capture_default_str();
  train_cmd->add_option("--init-p", init_p, "start from a policy with this accuracy on every task");
  train_cmd->add_option("--designated-wrong", designated, "with --init-p: mass on one wrong answer");
  train_cmd->add_option("--init-ckpt", init_ckpt, "start from a checkpoint")->check(CLI::ExistingFile);

  auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--tasks", tasks, "task file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--mode", mode, "greedy, sampled or expected")
      ->check(CLI::IsMember({"greedy", "sampled", "expected"}))
      ->capture_default_str();
  eval_cmd->add_option("--samples", samples, "samples per task in sampled mode")->capture_default_str();
  eval_cmd->add_option("--seed", seed, "sampling seed");
  eval_cmd->add_option("--report", report, "per-task report file");

  auto* suite_cmd = app.add_subcommand("suite", "Run a built-in experiment");
  suite_cmd->add_option("--name", suite_name, "improve, degrade or dynamics")
      ->required()
      ->check(CLI::IsMember({"improve", "degrade", "dynamics"}));
  suite_cmd->add_option("--out", out, "directory for report.json and metric logs");

  auto* synth_cmd = app.add_subcommand("synth", "Synthesize new tasks from seed tasks");
  synth_cmd->add_option("--strategy", strategy, "in_context or direct")
      ->required()
      ->check(CLI::IsMember({"in_context", "direct"}));
  synth_cmd->add_option("--seed-tasks", seed_tasks, "task file")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("--per-seed", per_seed, "tasks per seed task")->capture_default_str();
  synth_cmd->add_option("--seed", seed, "synthesis seed");
  synth_cmd->add_option("--out", out, "output task file (default stdout)");

  auto* extract_cmd = app.add_subcommand("extract", "Extract canonical answers, one response per line");
  extract_cmd->add_option("--in", in, "input file, - for stdin")->required();

  auto* binom_cmd = app.add_subcommand("analyze-binomial", "Majority-vote success probability");
  binom_cmd->add_option("--p", p, "per-sample accuracy in (0, 1)")->required();
  binom_cmd->add_option("--n", n, "number of samples")->required();
  binom_cmd->add_flag("--inclusive", inclusive, "list terms from ceil(n/2) instead of floor(n/2) + 1");

  auto* gen_cmd = app.add_subcommand("gen-tasks", "Generate a task file");
  gen_cmd->add_option("--family", family, "linear, modular, intersection or choice")->capture_default_str();
  gen_cmd->add_option("--count", count, "number of tasks")->capture_default_str();
  gen_cmd->add_option("--seed", seed, "generation seed");
  gen_cmd->add_option("--answers", answers, "answer-space size")->capture_default_str();
  gen_cmd->add_option("--out", out, "output task file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(config, tasks, out, init_p, designated, init_ckpt);
    if (*eval_cmd) return cmd_eval(ckpt, tasks, mode, samples, seed, report);
    if (*suite_cmd) return cmd_suite(suite_name, suite_cmd->count("--out") ? out : std::string());
    if (*synth_cmd) return cmd_synth(strategy, seed_tasks, per_seed, seed, synth_cmd->count("--out") ? out : "");
    if (*extract_cmd) return cmd_extract(in);
    if (*binom_cmd) return cmd_binomial(p, n, inclusive);
    if (*gen_cmd) return cmd_gen_tasks(family, count, seed, answers, gen_cmd->count("--out") ? out : "");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
