#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "support.hpp"

using namespace mmupt;
using mmupt::test::read_file;
using mmupt::test::scratch_dir;

namespace {

TrainConfig small_config(std::uint64_t seed = 3) {
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.episodes = 2;
  c.seed = seed;
  c.log_wall_time = false;
  c.eval_every = 10;
  return c;
}

std::string config_text(const TrainConfig& c) {
  std::ostringstream out;
  write_config(out, c);
  return out.str();
}

std::vector<PolicyParams> trajectory(const TrainConfig& cfg, const TaskSet& tasks, const PolicyParams& init) {
  std::vector<PolicyParams> traj;
  TrainOptions opts;
  opts.workers = 1;
  opts.on_step = [&](std::uint64_t, const PolicyParams& p) { traj.push_back(p); };
  train(cfg, tasks, init, opts);
  return traj;
}

}  // namespace

TEST(Config, DefaultsFollowTheReferenceSetup) {
  const TrainConfig c;
  EXPECT_EQ(c.group_size, 8u);
  EXPECT_EQ(c.clip_eps, 0.2);
  EXPECT_EQ(c.kl_beta, 0.01);
  EXPECT_EQ(c.learning_rate, 1e-6);
  EXPECT_EQ(c.weight_decay, 1e-2);
  EXPECT_EQ(c.grad_clip_norm, 1.0);
  EXPECT_EQ(c.episodes, 15u);
  EXPECT_EQ(c.batch_tasks_per_step, 1u);
  EXPECT_EQ(c.temperature, 1.0);
  EXPECT_EQ(c.inner_epochs, 1u);
  EXPECT_FALSE(c.skip_zero_variance);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParseAndEcho) {
  std::istringstream in(
      "# toy run\n"
      "group_size = 6\n"
      "learning_rate = 0.03\n\n"
      "reward_mode = ground_truth\n"
      "policy_kind = seq\n"
      "std_mode = sample\n"
      "skip_zero_variance = true\n");
  const auto c = parse_config(in);
  EXPECT_EQ(c.group_size, 6u);
  EXPECT_EQ(c.learning_rate, 0.03);
  EXPECT_EQ(c.reward_mode, RewardMode::ground_truth);
  EXPECT_EQ(c.policy_kind, PolicyKind::seq);
  EXPECT_EQ(c.std_mode, StdMode::sample);
  EXPECT_TRUE(c.skip_zero_variance);
  EXPECT_EQ(c.kl_beta, 0.01);
  std::istringstream again(config_text(c));
  EXPECT_EQ(config_text(parse_config(again)), config_text(c));
}

TEST(Config, RoundTripsAwkwardReals) {
  TrainConfig c;
  c.learning_rate = 0.1 + 0.2;
  c.clip_eps = 1.0 / 3.0;
  std::istringstream in(config_text(c));
  const auto back = parse_config(in);
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  EXPECT_EQ(back.clip_eps, c.clip_eps);
}

TEST(Config, RejectsBadInput) {
  for (const char* text : {"nope = 1\n", "group_size = 1\n", "clip_eps = 1.5\n", "kl_beta = -1\n",
                           "learning_rate = abc\n", "reward_mode = vibes\n", "group_size\n", "episodes = 0\n",
                           "skip_zero_variance = maybe\n", "group_size = -3\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(parse_config(in), ConfigError) << text;
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  PolicyParams p(std::vector<double>{0.0, -0.0, 1e-310, -3.5, 1.0 / 3.0, 6.02e23});
  for (auto kind : {PolicyKind::bandit, PolicyKind::seq}) {
    const auto c = decode_checkpoint(encode_checkpoint(kind, p));
    EXPECT_EQ(c.kind, kind);
    ASSERT_EQ(c.params.dim(), p.dim());
    for (std::size_t k = 0; k < p.dim(); ++k)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(c.params.values[k]), std::bit_cast<std::uint64_t>(p.values[k]));
  }
  const auto dir = scratch_dir("ckpt");
  write_checkpoint((dir / "x.ckpt").string(), PolicyKind::seq, p);
  EXPECT_EQ(read_checkpoint((dir / "x.ckpt").string()).params, p);
}

TEST(Checkpoint, LayoutIsLittleEndian) {
  const auto bytes = encode_checkpoint(PolicyKind::seq, PolicyParams(std::vector<double>{1.0}));
  ASSERT_EQ(bytes.size(), 8u + 4 + 1 + 8 + 8);
  EXPECT_EQ(bytes.substr(0, 8), "UPTCKPT1");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[12], 1);
  EXPECT_EQ(bytes[13], 1);
  // 1.0 = 0x3ff0000000000000, low byte first at offset 21.
  EXPECT_EQ(static_cast<unsigned char>(bytes[27]), 0xf0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[28]), 0x3f);
}

TEST(Checkpoint, RejectsCorruptInput) {
  const auto good = encode_checkpoint(PolicyKind::bandit, PolicyParams(3, 1.5));
  EXPECT_THROW(decode_checkpoint("NOTACKPT"), CheckpointError);
  EXPECT_THROW(decode_checkpoint(good.substr(0, good.size() - 1)), CheckpointError);
  EXPECT_THROW(decode_checkpoint(good + "x"), CheckpointError);
  auto bad_version = good;
  bad_version[8] = 2;
  EXPECT_THROW(decode_checkpoint(bad_version), CheckpointError);
  auto bad_tag = good;
  bad_tag[12] = 7;
  EXPECT_THROW(decode_checkpoint(bad_tag), CheckpointError);
  EXPECT_THROW(read_checkpoint("/nonexistent/x.ckpt"), CheckpointError);
}

TEST(MetricRecord, JsonRoundTrip) {
  MetricRecord r;
  r.step = 7;
  r.episode = 2;
  r.mean_majority_reward = 0.625;
  r.mean_entropy = 0.3;
  r.clip_fraction = 0.125;
  const auto j = to_json(r);
  for (const char* key : {"step", "episode", "mean_majority_reward", "mean_entropy", "greedy_accuracy", "clip_fraction",
                          "mean_kl", "grad_norm", "objective", "wall_ms"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_TRUE(j["greedy_accuracy"].is_null());
  const auto back = metric_from_json(j);
  EXPECT_EQ(back.step, 7u);
  EXPECT_EQ(back.mean_entropy, r.mean_entropy);
  EXPECT_FALSE(back.greedy_accuracy);
}

TEST(Split, HoldoutIsDeterministicAndDisjoint) {
  const auto tasks = generate_tasks("linear", 500, 1);
  const auto a = split_tasks(tasks, 0.2);
  const auto b = split_tasks(tasks, 0.2);
  EXPECT_EQ(a.train.size() + a.eval.size(), tasks.size());
  EXPECT_EQ(a.eval.size(), b.eval.size());
  EXPECT_NEAR(static_cast<double>(a.eval.size()) / 500.0, 0.2, 0.06);
  for (const auto& t : a.eval.tasks) EXPECT_TRUE(is_held_out(t, 0.2));
  for (const auto& t : a.train.tasks) EXPECT_FALSE(is_held_out(t, 0.2));
  const auto none = split_tasks(tasks, 0.0);
  EXPECT_EQ(none.train.size(), tasks.size());
  EXPECT_EQ(none.eval.size(), tasks.size());
}

TEST(Train, UnanimousPolicyWithoutKlStaysPut) {
  const auto tasks = generate_tasks("linear", 10, 2, 4);
  BanditPolicy pol(tasks);
  const auto init = pol.init_with_accuracy(tasks, 1 - 1e-9, WrongMass::uniform());
  auto cfg = small_config();
  cfg.kl_beta = 0.0;
  cfg.weight_decay = 0.0;  // decoupled decay would shrink θ even at zero gradient
  const auto run = train(cfg, tasks, init, {});
  EXPECT_EQ(run.params, init);
  for (const auto& m : run.metrics) {
    EXPECT_EQ(m.grad_norm, 0.0);
    EXPECT_EQ(m.mean_majority_reward, 1.0);
  }
}

TEST(Train, MetricLogStepsIncreaseAndCheckpointsRoundTrip) {
  const auto tasks = generate_tasks("modular", 12, 2, 4);
  BanditPolicy pol(tasks);
  const auto init = pol.init_with_accuracy(tasks, 0.6, WrongMass::uniform());
  const auto cfg = small_config();
  const auto dir = scratch_dir("runlog");
  TrainOptions opts;
  opts.out_dir = dir;
  const auto run = train(cfg, tasks, init, opts);
  std::istringstream log(read_file(dir / "metrics.log"));
  std::string line;
  std::uint64_t prev = 0;
  std::size_t n = 0;
  while (std::getline(log, line)) {
    const auto r = metric_from_json(nlohmann::json::parse(line));
    EXPECT_GT(r.step, prev);
    prev = r.step;
    ++n;
  }
  EXPECT_EQ(n, run.metrics.size());
  EXPECT_TRUE(run.metrics.back().greedy_accuracy.has_value());
  for (std::size_t ep = 1; ep <= cfg.episodes; ++ep)
    EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / ("ep" + std::to_string(ep) + ".ckpt")));
  const auto last = read_checkpoint((dir / "checkpoints" / "ep2.ckpt").string());
  EXPECT_EQ(last.kind, PolicyKind::bandit);
  EXPECT_EQ(last.params, run.params);
}

TEST(Train, ResolvedConfigReproducesTheRun) {
  const auto tasks = generate_tasks("linear", 10, 4, 4);
  BanditPolicy pol(tasks);
  const auto init = pol.init_with_accuracy(tasks, 0.6, WrongMass::uniform());
  auto cfg = small_config(11);
  cfg.group_size = 5;
  const auto a = scratch_dir("echo_a");
  const auto b = scratch_dir("echo_b");
  TrainOptions oa;
  oa.out_dir = a;
  train(cfg, tasks, init, oa);
  const auto resolved = load_config((a / "config.resolved").string());
  TrainOptions ob;
  ob.out_dir = b;
  train(resolved, tasks, init, ob);
  EXPECT_EQ(read_file(a / "metrics.log"), read_file(b / "metrics.log"));
  EXPECT_EQ(read_file(a / "checkpoints" / "ep2.ckpt"), read_file(b / "checkpoints" / "ep2.ckpt"));
  EXPECT_EQ(read_file(a / "config.resolved"), read_file(b / "config.resolved"));
}

TEST(Train, WorkerCountDoesNotChangeResults) {
  const auto tasks = generate_tasks("choice", 8, 4, 5);
  SeqPolicy pol(tasks);
  const auto init = pol.init_with_accuracy(tasks, 0.5, WrongMass::uniform());
  auto cfg = small_config(5);
  cfg.policy_kind = PolicyKind::seq;
  cfg.batch_tasks_per_step = 3;
  cfg.inner_epochs = 2;
  std::vector<std::string> logs, ckpts;
  for (const char* workers : {"1", "4"}) {
    ::setenv("UPT_WORKERS", workers, 1);
    const auto dir = scratch_dir(std::string("workers") + workers);
    TrainOptions opts;
    opts.out_dir = dir;
    train(cfg, tasks, init, opts);
    logs.push_back(read_file(dir / "metrics.log"));
    ckpts.push_back(read_file(dir / "checkpoints" / "ep2.ckpt"));
  }
  ::unsetenv("UPT_WORKERS");
  EXPECT_FALSE(logs[0].empty());
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(ckpts[0], ckpts[1]);
}

TEST(Train, PoisonedTruthsChangeNothing) {
  const auto tasks = generate_tasks("intersection", 10, 6, 4);
  BanditPolicy pol(tasks);
  const auto init = pol.init_with_accuracy(tasks, 0.55, WrongMass::uniform());
  const auto cfg = small_config(6);
  const auto clean = trajectory(cfg, tasks, init);
  const auto poisoned = trajectory(cfg, poison_truths(tasks), init);
  ASSERT_EQ(clean.size(), poisoned.size());
  for (std::size_t s = 0; s < clean.size(); ++s) EXPECT_EQ(clean[s], poisoned[s]) << "step " << s + 1;
}

TEST(Train, SeqPolicyInnerEpochsExerciseClipping) {
  const auto tasks = generate_tasks("linear", 6, 8, 4);
  SeqPolicy pol(tasks);
  const auto init = pol.init_with_accuracy(tasks, 0.5, WrongMass::uniform());
  auto cfg = small_config(8);
  cfg.policy_kind = PolicyKind::seq;
  cfg.inner_epochs = 4;
  cfg.learning_rate = 0.1;
  const auto run = train(cfg, tasks, init, {});
  double clip = 0.0, kl = 0.0;
  for (const auto& m : run.metrics) {
    clip += m.clip_fraction;
    kl += m.mean_kl;
    EXPECT_GE(m.clip_fraction, 0.0);
    EXPECT_LE(m.clip_fraction, 1.0);
  }
  EXPECT_GT(clip, 0.0);
  EXPECT_GT(kl, 0.0);
}

TEST(Train, AbortsOnNonFiniteParameters) {
  const auto tasks = generate_tasks("linear", 4, 9, 4);
  BanditPolicy pol(tasks);
  const auto init = pol.init_with_accuracy(tasks, 0.5, WrongMass::uniform());
  auto cfg = small_config(9);
  cfg.learning_rate = 1e308;
  cfg.weight_decay = 0.0;
  try {
    train(cfg, tasks, init, {});
    FAIL() << "expected TrainAborted";
  } catch (const TrainAborted& e) {
    EXPECT_TRUE(e.last_valid().all_finite());
    EXPECT_GE(e.step(), 1u);
  }
}

TEST(Train, RejectsBadInputs) {
  const auto tasks = generate_tasks("linear", 4, 9, 4);
  BanditPolicy pol(tasks);
  const auto init = pol.init_with_accuracy(tasks, 0.5, WrongMass::uniform());
  EXPECT_THROW(train(small_config(), TaskSet{}, init, {}), std::invalid_argument);
  EXPECT_THROW(train(small_config(), tasks, PolicyParams(3), {}), std::invalid_argument);
  auto nan = init;
  nan.values[0] = NAN;
  EXPECT_THROW(train(small_config(), tasks, nan, {}), std::invalid_argument);
}

TEST(Train, SupervisedAtLeastAsFastAsMajority) {
  // Greedy accuracy starts at 1.0 from p0 = 0.7, so progress is measured by
  // the probability of sampling the correct answer.
  double gain_majority = 0.0, gain_truth = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto tasks = generate_tasks("linear", 30, seed, 4);
    BanditPolicy pol(tasks);
    const auto init = pol.init_with_accuracy(tasks, 0.7, WrongMass::uniform());
    auto cfg = small_config(seed);
    cfg.episodes = 4;
    cfg.holdout_fraction = 0.0;
    const double before = accuracy(pol, init, tasks, AccuracyMode::expected());
    const auto maj = train(cfg, tasks, init, {});
    cfg.reward_mode = RewardMode::ground_truth;
    const auto sup = train(cfg, tasks, init, {});
    const double a = accuracy(pol, maj.params, tasks, AccuracyMode::expected()) - before;
    const double b = accuracy(pol, sup.params, tasks, AccuracyMode::expected()) - before;
    EXPECT_GT(a, 0.0);
    EXPECT_GT(b, 0.0);
    EXPECT_EQ(accuracy(pol, maj.params, tasks, AccuracyMode::greedy()), 1.0);
    EXPECT_EQ(accuracy(pol, sup.params, tasks, AccuracyMode::greedy()), 1.0);
    gain_majority += a / 5;
    gain_truth += b / 5;
  }
  EXPECT_GE(gain_truth, gain_majority);
}

TEST(Evaluate, WritesPerTaskReport) {
  const auto tasks = generate_tasks("choice", 6, 2, 4);
  BanditPolicy pol(tasks);
  const auto th = pol.init_with_accuracy(tasks, 0.8, WrongMass::uniform());
  const auto dir = scratch_dir("eval");
  const auto rep = evaluate(pol, th, tasks, AccuracyMode::greedy(), dir / "report.jsonl", 1);
  EXPECT_EQ(rep.accuracy, 1.0);
  std::istringstream in(read_file(dir / "report.jsonl"));
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  EXPECT_EQ(nlohmann::json::parse(line)["accuracy"].get<double>(), 1.0);
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["score"].get<double>(), 1.0);
    ++rows;
  }
  EXPECT_EQ(rows, tasks.size());
}

TEST(Suites, DynamicsTrendsHold) {
  const auto rep = run_experiment_suite(SuiteName::dynamics, 1);
  EXPECT_TRUE(rep.pass());
  const auto j = to_json(rep);
  EXPECT_EQ(j["curves"].size(), 300u);
  EXPECT_EQ(j["setup"]["learning_rate"].get<double>(), 1e-2);
}

TEST(Suites, NamesParse) {
  EXPECT_EQ(suite_from_string("degrade"), SuiteName::degrade);
  EXPECT_THROW(suite_from_string("other"), std::invalid_argument);
}
