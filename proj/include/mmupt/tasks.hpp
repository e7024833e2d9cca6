#pragma once

// Synthetic question environments and the two question-synthesis strategies.
//
// A Task carries its ground truth, but only evaluation and the supervised
// baseline may read it, through TruthAccess. Sampling, voting and the GRPO
// update take Task by reference and never see the field.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "answer.hpp"
#include "json.hpp"
#include "rng.hpp"

namespace mmupt {

inline constexpr int kTaskSetSchemaVersion = 1;

class Task {
 public:
  Task() = default;
  Task(std::string id, std::string family, std::vector<std::int64_t> parameters, std::vector<double> features,
       std::vector<ExtractedAnswer> answer_space, ExtractedAnswer truth)
      : id_(std::move(id)),
        family_(std::move(family)),
        parameters_(std::move(parameters)),
        features_(std::move(features)),
        answer_space_(std::move(answer_space)),
        truth_(std::move(truth)) {}

  const std::string& id() const noexcept { return id_; }
  const std::string& family() const noexcept { return family_; }
  const std::vector<std::int64_t>& parameters() const noexcept { return parameters_; }
  const std::vector<double>& features() const noexcept { return features_; }
  const std::vector<ExtractedAnswer>& answer_space() const noexcept { return answer_space_; }

 private:
  friend struct TruthAccess;

  std::string id_;
  std::string family_;
  std::vector<std::int64_t> parameters_;
  std::vector<double> features_;
  std::vector<ExtractedAnswer> answer_space_;
  ExtractedAnswer truth_;
};

/// The only road to a task's label. Used by evaluation, supervised rewards and
/// experiment setup; grep for it to audit label use.
struct TruthAccess {
  static const ExtractedAnswer& truth(const Task& task) noexcept { return task.truth_; }
  static void replace(Task& task, ExtractedAnswer truth) { task.truth_ = std::move(truth); }
};

struct TaskSet {
  std::vector<Task> tasks;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return tasks.size(); }
  bool empty() const noexcept { return tasks.empty(); }
};

class TaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- template families ------------------------------------------------------

namespace family {
inline constexpr std::string_view linear = "linear";              // a*x + b = c, solve for x
inline constexpr std::string_view modular = "modular";            // (a*x + b) mod m
inline constexpr std::string_view intersection = "intersection";  // x where m1*x + c1 = m2*x + c2
inline constexpr std::string_view choice = "choice";              // next term of a progression, options A..E
inline constexpr std::string_view opaque = "static";              // no template parameters
}  // namespace family

inline const std::vector<std::string>& parametric_families() {
  static const std::vector<std::string> names{std::string(family::linear), std::string(family::modular),
                                              std::string(family::intersection), std::string(family::choice)};
  return names;
}

inline bool is_parametric(std::string_view name) {
  const auto& f = parametric_families();
  return std::find(f.begin(), f.end(), name) != f.end();
}

/// Ground truth of a template instance, computed from its parameters.
inline ExtractedAnswer evaluate_template(std::string_view fam, const std::vector<std::int64_t>& p) {
  auto need = [&](std::size_t n) {
    if (p.size() != n) throw TaskError("template " + std::string(fam) + " expects " + std::to_string(n) + " parameters");
  };
  if (fam == family::linear) {
    need(3);
    if (p[0] == 0) throw TaskError("linear: a must be nonzero");
    return numeric_answer(make_rational(p[2] - p[1], p[0]));
  }
  if (fam == family::modular) {
    need(4);
    if (p[3] < 2) throw TaskError("modular: modulus must be >= 2");
    std::int64_t r = (p[0] * p[1] + p[2]) % p[3];
    if (r < 0) r += p[3];
    return numeric_answer(Rational(r));
  }
  if (fam == family::intersection) {
    need(4);
    if (p[0] == p[2]) throw TaskError("intersection: slopes must differ");
    return numeric_answer(make_rational(p[3] - p[1], p[0] - p[2]));
  }
  if (fam == family::choice) {
    need(4);
    if (p[2] < 0 || p[2] >= p[3] || p[3] < 2 || p[3] > 5) throw TaskError("choice: bad option layout");
    return choice_answer(static_cast<char>('A' + p[2]));
  }
  throw TaskError("unknown or non-parametric template family: " + std::string(fam));
}

namespace detail {

inline std::vector<double> task_features(std::string_view fam, const std::vector<std::int64_t>& p) {
  const auto& names = parametric_families();
  const auto it = std::find(names.begin(), names.end(), fam);
  std::vector<double> f{static_cast<double>(it - names.begin())};
  for (auto v : p) f.push_back(static_cast<double>(v));
  return f;
}

// Parameters for a fresh instance. `scale` widens numeric ranges.
inline std::vector<std::int64_t> draw_parameters(std::string_view fam, std::size_t answer_count, std::int64_t scale,
                                                 CounterRng& rng) {
  if (fam == family::linear) {
    std::int64_t a = 0;
    while (a == 0) a = rng.between(-5, 5);
    const std::int64_t b = rng.between(-2 * scale, 2 * scale);
    const std::int64_t x = rng.between(-2 * scale, 2 * scale);
    return {a, b, a * x + b};
  }
  if (fam == family::modular) {
    const std::int64_t m = rng.between(std::max<std::int64_t>(5, static_cast<std::int64_t>(answer_count) + 1),
                                       std::max<std::int64_t>(13, static_cast<std::int64_t>(answer_count) + 1));
    return {rng.between(1, 3 * scale), rng.between(0, 3 * scale), rng.between(0, 3 * scale), m};
  }
  if (fam == family::intersection) {
    const std::int64_t m1 = rng.between(-6, 6);
    std::int64_t m2 = m1;
    while (m2 == m1) m2 = rng.between(-6, 6);
    return {m1, rng.between(-2 * scale, 2 * scale), m2, rng.between(-2 * scale, 2 * scale)};
  }
  if (fam == family::choice) {
    const auto options = static_cast<std::int64_t>(std::clamp<std::size_t>(answer_count, 2, 5));
    return {rng.between(-scale, scale), rng.between(1, 9), rng.between(0, options - 1), options};
  }
  throw TaskError("unknown template family: " + std::string(fam));
}

// Truth plus distinct distractors, in shuffled order.
inline std::vector<ExtractedAnswer> build_answer_space(std::string_view fam, const std::vector<std::int64_t>& p,
                                                       const ExtractedAnswer& truth, std::size_t answer_count,
                                                       CounterRng& rng) {
  std::vector<ExtractedAnswer> space;
  if (fam == family::choice) {
    for (std::int64_t i = 0; i < p[3]; ++i) space.push_back(choice_answer(static_cast<char>('A' + i)));
    return space;
  }
  space.push_back(truth);
  const Rational base = *truth.value;
  std::int64_t spread = 2;
  while (space.size() < answer_count) {
    Rational candidate = base + Rational(rng.between(-spread, spread));
    if (fam == family::modular) {
      candidate = Rational(rng.between(0, p[3] - 1));
    }
    ExtractedAnswer a = numeric_answer(candidate);
    const bool dup = std::any_of(space.begin(), space.end(), [&](const auto& s) { return equivalent(s, a); });
    if (!dup) space.push_back(std::move(a));
    else ++spread;
  }
  shuffle(std::span<ExtractedAnswer>(space), rng);
  return space;
}

inline Task instantiate(std::string id, std::string_view fam, std::vector<std::int64_t> params,
                        std::size_t answer_count, CounterRng& rng) {
  ExtractedAnswer truth = evaluate_template(fam, params);
  auto space = build_answer_space(fam, params, truth, answer_count, rng);
  auto features = task_features(fam, params);
  return Task(std::move(id), std::string(fam), std::move(params), std::move(features), std::move(space),
              std::move(truth));
}

inline std::string hex_id(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(12, '0');
  for (int i = 11; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace detail

// --- validation -------------------------------------------------------------

inline void validate(const Task& task) {
  const auto& space = task.answer_space();
  if (space.size() < 2) throw TaskError("task " + task.id() + ": answer space needs at least 2 answers");
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (space[i].is_none()) throw TaskError("task " + task.id() + ": empty answer in answer space");
    for (std::size_t j = i + 1; j < space.size(); ++j) {
      if (equivalent(space[i], space[j])) throw TaskError("task " + task.id() + ": duplicate answers in answer space");
    }
  }
  const auto& truth = TruthAccess::truth(task);
  if (std::none_of(space.begin(), space.end(), [&](const auto& a) { return equivalent(a, truth); }))
    throw TaskError("task " + task.id() + ": truth not in answer space");
}

inline void validate(const TaskSet& set) {
  std::unordered_set<std::string> ids;
  for (const auto& t : set.tasks) {
    if (!ids.insert(t.id()).second) throw TaskError("duplicate task id: " + t.id());
    validate(t);
  }
}

// --- generation and synthesis -----------------------------------------------

inline TaskSet generate_tasks(std::string_view fam, std::size_t count, std::uint64_t seed,
                              std::size_t answer_count = 4) {
  if (!is_parametric(fam)) throw TaskError("unknown template family: " + std::string(fam));
  if (answer_count < 2) throw TaskError("answer_count must be >= 2");
  TaskSet set;
  set.seed = seed;
  set.tasks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    CounterRng rng(stream_key({seed, hash_string(fam), i}));
    auto params = detail::draw_parameters(fam, answer_count, 10, rng);
    set.tasks.push_back(detail::instantiate(std::string(fam) + "-" + std::to_string(seed) + "-" + std::to_string(i),
                                            fam, std::move(params), answer_count, rng));
  }
  return set;
}

/// Keeps the seed's template family and rewrites its conditions: parameters
/// are redrawn until they differ from the seed's.
inline Task synthesize_in_context(const Task& seed_task, CounterRng& rng) {
  if (!is_parametric(seed_task.family()))
    throw TaskError("task " + seed_task.id() + " has no parametric template");
  const std::size_t answer_count = seed_task.answer_space().size();
  std::vector<std::int64_t> params;
  do {
    params = detail::draw_parameters(seed_task.family(), answer_count, 10, rng);
  } while (params == seed_task.parameters());
  return detail::instantiate(seed_task.id() + "~ic" + detail::hex_id(rng()), seed_task.family(), std::move(params),
                             answer_count, rng);
}

struct DirectSynthesisOptions {
  /// Relative weights over template families; defaults to uniform.
  std::vector<std::pair<std::string, double>> family_weights;
  std::size_t answer_count = 4;
};

/// Fresh question from context features alone. The family is drawn from the
/// configured weights, so the question type may differ from whatever produced
/// the features; the features set the numeric range.
inline Task synthesize_direct(const std::vector<double>& features, CounterRng& rng,
                              const DirectSynthesisOptions& options = {}) {
  std::vector<std::pair<std::string, double>> weights = options.family_weights;
  if (weights.empty()) {
    for (const auto& f : parametric_families()) weights.emplace_back(f, 1.0);
  }
  std::vector<double> probs;
  double total = 0.0;
  for (const auto& [name, w] : weights) {
    if (!is_parametric(name)) throw TaskError("unknown template family: " + name);
    if (!(w >= 0.0)) throw TaskError("family weights must be nonnegative");
    total += w;
  }
  if (!(total > 0.0)) throw TaskError("family weights sum to zero");
  for (const auto& [name, w] : weights) probs.push_back(w / total);
  const auto& fam = weights[sample_categorical(probs, rng)].first;

  double magnitude = 0.0;
  for (double f : features) magnitude += std::abs(f);
  const auto scale = 5 + static_cast<std::int64_t>(std::fmod(magnitude, 16.0));
  auto params = detail::draw_parameters(fam, options.answer_count, scale, rng);
  return detail::instantiate("direct-" + detail::hex_id(rng()), fam, std::move(params), options.answer_count, rng);
}

/// Copy of `set` whose labels are replaced by a sentinel that matches nothing
/// in any answer space. Training on it must be indistinguishable from training
/// on the original.
inline TaskSet poison_truths(const TaskSet& set) {
  TaskSet out = set;
  for (auto& t : out.tasks) TruthAccess::replace(t, canonicalize("<poisoned truth sentinel>"));
  return out;
}

// --- file format ------------------------------------------------------------
//
// Line 1: {"schema_version": 1, "seed": <u64>, "count": <n>}
// Then one JSON object per task:
//   {"id", "family", "parameters": [int...], "features": [real...],
//    "answer_space": [canonical...], "truth": canonical}
// Canonical strings re-canonicalize to themselves, so kinds are implied.

inline void write_taskset(std::ostream& out, const TaskSet& set) {
  nlohmann::json header{{"schema_version", kTaskSetSchemaVersion}, {"seed", set.seed}, {"count", set.tasks.size()}};
  out << header.dump() << '\n';
  for (const auto& t : set.tasks) {
    nlohmann::json space = nlohmann::json::array();
    for (const auto& a : t.answer_space()) space.push_back(a.canonical);
    nlohmann::json row{{"id", t.id()},           {"family", t.family()},  {"parameters", t.parameters()},
                       {"features", t.features()}, {"answer_space", space}, {"truth", TruthAccess::truth(t).canonical}};
    out << row.dump() << '\n';
  }
}

inline TaskSet read_taskset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw TaskError("task file is empty");
  TaskSet set;
  std::size_t expected = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("schema_version").get<int>() != kTaskSetSchemaVersion)
      throw TaskError("unsupported task file schema_version");
    set.seed = header.at("seed").get<std::uint64_t>();
    expected = header.at("count").get<std::size_t>();
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      const auto row = nlohmann::json::parse(line);
      std::vector<ExtractedAnswer> space;
      for (const auto& a : row.at("answer_space")) space.push_back(canonicalize(a.get<std::string>()));
      set.tasks.emplace_back(row.at("id").get<std::string>(), row.at("family").get<std::string>(),
                             row.at("parameters").get<std::vector<std::int64_t>>(),
                             row.value("features", std::vector<double>{}), std::move(space),
                             canonicalize(row.at("truth").get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw TaskError(std::string("malformed task file: ") + e.what());
  }
  if (set.tasks.size() != expected) throw TaskError("task file count does not match header");
  validate(set);
  return set;
}

inline void save_taskset(const std::string& path, const TaskSet& set) {
  std::ofstream out(path);
  if (!out) throw TaskError("cannot write " + path);
  write_taskset(out, set);
}

inline TaskSet load_taskset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TaskError("cannot read " + path);
  return read_taskset(in);
}

}  // namespace mmupt
