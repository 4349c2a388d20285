#include "apckit/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <set>
#include <stdexcept>

#include "apckit/errors.hpp"
#include "apckit/seeding.hpp"

namespace apckit::eval {

namespace {

using Clock = std::chrono::steady_clock;

struct Classified {
  bool correct = false;
  bool fallback = false;
  double seconds = 0.0;
};

Classified classify(const victims::Classifier& victim, const Defense& defense, const PointCloud& cloud,
                    std::size_t label, std::uint64_t seed) {
  Classified out;
  const auto start = Clock::now();
  PointCloud defended = cloud;
  try {
    defended = defense.apply(cloud, seed);
  } catch (const DegenerateInput&) {
    out.fallback = true;
  }
  out.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  out.correct = victims::predict_label(victim, defended) == label;
  return out;
}

double percent(std::size_t hits, std::size_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<std::string> attacks_in(const std::vector<data::PairRecord>& pairs) {
  std::set<std::string> names;
  for (const auto& r : pairs) {
    if (r.attack_name != data::kCleanAttack) names.insert(r.attack_name);
  }
  return {names.begin(), names.end()};
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<std::vector<std::string>> combinations(const std::vector<std::string>& items, std::size_t r) {
  std::vector<std::vector<std::string>> out;
  std::vector<bool> mask(items.size(), false);
  std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(r), true);
  do {
    std::vector<std::string> pick;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (mask[i]) pick.push_back(items[i]);
    }
    out.push_back(std::move(pick));
  } while (std::prev_permutation(mask.begin(), mask.end()));
  return out;
}

struct RowResult {
  double clean = 0.0;
  double adv = 0.0;
  double in = 0.0;
  double out = 0.0;
  double pairs = 0.0;
};

RowResult train_and_score(const purifier::ApcConfig& config, const AblationInputs& inputs) {
  purifier::ApcTrainResult trained = purifier::train_apc(*inputs.victim, inputs.train_pairs, config);
  const ApcDefense defense(std::make_shared<const purifier::ApcModel>(std::move(trained.model)));
  const EvalReport report = eval_defense(*inputs.victim, defense, inputs.test_pairs);
  RowResult r;
  r.clean = report.clean_accuracy;
  r.adv = report.average;
  std::vector<double> in;
  std::vector<double> out;
  for (const auto& [name, acc] : report.per_attack_accuracy) {
    const bool seen = std::find(config.attacks.begin(), config.attacks.end(), name) != config.attacks.end();
    (seen ? in : out).push_back(acc);
  }
  r.in = mean_of(in);
  r.out = mean_of(out);
  r.pairs = static_cast<double>(trained.log.training_pairs);
  return r;
}

/// Averages train_and_score over the configured seeds and over `configs`.
RowResult averaged(const std::vector<purifier::ApcConfig>& configs, const AblationInputs& inputs) {
  RowResult sum;
  std::size_t n = 0;
  for (const auto& base : configs) {
    for (std::uint64_t seed : inputs.seeds) {
      purifier::ApcConfig c = base;
      c.seed = seed;
      const RowResult r = train_and_score(c, inputs);
      sum.clean += r.clean;
      sum.adv += r.adv;
      sum.in += r.in;
      sum.out += r.out;
      sum.pairs += r.pairs;
      ++n;
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  return {sum.clean * inv, sum.adv * inv, sum.in * inv, sum.out * inv, sum.pairs * inv};
}

std::size_t available(const std::vector<data::PairRecord>& pairs, const std::string& attack) {
  return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(),
                                                [&](const data::PairRecord& r) { return r.attack_name == attack; }));
}

}  // namespace

PointCloud BaselineDefense::apply(const PointCloud& cloud, std::uint64_t example_seed) const {
  return defenses::apply(spec_, cloud, example_seed);
}

PointCloud ApcDefense::apply(const PointCloud& cloud, std::uint64_t) const {
  return purifier::apc_purify(*model_, cloud).purified;
}

EvalReport eval_defense(const victims::Classifier& victim, const Defense& defense,
                        const std::vector<data::PairRecord>& pairs, const std::vector<std::string>& attacks) {
  const std::vector<std::string> selected = attacks.empty() ? attacks_in(pairs) : attacks;
  EvalReport report;
  report.victim_name = victim.name();
  report.defense_name = defense.name();

  std::map<std::string, std::size_t> hits;
  std::map<std::string, const data::PairRecord*> clean_by_example;
  double seconds = 0.0;
  std::size_t timed = 0;
  for (const auto& r : pairs) {
    if (std::find(selected.begin(), selected.end(), r.attack_name) == selected.end()) continue;
    const Classified c = classify(victim, defense, r.adversarial, r.label, derive_seed(0, {r.example_id, r.attack_name}));
    hits[r.attack_name] += c.correct ? 1 : 0;
    report.per_attack_count[r.attack_name] += 1;
    report.fallback_count += c.fallback ? 1 : 0;
    seconds += c.seconds;
    ++timed;
    clean_by_example.emplace(r.example_id, &r);
  }
  for (const auto& name : selected) {
    if (report.per_attack_count.count(name) == 0) {
      throw InvalidArgument("eval_defense: no pairs for attack '" + name + "' and victim " + victim.name());
    }
  }
  if (timed == 0) throw InvalidArgument("eval_defense: attack filter selects no pairs");

  std::size_t clean_hits = 0;
  for (const auto& [id, r] : clean_by_example) {
    const Classified c = classify(victim, defense, r->clean, r->label, derive_seed(0, {id, data::kCleanAttack}));
    clean_hits += c.correct ? 1 : 0;
    report.fallback_count += c.fallback ? 1 : 0;
  }
  report.clean_count = clean_by_example.size();
  report.clean_accuracy = percent(clean_hits, report.clean_count);

  std::vector<double> accs;
  for (const auto& [name, count] : report.per_attack_count) {
    report.per_attack_accuracy[name] = percent(hits[name], count);
    accs.push_back(report.per_attack_accuracy[name]);
  }
  report.average = mean_of(accs);
  report.wall_time_per_example = seconds / static_cast<double>(timed);
  return report;
}

EvalReport eval_defense(const victims::Classifier& victim, const Defense& defense,
                        const std::filesystem::path& store, const std::vector<std::string>& attacks) {
  data::PairFilter filter;
  filter.victim = victim.name();
  return eval_defense(victim, defense, data::load_pairs(store, filter), attacks);
}

double mean_accuracy(const EvalReport& report, const std::vector<std::string>& attacks) {
  if (attacks.empty()) throw InvalidArgument("mean_accuracy: empty attack list");
  std::vector<double> v;
  for (const auto& a : attacks) {
    const auto it = report.per_attack_accuracy.find(a);
    if (it == report.per_attack_accuracy.end()) throw InvalidArgument("mean_accuracy: report has no attack '" + a + "'");
    v.push_back(it->second);
  }
  return mean_of(v);
}

TransferMatrix eval_cross_model(const purifier::ApcModel& apc, const std::string& source_victim,
                                const std::vector<TransferTarget>& targets, const std::vector<std::string>& attacks) {
  const std::uint64_t before = apc.params().hash();
  // The defense shares a copy; the caller's model is never handed out mutable.
  const ApcDefense defense(std::make_shared<const purifier::ApcModel>(apc));
  const IdentityDefense none;
  TransferMatrix m;
  for (const auto& target : targets) {
    if (target.model == nullptr) throw InvalidArgument("eval_cross_model: null target model");
    const std::string name = target.model->name();
    std::vector<data::PairRecord> own;
    for (const auto& r : target.pairs) {
      if (r.victim_name == name) own.push_back(r);
    }
    if (own.empty()) throw InvalidArgument("eval_cross_model: no pairs crafted against target " + name);
    EvalReport with = eval_defense(*target.model, defense, own, attacks);
    m.average[source_victim][name] = with.average;
    m.with_apc[name] = std::move(with);
    m.without_defense[name] = eval_defense(*target.model, none, own, attacks);
  }
  if (apc.params().hash() != before || defense.model().params().hash() != before) {
    throw std::logic_error("eval_cross_model: purifier parameters changed during evaluation");
  }
  return m;
}

std::string ablation_name(AblationKind kind) {
  switch (kind) {
    case AblationKind::kHybridCount:
      return "hybrid_count";
    case AblationKind::kLossTerms:
      return "loss_terms";
    case AblationKind::kDistanceMetric:
      return "distance_metric";
    case AblationKind::kCleanInclusion:
      return "clean_inclusion";
  }
  return "hybrid_count";
}

AblationKind ablation_from_name(const std::string& name) {
  for (AblationKind k : {AblationKind::kHybridCount, AblationKind::kLossTerms, AblationKind::kDistanceMetric,
                         AblationKind::kCleanInclusion}) {
    if (ablation_name(k) == name) return k;
  }
  throw InvalidArgument("unknown ablation kind: " + name);
}

AblationTable run_ablation(AblationKind kind, const purifier::ApcConfig& base, const AblationInputs& inputs) {
  if (inputs.victim == nullptr) throw InvalidArgument("run_ablation: victim is required");
  if (inputs.seeds.empty()) throw InvalidArgument("run_ablation: at least one seed is required");
  if (inputs.test_pairs.empty()) throw InvalidArgument("run_ablation: no test pairs");
  std::vector<std::string> required = base.attacks;
  if (base.include_clean || kind == AblationKind::kCleanInclusion) required.emplace_back(data::kCleanAttack);
  for (const auto& a : required) {
    if (available(inputs.train_pairs, a) == 0) throw InvalidArgument("run_ablation: no training pairs for '" + a + "'");
  }

  AblationTable table;
  table.kind = ablation_name(kind);
  table.columns = {"clean", "adv"};
  auto add_row = [&](std::string label, const RowResult& r) {
    AblationRow row{std::move(label), {{"clean", r.clean}, {"adv", r.adv}}};
    if (kind == AblationKind::kHybridCount) {
      row.values["in"] = r.in;
      row.values["out"] = r.out;
      row.values["pairs"] = r.pairs;
    }
    table.rows.push_back(std::move(row));
  };

  switch (kind) {
    case AblationKind::kHybridCount: {
      table.columns = {"clean", "adv", "in", "out", "pairs"};
      std::size_t budget = 0;
      for (const auto& a : base.attacks) {
        const auto n = static_cast<double>(available(inputs.train_pairs, a));
        budget += std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(base.subsample_fraction * n)));
      }
      for (std::size_t count = 1; count <= base.attacks.size(); ++count) {
        std::vector<purifier::ApcConfig> configs;
        for (auto& combo : combinations(base.attacks, count)) {
          purifier::ApcConfig c = base;
          c.attacks = std::move(combo);
          c.pairs_per_attack = budget / count;
          for (const auto& a : c.attacks) {
            if (available(inputs.train_pairs, a) < *c.pairs_per_attack) {
              throw InvalidArgument("run_ablation: not enough '" + a + "' pairs for a fixed budget of " +
                                    std::to_string(budget));
            }
          }
          configs.push_back(std::move(c));
        }
        add_row(std::to_string(count), averaged(configs, inputs));
      }
      break;
    }
    case AblationKind::kLossTerms: {
      struct Variant {
        const char* label;
        bool geo, sem, clean;
      };
      for (const Variant v : {Variant{"ce", false, false, true}, Variant{"ce+geo", true, false, true},
                              Variant{"ce+sem", false, true, true}, Variant{"ce+geo+sem, no clean", true, true, false},
                              Variant{"ce+geo+sem", true, true, true}}) {
        purifier::ApcConfig c = base;
        c.alpha = v.geo ? base.alpha : 0.0;
        c.beta = v.sem ? base.beta : 0.0;
        c.include_clean = v.clean;
        add_row(v.label, averaged({c}, inputs));
      }
      break;
    }
    case AblationKind::kDistanceMetric: {
      for (const auto& [label, d] : {std::pair{"hausdorff", ad::SetDistance::kHausdorff},
                                     std::pair{"chamfer", ad::SetDistance::kChamfer}}) {
        purifier::ApcConfig c = base;
        c.geo_distance = d;
        add_row(label, averaged({c}, inputs));
      }
      break;
    }
    case AblationKind::kCleanInclusion: {
      for (const bool clean : {false, true}) {
        purifier::ApcConfig c = base;
        c.include_clean = clean;
        add_row(clean ? "with clean" : "without clean", averaged({c}, inputs));
      }
      break;
    }
  }
  return table;
}

std::vector<EfficiencyRow> measure_efficiency(const std::vector<const Defense*>& defenses,
                                              const std::vector<PointCloud>& samples, std::size_t repetitions,
                                              std::size_t warmup) {
  if (samples.empty()) throw InvalidArgument("measure_efficiency: no sample clouds");
  if (repetitions == 0) throw InvalidArgument("measure_efficiency: repetitions must be positive");
  std::vector<EfficiencyRow> rows;
  for (const Defense* d : defenses) {
    for (std::size_t i = 0; i < warmup; ++i) (void)d->apply(samples[i % samples.size()], i);
    std::vector<double> times;
    times.reserve(repetitions);
    for (std::size_t i = 0; i < repetitions; ++i) {
      const PointCloud& cloud = samples[i % samples.size()];
      const auto start = Clock::now();
      const PointCloud out = d->apply(cloud, i);
      times.push_back(std::chrono::duration<double>(Clock::now() - start).count());
    }
    const auto mid = times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2);
    std::nth_element(times.begin(), mid, times.end());
    double median = *mid;
    if (times.size() % 2 == 0) median = 0.5 * (median + *std::max_element(times.begin(), mid));
    rows.push_back({d->name(), median, d->param_count()});
  }
  return rows;
}

}  // namespace apckit::eval
