#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "caprank/assignment.hpp"
#include "caprank/capacity.hpp"
#include "caprank/gbm.hpp"
#include "caprank/io.hpp"
#include "caprank/metrics.hpp"
#include "caprank/objectives.hpp"
#include "caprank/random.hpp"
#include "caprank/tasks.hpp"

namespace caprank {

// ---------------------------------------------------------------------------
// Train/test splitting
// ---------------------------------------------------------------------------

struct SplitSpec {
  double test_fraction = 0.25;
  std::uint64_t seed = 0;
  bool stratified = true;
};

struct SplitResult {
  TaskSet train;
  TaskSet test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

/// Seeded, optionally label-stratified partition. Per-class test counts are
/// allocated by largest remainder so the total is exactly
/// round(test_fraction * N).
inline SplitResult train_test_split(const TaskSet& data, const SplitSpec& spec) {
  const std::size_t n = data.size();
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
    throw std::invalid_argument("test_fraction must be inside (0, 1)");
  }
  if (n < 2) throw std::invalid_argument("need at least two rows to split");
  std::size_t n_test = static_cast<std::size_t>(
      std::llround(spec.test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  std::vector<std::vector<std::size_t>> groups;
  if (spec.stratified) {
    groups.assign(2, {});
    for (std::size_t i = 0; i < n; ++i) groups[data.tasks[i].label].push_back(i);
    if (groups[0].empty() || groups[1].empty()) {
      throw std::invalid_argument("stratified split impossible: a class is absent");
    }
  } else {
    groups.assign(1, {});
    groups[0].resize(n);
    std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
  }

  std::vector<std::size_t> take(groups.size(), 0);
  std::vector<double> remainder(groups.size(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double quota = static_cast<double>(n_test) *
                         static_cast<double>(groups[g].size()) / static_cast<double>(n);
    take[g] = static_cast<std::size_t>(std::floor(quota));
    remainder[g] = quota - std::floor(quota);
    assigned += take[g];
  }
  while (assigned < n_test) {
    std::size_t pick = 0;
    for (std::size_t g = 1; g < groups.size(); ++g) {
      if (remainder[g] > remainder[pick]) pick = g;
    }
    remainder[pick] = -1.0;
    ++take[pick];
    ++assigned;
  }

  detail::Rng rng(spec.seed);
  SplitResult out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    rng.shuffle(groups[g]);
    for (std::size_t k = 0; k < groups[g].size(); ++k) {
      (k < take[g] ? out.test_indices : out.train_indices).push_back(groups[g][k]);
    }
  }
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.test_indices.begin(), out.test_indices.end());
  out.train = data.select(out.train_indices);
  out.test = data.select(out.test_indices);
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct DatasetSpec {
  std::string id;
  std::string csv_path;                        // empty for synthetic data
  std::optional<SchemaDescriptor> schema;      // required with csv_path
  std::optional<SyntheticSpec> synthetic;
  std::optional<std::uint64_t> seed;           // synthetic generator seed
};

inline LambdaOptions lambda_options_from_json(const nlohmann::json& j) {
  LambdaOptions o;
  if (j.contains("sigmoid_steepness")) o.sigmoid_steepness = j["sigmoid_steepness"].get<double>();
  if (j.contains("pair_cutoff")) o.pair_cutoff = j["pair_cutoff"].get<std::size_t>();
  if (j.contains("cutoff_weight_epsilon")) {
    o.cutoff_weight_epsilon = j["cutoff_weight_epsilon"].get<double>();
  }
  if (j.contains("exact_pairs")) o.exact_pairs = j["exact_pairs"].get<bool>();
  if (j.contains("query_block")) o.query_block = j["query_block"].get<std::size_t>();
  return o;
}

struct ExperimentConfig {
  std::vector<DatasetSpec> datasets;
  CapacityDistribution capacity = DeterministicCapacity{100};
  std::vector<ObjectiveKind> objectives;
  TrainConfig train;
  std::map<ObjectiveKind, TrainConfig> train_overrides;
  LambdaOptions lambda;
  SplitSpec split;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  std::size_t curve_max_k = 0;  // 0 writes the full curves
  bool split_seed_explicit = false;
  bool train_seed_explicit = false;

  TrainConfig train_for(ObjectiveKind kind) const {
    const auto it = train_overrides.find(kind);
    return it == train_overrides.end() ? train : it->second;
  }

  std::uint64_t dataset_seed(std::size_t index) const {
    const auto& spec = datasets.at(index);
    return spec.seed ? *spec.seed : seed + index;
  }

  /// CLI --seed: rebases every seed that the config did not pin explicitly.
  void apply_seed(std::uint64_t s) {
    seed = s;
    if (!split_seed_explicit) split.seed = s;
    if (!train_seed_explicit) {
      train.seed = s;
      for (auto& [kind, cfg] : train_overrides) cfg.seed = s;
    }
  }

  void validate() const {
    if (datasets.empty()) throw std::invalid_argument("config needs at least one dataset");
    if (objectives.empty()) throw std::invalid_argument("config needs at least one objective");
    train.validate();
    for (const auto& [kind, cfg] : train_overrides) cfg.validate();
    if (!(split.test_fraction > 0.0 && split.test_fraction < 1.0)) {
      throw std::invalid_argument("test_fraction must be inside (0, 1)");
    }
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("capacity")) c.capacity = capacity_from_json(j["capacity"]);
    if (j.contains("objectives")) {
      for (const auto& name : j["objectives"]) {
        c.objectives.push_back(objective_kind_from_string(name.get<std::string>()));
      }
    }
    nlohmann::json train_json = j.value("train", nlohmann::json::object());
    if (!train_json.contains("seed")) {
      train_json["seed"] = c.seed;
    } else {
      c.train_seed_explicit = true;
    }
    c.train = train_config_from_json(train_json);
    if (j.contains("train_overrides")) {
      for (const auto& [name, patch] : j["train_overrides"].items()) {
        nlohmann::json merged = train_json;
        merged.update(patch);
        c.train_overrides[objective_kind_from_string(name)] = train_config_from_json(merged);
      }
    }
    if (j.contains("lambda")) c.lambda = lambda_options_from_json(j["lambda"]);
    if (j.contains("split")) {
      const auto& js = j["split"];
      if (js.contains("test_fraction")) c.split.test_fraction = js["test_fraction"].get<double>();
      if (js.contains("stratified")) c.split.stratified = js["stratified"].get<bool>();
      if (js.contains("seed")) {
        c.split.seed = js["seed"].get<std::uint64_t>();
        c.split_seed_explicit = true;
      } else {
        c.split.seed = c.seed;
      }
    } else {
      c.split.seed = c.seed;
    }
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("curve_max_k")) c.curve_max_k = j["curve_max_k"].get<std::size_t>();
    for (const auto& jd : j.value("datasets", nlohmann::json::array())) {
      DatasetSpec d;
      d.id = jd.at("id").get<std::string>();
      if (jd.contains("csv")) {
        d.csv_path = jd["csv"].get<std::string>();
        d.schema = schema_descriptor_from_json(jd.at("schema"));
      }
      if (jd.contains("synthetic")) d.synthetic = synthetic_spec_from_json(jd["synthetic"]);
      if (jd.contains("seed")) d.seed = jd["seed"].get<std::uint64_t>();
      if (d.csv_path.empty() && !d.synthetic) {
        throw std::invalid_argument("dataset '" + d.id + "' needs csv or synthetic");
      }
      c.datasets.push_back(std::move(d));
    }
    c.validate();
    return c;
  }

  static ExperimentConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

/// Two-stage systems rank by the classifier output, the integrated systems
/// by the raw ranking score.
inline RankMode rank_mode_for(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kCrossEntropy: return RankMode::kProbability;
    case ObjectiveKind::kExpectedCost: return RankMode::kExpectedReward;
    case ObjectiveKind::kLambdaAccuracy:
    case ObjectiveKind::kLambdaCost: return RankMode::kRawScore;
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// Experiment runs
// ---------------------------------------------------------------------------

struct RunRecord {
  std::string dataset_id;
  ObjectiveKind objective = ObjectiveKind::kCrossEntropy;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricReport metrics;
  double duration_seconds = 0.0;
  std::string model_path;
  std::uint64_t capacity_checksum = 0;
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["dataset"] = dataset_id;
    j["model"] = to_string(objective);
    j["seed"] = seed;
    j["ok"] = ok;
    if (!ok) j["error"] = error;
    j["duration_seconds"] = duration_seconds;
    j["model_path"] = model_path;
    j["capacity_checksum"] = capacity_checksum;
    j["train_rows"] = train_rows;
    j["test_rows"] = test_rows;
    if (ok) j["metrics"] = metrics.to_json(/*include_curves=*/false);
    return j;
  }
};

namespace detail {

inline std::uint64_t weights_checksum(const WorkerWeights& w) {
  return fnv1a(w.weights.data(), w.weights.size() * sizeof(double));
}

}  // namespace detail

/// Runs every (dataset, objective) combination: train on the train split
/// with the capacity weights bound at training time for the ranking kinds,
/// rank the test split, evaluate against true labels and rewards. Records
/// are appended to <output_dir>/runs.jsonl and curves to curves.csv as they
/// complete; per-run failures are recorded and the run continues.
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& config) {
  config.validate();
  namespace fs = std::filesystem;
  const fs::path out_dir(config.output_dir);
  fs::create_directories(out_dir / "models");
  std::ofstream runs_out(out_dir / "runs.jsonl");
  std::ofstream curves_out(out_dir / "curves.csv");
  if (!runs_out || !curves_out) {
    throw std::runtime_error("cannot write into output directory: " + config.output_dir);
  }
  curves_out << "dataset,model,k,precision_at_k,profit_at_k\n";

  std::vector<RunRecord> records;
  for (std::size_t di = 0; di < config.datasets.size(); ++di) {
    const DatasetSpec& dspec = config.datasets[di];

    TaskSet data;
    std::string load_error;
    try {
      data = dspec.synthetic ? generate_synthetic(*dspec.synthetic, config.dataset_seed(di))
                             : load_csv(dspec.csv_path, dspec.schema.value());
    } catch (const std::exception& e) {
      load_error = e.what();
    }

    SplitResult split;
    WorkerWeights weights;
    std::uint64_t checksum = 0;
    if (load_error.empty()) {
      try {
        split = train_test_split(data, config.split);
        const std::size_t horizon = std::max(split.train.size(), split.test.size());
        weights = survival_weights(CapacityModel{config.capacity, horizon});
        checksum = detail::weights_checksum(weights);
      } catch (const std::exception& e) {
        load_error = e.what();
      }
    }

    for (ObjectiveKind kind : config.objectives) {
      RunRecord record;
      record.dataset_id = dspec.id;
      record.objective = kind;
      record.seed = config.seed;
      record.capacity_checksum = checksum;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        if (!load_error.empty()) throw std::runtime_error(load_error);
        record.train_rows = split.train.size();
        record.test_rows = split.test.size();

        const BoundObjective objective = make_objective(
            kind, split.train, weights.prefix(split.train.size()), config.lambda);
        const BoostedModel model =
            fit(split.train.feature_matrix(), objective, config.train_for(kind));

        const fs::path model_path =
            out_dir / "models" / (dspec.id + "_" + to_string(kind) + ".json");
        model.save(model_path.string());
        record.model_path = model_path.string();

        const std::vector<double> keys =
            ranking_keys(model, split.test, rank_mode_for(kind));
        AssignmentPlan plan;
        plan.order = descending_order(keys);
        const std::vector<int> labels = split.test.labels();
        const std::vector<double> rewards = split.test.rewards();
        const WorkerWeights eval_weights = weights.prefix(split.test.size());
        record.metrics = evaluate_ranking(
            plan.order, labels, rewards, keys,
            CapacityModel{config.capacity, split.test.size()}, eval_weights);
        record.ok = true;
      } catch (const std::exception& e) {
        record.ok = false;
        record.error = e.what();
      }
      record.duration_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      runs_out << record.to_json().dump() << '\n';
      runs_out.flush();
      if (record.ok) {
        const std::size_t k_max = config.curve_max_k == 0
                                      ? record.metrics.precision_at_k.size()
                                      : std::min(config.curve_max_k,
                                                 record.metrics.precision_at_k.size());
        for (std::size_t k = 1; k <= k_max; ++k) {
          curves_out << dspec.id << ',' << to_string(kind) << ',' << k << ','
                     << detail::format_double(record.metrics.precision_at_k[k - 1]) << ','
                     << detail::format_double(record.metrics.profit_at_k[k - 1]) << '\n';
        }
        curves_out.flush();
      }
      records.push_back(std::move(record));
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct ModelSummary {
  ObjectiveKind kind = ObjectiveKind::kCrossEntropy;
  std::size_t n_datasets = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> mean_rank;
  bool is_best = false;        // highest mean
  bool within_cd_of_best = false;
};

struct MetricSummary {
  std::string metric;
  std::optional<double> friedman_statistic;
  std::optional<double> friedman_p_value;
  std::optional<double> critical_difference;
  std::vector<ModelSummary> models;
};

struct AggregateResult {
  std::vector<MetricSummary> metrics;
};

/// Per-metric mean and standard deviation per model over datasets, with a
/// Friedman test plus Bonferroni-Dunn comparison against the best model when
/// at least two models share at least two complete datasets.
inline AggregateResult aggregate(const std::vector<RunRecord>& records,
                                 double alpha = 0.05) {
  if (records.empty()) throw std::invalid_argument("no records to aggregate");

  std::vector<ObjectiveKind> model_order;
  std::vector<std::string> dataset_order;
  for (const RunRecord& r : records) {
    if (std::find(model_order.begin(), model_order.end(), r.objective) == model_order.end()) {
      model_order.push_back(r.objective);
    }
    if (std::find(dataset_order.begin(), dataset_order.end(), r.dataset_id) ==
        dataset_order.end()) {
      dataset_order.push_back(r.dataset_id);
    }
  }

  const std::vector<std::string> metric_names = [] {
    std::vector<std::string> names;
    for (const auto& [name, value] : MetricReport{}.named_values()) names.push_back(name);
    return names;
  }();

  AggregateResult out;
  for (const std::string& metric : metric_names) {
    MetricSummary summary;
    summary.metric = metric;

    // values[model][dataset], missing as nullopt
    std::vector<std::vector<std::optional<double>>> values(
        model_order.size(),
        std::vector<std::optional<double>>(dataset_order.size()));
    for (const RunRecord& r : records) {
      if (!r.ok) continue;
      const std::size_t mi =
          std::find(model_order.begin(), model_order.end(), r.objective) -
          model_order.begin();
      const std::size_t di =
          std::find(dataset_order.begin(), dataset_order.end(), r.dataset_id) -
          dataset_order.begin();
      for (const auto& [name, value] : r.metrics.named_values()) {
        if (name == metric) values[mi][di] = value;
      }
    }

    for (std::size_t mi = 0; mi < model_order.size(); ++mi) {
      ModelSummary ms;
      ms.kind = model_order[mi];
      double total = 0.0;
      for (const auto& v : values[mi]) {
        if (v) {
          total += *v;
          ++ms.n_datasets;
        }
      }
      if (ms.n_datasets > 0) {
        ms.mean = total / static_cast<double>(ms.n_datasets);
        double ss = 0.0;
        for (const auto& v : values[mi]) {
          if (v) ss += (*v - ms.mean) * (*v - ms.mean);
        }
        ms.sd = ms.n_datasets > 1 ? std::sqrt(ss / static_cast<double>(ms.n_datasets - 1))
                                  : 0.0;
      }
      summary.models.push_back(ms);
    }

    // Friedman over datasets where every model reported the metric.
    std::vector<std::size_t> complete;
    for (std::size_t di = 0; di < dataset_order.size(); ++di) {
      bool all = true;
      for (std::size_t mi = 0; mi < model_order.size(); ++mi) {
        all = all && values[mi][di].has_value();
      }
      if (all) complete.push_back(di);
    }
    std::size_t best_mi = 0;
    bool any = false;
    for (std::size_t mi = 0; mi < model_order.size(); ++mi) {
      if (summary.models[mi].n_datasets == 0) continue;
      if (!any || summary.models[mi].mean > summary.models[best_mi].mean) {
        best_mi = mi;
        any = true;
      }
    }
    if (any) summary.models[best_mi].is_best = true;

    if (model_order.size() >= 2 && complete.size() >= 2) {
      std::vector<std::vector<double>> table(model_order.size());
      for (std::size_t mi = 0; mi < model_order.size(); ++mi) {
        for (std::size_t di : complete) table[mi].push_back(*values[mi][di]);
      }
      const FriedmanResult fr = friedman_bonferroni_dunn(table, alpha);
      summary.friedman_statistic = fr.statistic;
      summary.friedman_p_value = fr.p_value;
      summary.critical_difference = fr.critical_difference;
      for (std::size_t mi = 0; mi < model_order.size(); ++mi) {
        summary.models[mi].mean_rank = fr.mean_ranks[mi];
        summary.models[mi].within_cd_of_best =
            std::abs(fr.mean_ranks[mi] - fr.mean_ranks[best_mi]) <=
            fr.critical_difference;
      }
    }
    out.metrics.push_back(std::move(summary));
  }
  return out;
}

/// Long-format summary table; the is_best / within_cd_of_best columns mirror
/// the usual bold / underline presentation.
inline void write_summary_csv(std::ostream& out, const AggregateResult& agg) {
  out << "metric,model,n_datasets,mean,sd,mean_rank,is_best,"
         "within_cd_of_best,friedman_statistic,friedman_p_value,critical_difference\n";
  const auto opt = [](const std::optional<double>& v) {
    return v ? detail::format_double(*v) : std::string();
  };
  for (const MetricSummary& ms : agg.metrics) {
    for (const ModelSummary& m : ms.models) {
      out << ms.metric << ',' << to_string(m.kind) << ',' << m.n_datasets << ',';
      if (m.n_datasets > 0) out << detail::format_double(m.mean);
      out << ',';
      if (m.n_datasets > 0) out << detail::format_double(m.sd);
      out << ',' << opt(m.mean_rank) << ',' << (m.is_best ? 1 : 0) << ','
          << (m.within_cd_of_best ? 1 : 0) << ',' << opt(ms.friedman_statistic) << ','
          << opt(ms.friedman_p_value) << ',' << opt(ms.critical_difference) << '\n';
    }
  }
}

}  // namespace caprank
