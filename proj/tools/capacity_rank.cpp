// capacity-rank: train, rank, and evaluate capacity-aware task allocation
// models driven by a JSON experiment config.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "caprank/caprank.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "override every non-pinned seed in the config");
}

caprank::ExperimentConfig load_config(const CommonArgs& args) {
  caprank::ExperimentConfig config = caprank::ExperimentConfig::from_file(args.config_path);
  config.output_dir = args.out_dir;
  if (args.seed) config.apply_seed(*args.seed);
  return config;
}

caprank::TaskSet load_dataset(const caprank::ExperimentConfig& config,
                              const std::string& dataset_id) {
  for (std::size_t i = 0; i < config.datasets.size(); ++i) {
    const caprank::DatasetSpec& d = config.datasets[i];
    if (d.id != dataset_id) continue;
    return d.synthetic
               ? caprank::generate_synthetic(*d.synthetic, config.dataset_seed(i))
               : caprank::load_csv(d.csv_path, d.schema.value());
  }
  throw std::runtime_error("dataset not found in config: " + dataset_id);
}

int run_gen(const CommonArgs& args) {
  const caprank::ExperimentConfig config = load_config(args);
  fs::create_directories(config.output_dir);
  int written = 0;
  for (std::size_t i = 0; i < config.datasets.size(); ++i) {
    const caprank::DatasetSpec& d = config.datasets[i];
    if (!d.synthetic) continue;
    const caprank::TaskSet data =
        caprank::generate_synthetic(*d.synthetic, config.dataset_seed(i));
    const fs::path csv_path = fs::path(config.output_dir) / (d.id + ".csv");
    caprank::save_csv(data, csv_path.string());
    const fs::path schema_path = fs::path(config.output_dir) / (d.id + ".schema.json");
    std::ofstream schema_out(schema_path);
    schema_out << caprank::schema_descriptor_to_json(caprank::explicit_descriptor(data))
                      .dump(2)
               << '\n';
    std::cout << d.id << ": " << data.size() << " rows -> " << csv_path.string() << '\n';
    ++written;
  }
  if (written == 0) {
    std::cerr << "config names no synthetic datasets\n";
    return 1;
  }
  return 0;
}

int run_train(const CommonArgs& args) {
  const caprank::ExperimentConfig config = load_config(args);
  fs::create_directories(fs::path(config.output_dir) / "models");
  for (std::size_t i = 0; i < config.datasets.size(); ++i) {
    const caprank::DatasetSpec& d = config.datasets[i];
    const caprank::TaskSet data = load_dataset(config, d.id);
    const caprank::SplitResult split = caprank::train_test_split(data, config.split);
    const caprank::WorkerWeights weights = caprank::survival_weights(
        caprank::CapacityModel{config.capacity, split.train.size()});
    for (caprank::ObjectiveKind kind : config.objectives) {
      const caprank::BoundObjective objective =
          caprank::make_objective(kind, split.train, weights, config.lambda);
      const caprank::BoostedModel model = caprank::fit(
          split.train.feature_matrix(), objective, config.train_for(kind));
      const fs::path path = fs::path(config.output_dir) / "models" /
                            (d.id + "_" + caprank::to_string(kind) + ".json");
      model.save(path.string());
      std::cout << d.id << " " << caprank::to_string(kind) << " -> " << path.string()
                << '\n';
    }
  }
  return 0;
}

int run_rank(const CommonArgs& args, const std::string& model_path,
             const std::string& dataset_id) {
  const caprank::ExperimentConfig config = load_config(args);
  const caprank::BoostedModel model = caprank::BoostedModel::load(model_path);
  const caprank::TaskSet data = load_dataset(config, dataset_id);
  const caprank::RankMode mode = caprank::rank_mode_for(model.objective);
  const std::vector<double> keys = caprank::ranking_keys(model, data, mode);
  caprank::AssignmentPlan plan;
  plan.order = caprank::descending_order(keys);

  const caprank::WorkerWeights weights =
      caprank::survival_weights(caprank::CapacityModel{config.capacity, data.size()});
  const std::vector<double> scores = model.predict(data.feature_matrix());
  std::vector<double> predicted_rewards;
  if (caprank::is_classification(model.objective)) {
    predicted_rewards.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const caprank::Payoffs v = caprank::payoffs(data.tasks[i]);
      const double p = caprank::sigmoid(scores[i]);
      predicted_rewards[i] = p * v.v_plus + (1.0 - p) * v.v_minus;
    }
  }

  fs::create_directories(config.output_dir);
  const fs::path path = fs::path(config.output_dir) / "plan.csv";
  std::ofstream out(path);
  caprank::write_plan_csv(out, plan, scores, predicted_rewards, weights);
  std::cout << "ranked " << data.size() << " tasks (" << caprank::to_string(mode)
            << ") -> " << path.string() << '\n';
  return 0;
}

int run_eval(const CommonArgs& args, const std::string& model_path,
             const std::string& dataset_id) {
  const caprank::ExperimentConfig config = load_config(args);
  const caprank::BoostedModel model = caprank::BoostedModel::load(model_path);
  const caprank::TaskSet data = load_dataset(config, dataset_id);
  const caprank::RankMode mode = caprank::rank_mode_for(model.objective);
  const std::vector<double> keys = caprank::ranking_keys(model, data, mode);
  const std::vector<std::size_t> order = caprank::descending_order(keys);
  const caprank::CapacityModel capacity{config.capacity, data.size()};
  const caprank::WorkerWeights weights = caprank::survival_weights(capacity);
  const std::vector<int> labels = data.labels();
  const std::vector<double> rewards = data.rewards();
  const caprank::MetricReport report =
      caprank::evaluate_ranking(order, labels, rewards, keys, capacity, weights);

  fs::create_directories(config.output_dir);
  const fs::path json_path = fs::path(config.output_dir) / "metrics.json";
  std::ofstream json_out(json_path);
  json_out << report.to_json().dump(2) << '\n';
  const fs::path csv_path = fs::path(config.output_dir) / "metrics.csv";
  std::ofstream csv_out(csv_path);
  csv_out << "dataset,model,metric,value\n";
  caprank::append_metrics_csv(csv_out, dataset_id, caprank::to_string(model.objective),
                              report);
  for (const auto& [name, value] : report.named_values()) {
    std::cout << name << ": ";
    if (value) {
      std::cout << caprank::detail::format_double(*value);
    } else {
      std::cout << "n/a";
    }
    std::cout << '\n';
  }
  std::cout << "wrote " << json_path.string() << " and " << csv_path.string() << '\n';
  return 0;
}

int run_compare(const CommonArgs& args) {
  const caprank::ExperimentConfig config = load_config(args);
  const std::vector<caprank::RunRecord> records = caprank::run_experiment(config);
  const caprank::AggregateResult agg = caprank::aggregate(records);
  const fs::path summary_path = fs::path(config.output_dir) / "summary.csv";
  std::ofstream summary_out(summary_path);
  caprank::write_summary_csv(summary_out, agg);

  int failures = 0;
  for (const caprank::RunRecord& r : records) {
    std::cout << r.dataset_id << " " << caprank::to_string(r.objective) << ": ";
    if (r.ok) {
      std::cout << "profit=" << caprank::detail::format_double(r.metrics.expected_profit)
                << " precision="
                << caprank::detail::format_double(r.metrics.expected_precision) << " ("
                << caprank::detail::format_double(r.duration_seconds) << "s)";
    } else {
      std::cout << "FAILED: " << r.error;
      ++failures;
    }
    std::cout << '\n';
  }
  std::cout << "wrote " << summary_path.string() << '\n';
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capacity-aware task ranking experiments"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, rank_args, eval_args, compare_args;
  std::string model_path, dataset_id;

  CLI::App* gen = app.add_subcommand("gen", "write synthetic datasets as CSV");
  add_common(gen, gen_args);

  CLI::App* train = app.add_subcommand("train", "train models on the train split");
  add_common(train, train_args);

  CLI::App* rank = app.add_subcommand("rank", "rank a dataset with a trained model");
  add_common(rank, rank_args);
  rank->add_option("--model", model_path, "model JSON path")->required();
  rank->add_option("--dataset", dataset_id, "dataset id from the config")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a trained model on a dataset");
  add_common(eval, eval_args);
  eval->add_option("--model", model_path, "model JSON path")->required();
  eval->add_option("--dataset", dataset_id, "dataset id from the config")->required();

  CLI::App* compare = app.add_subcommand("compare", "run every (dataset, objective) pair");
  add_common(compare, compare_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen(gen_args);
    if (train->parsed()) return run_train(train_args);
    if (rank->parsed()) return run_rank(rank_args, model_path, dataset_id);
    if (eval->parsed()) return run_eval(eval_args, model_path, dataset_id);
    if (compare->parsed()) return run_compare(compare_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
