#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "caprank/io.hpp"
#include "caprank/matrix.hpp"
#include "caprank/random.hpp"

namespace caprank {

/// Per-instance misclassification costs, indexed by (predicted, actual).
struct CostMatrix {
  double c_tn = 0.0;
  double c_fn = 0.0;
  double c_fp = 0.0;
  double c_tp = 0.0;
};

struct Payoffs {
  double v_plus = 0.0;   // payoff when the task succeeds
  double v_minus = 0.0;  // payoff when it does not
};

/// v+ is the saving of acting on a positive, v- the saving of acting on a
/// negative; both follow from the cost matrix.
inline Payoffs payoffs(const CostMatrix& cost) {
  return {cost.c_fn - cost.c_tp, cost.c_tn - cost.c_fp};
}

struct Task {
  std::vector<double> features;
  int label = 0;  // binary outcome, known only in training/evaluation data
  CostMatrix cost;
};

inline Payoffs payoffs(const Task& task) { return payoffs(task.cost); }

/// Realized payoff of the task given its outcome. May be negative.
inline double reward(const Task& task) {
  const Payoffs v = payoffs(task);
  return task.label == 1 ? v.v_plus : v.v_minus;
}

struct TaskSet {
  std::vector<Task> tasks;
  std::vector<std::string> feature_names;

  std::size_t size() const { return tasks.size(); }
  std::size_t dim() const { return feature_names.size(); }

  std::vector<int> labels() const {
    std::vector<int> out(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) out[i] = tasks[i].label;
    return out;
  }

  std::vector<double> rewards() const {
    std::vector<double> out(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) out[i] = reward(tasks[i]);
    return out;
  }

  std::vector<CostMatrix> cost_matrices() const {
    std::vector<CostMatrix> out(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) out[i] = tasks[i].cost;
    return out;
  }

  FeatureMatrix feature_matrix() const {
    FeatureMatrix m(tasks.size(), dim());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      for (std::size_t j = 0; j < dim(); ++j) m.at(i, j) = tasks[i].features[j];
    }
    return m;
  }

  TaskSet select(const std::vector<std::size_t>& indices) const {
    TaskSet out;
    out.feature_names = feature_names;
    out.tasks.reserve(indices.size());
    for (std::size_t idx : indices) out.tasks.push_back(tasks[idx]);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Cost-matrix schemas
// ---------------------------------------------------------------------------

/// Application schemas; Explicit carries all four entries verbatim and is
/// used by the canonical CSV form written by save_csv.
enum class CostSchema { kChurn, kCreditScoring, kMarketing, kFraud, kExplicit };

inline std::string to_string(CostSchema s) {
  switch (s) {
    case CostSchema::kChurn: return "churn";
    case CostSchema::kCreditScoring: return "credit_scoring";
    case CostSchema::kMarketing: return "marketing";
    case CostSchema::kFraud: return "fraud";
    case CostSchema::kExplicit: return "explicit";
  }
  throw std::logic_error("unreachable");
}

inline CostSchema cost_schema_from_string(const std::string& s) {
  if (s == "churn") return CostSchema::kChurn;
  if (s == "credit_scoring") return CostSchema::kCreditScoring;
  if (s == "marketing") return CostSchema::kMarketing;
  if (s == "fraud") return CostSchema::kFraud;
  if (s == "explicit") return CostSchema::kExplicit;
  throw std::invalid_argument("unknown cost schema: " + s);
}

struct CostParams {
  double amount = 0.0;  // churn monthly amount, marketing interest, fraud amount
  double c_fn = 0.0;    // credit scoring only
  double c_fp = 0.0;    // credit scoring only
  std::optional<double> fixed_cost;  // marketing default 1, fraud default 10
};

inline CostMatrix build_cost_matrix(CostSchema schema, const CostParams& params) {
  if (params.fixed_cost && *params.fixed_cost < 0.0) {
    throw std::invalid_argument("fixed cost must be nonnegative");
  }
  switch (schema) {
    case CostSchema::kChurn:
      if (params.amount < 0.0) throw std::invalid_argument("negative amount");
      return {0.0, 12.0 * params.amount, 2.0 * params.amount, 0.0};
    case CostSchema::kCreditScoring:
      if (params.c_fn < 0.0 || params.c_fp < 0.0) {
        throw std::invalid_argument("negative cost");
      }
      return {0.0, params.c_fn, params.c_fp, 0.0};
    case CostSchema::kMarketing: {
      if (params.amount < 0.0) throw std::invalid_argument("negative amount");
      const double cf = params.fixed_cost.value_or(1.0);
      return {0.0, params.amount, cf, cf};
    }
    case CostSchema::kFraud: {
      if (params.amount < 0.0) throw std::invalid_argument("negative amount");
      const double cf = params.fixed_cost.value_or(10.0);
      return {0.0, params.amount, cf, cf};
    }
    case CostSchema::kExplicit:
      throw std::invalid_argument("explicit schema takes cost columns, not parameters");
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Names the label column, the per-schema cost columns, and the feature
/// include-list of a CSV file.
struct SchemaDescriptor {
  CostSchema schema = CostSchema::kExplicit;
  std::string label_column;
  std::string amount_column;                     // churn / marketing / fraud
  std::string c_fn_column, c_fp_column;          // credit scoring, explicit
  std::string c_tn_column, c_tp_column;          // explicit
  std::vector<std::string> feature_columns;
  std::optional<double> fixed_cost;
};

inline SchemaDescriptor schema_descriptor_from_json(const nlohmann::json& j) {
  SchemaDescriptor d;
  d.schema = cost_schema_from_string(j.at("schema").get<std::string>());
  d.label_column = j.at("label").get<std::string>();
  d.feature_columns = j.at("features").get<std::vector<std::string>>();
  if (j.contains("amount")) d.amount_column = j["amount"].get<std::string>();
  if (j.contains("c_fn")) d.c_fn_column = j["c_fn"].get<std::string>();
  if (j.contains("c_fp")) d.c_fp_column = j["c_fp"].get<std::string>();
  if (j.contains("c_tn")) d.c_tn_column = j["c_tn"].get<std::string>();
  if (j.contains("c_tp")) d.c_tp_column = j["c_tp"].get<std::string>();
  if (j.contains("fixed_cost")) d.fixed_cost = j["fixed_cost"].get<double>();
  return d;
}

inline nlohmann::json schema_descriptor_to_json(const SchemaDescriptor& d) {
  nlohmann::json j;
  j["schema"] = to_string(d.schema);
  j["label"] = d.label_column;
  j["features"] = d.feature_columns;
  if (!d.amount_column.empty()) j["amount"] = d.amount_column;
  if (!d.c_fn_column.empty()) j["c_fn"] = d.c_fn_column;
  if (!d.c_fp_column.empty()) j["c_fp"] = d.c_fp_column;
  if (!d.c_tn_column.empty()) j["c_tn"] = d.c_tn_column;
  if (!d.c_tp_column.empty()) j["c_tp"] = d.c_tp_column;
  if (d.fixed_cost) j["fixed_cost"] = *d.fixed_cost;
  return j;
}

namespace detail {

inline std::size_t require_column(
    const std::unordered_map<std::string, std::size_t>& index,
    const std::string& name, const char* role) {
  const auto it = index.find(name);
  if (it == index.end()) {
    throw std::runtime_error(std::string("missing ") + role + " column: " + name);
  }
  return it->second;
}

inline double parse_cell(const std::vector<std::string>& fields, std::size_t col,
                         std::size_t row_number, const std::string& column_name) {
  double value = 0.0;
  if (col >= fields.size() || !parse_double(fields[col], value)) {
    std::ostringstream msg;
    msg << "row " << row_number << ": cannot parse column '" << column_name
        << "' value '" << (col < fields.size() ? fields[col] : "") << "'";
    throw std::runtime_error(msg.str());
  }
  return value;
}

}  // namespace detail

inline TaskSet load_csv(std::istream& in, const SchemaDescriptor& desc) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV: no header row");
  const std::vector<std::string> header = detail::split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;

  const std::size_t label_col = detail::require_column(col, desc.label_column, "label");
  std::vector<std::size_t> feature_cols;
  for (const auto& name : desc.feature_columns) {
    feature_cols.push_back(detail::require_column(col, name, "feature"));
  }
  std::size_t amount_col = 0, cfn_col = 0, cfp_col = 0, ctn_col = 0, ctp_col = 0;
  switch (desc.schema) {
    case CostSchema::kChurn:
    case CostSchema::kMarketing:
    case CostSchema::kFraud:
      amount_col = detail::require_column(col, desc.amount_column, "amount");
      break;
    case CostSchema::kCreditScoring:
      cfn_col = detail::require_column(col, desc.c_fn_column, "c_fn");
      cfp_col = detail::require_column(col, desc.c_fp_column, "c_fp");
      break;
    case CostSchema::kExplicit:
      ctn_col = detail::require_column(col, desc.c_tn_column, "c_tn");
      cfn_col = detail::require_column(col, desc.c_fn_column, "c_fn");
      cfp_col = detail::require_column(col, desc.c_fp_column, "c_fp");
      ctp_col = detail::require_column(col, desc.c_tp_column, "c_tp");
      break;
  }

  TaskSet out;
  out.feature_names = desc.feature_columns;
  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    ++row_number;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    Task task;
    const double label = detail::parse_cell(fields, label_col, row_number, desc.label_column);
    if (label != 0.0 && label != 1.0) {
      std::ostringstream msg;
      msg << "row " << row_number << ": non-binary label '" << fields[label_col] << "'";
      throw std::runtime_error(msg.str());
    }
    task.label = static_cast<int>(label);
    task.features.reserve(feature_cols.size());
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      task.features.push_back(
          detail::parse_cell(fields, feature_cols[k], row_number, desc.feature_columns[k]));
    }
    switch (desc.schema) {
      case CostSchema::kChurn:
      case CostSchema::kMarketing:
      case CostSchema::kFraud: {
        CostParams p;
        p.amount = detail::parse_cell(fields, amount_col, row_number, desc.amount_column);
        p.fixed_cost = desc.fixed_cost;
        task.cost = build_cost_matrix(desc.schema, p);
        break;
      }
      case CostSchema::kCreditScoring: {
        CostParams p;
        p.c_fn = detail::parse_cell(fields, cfn_col, row_number, desc.c_fn_column);
        p.c_fp = detail::parse_cell(fields, cfp_col, row_number, desc.c_fp_column);
        task.cost = build_cost_matrix(desc.schema, p);
        break;
      }
      case CostSchema::kExplicit:
        task.cost.c_tn = detail::parse_cell(fields, ctn_col, row_number, desc.c_tn_column);
        task.cost.c_fn = detail::parse_cell(fields, cfn_col, row_number, desc.c_fn_column);
        task.cost.c_fp = detail::parse_cell(fields, cfp_col, row_number, desc.c_fp_column);
        task.cost.c_tp = detail::parse_cell(fields, ctp_col, row_number, desc.c_tp_column);
        break;
    }
    out.tasks.push_back(std::move(task));
  }
  if (out.tasks.empty()) throw std::runtime_error("empty CSV: no data rows");
  return out;
}

inline TaskSet load_csv(const std::string& path, const SchemaDescriptor& desc) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV file: " + path);
  return load_csv(in, desc);
}

/// Canonical serialization: feature columns, label, then the four cost
/// entries. Reloading through explicit_descriptor() is a fixed point.
inline void save_csv(const TaskSet& ts, std::ostream& out) {
  for (const auto& name : ts.feature_names) out << name << ',';
  out << "label,c_tn,c_fn,c_fp,c_tp\n";
  for (const Task& t : ts.tasks) {
    for (double x : t.features) out << detail::format_double(x) << ',';
    out << t.label << ',' << detail::format_double(t.cost.c_tn) << ','
        << detail::format_double(t.cost.c_fn) << ',' << detail::format_double(t.cost.c_fp)
        << ',' << detail::format_double(t.cost.c_tp) << '\n';
  }
}

inline void save_csv(const TaskSet& ts, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write CSV file: " + path);
  save_csv(ts, out);
}

/// Descriptor that reloads a file produced by save_csv.
inline SchemaDescriptor explicit_descriptor(const TaskSet& ts) {
  SchemaDescriptor d;
  d.schema = CostSchema::kExplicit;
  d.label_column = "label";
  d.c_tn_column = "c_tn";
  d.c_fn_column = "c_fn";
  d.c_fp_column = "c_fp";
  d.c_tp_column = "c_tp";
  d.feature_columns = ts.feature_names;
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic data generator
// ---------------------------------------------------------------------------

/// Class-conditional Gaussian features with a lognormal amount column. The
/// positive class mean is shifted by signal/sqrt(signal_dims) on the leading
/// signal_dims coordinates, so the induced posterior P(y=1|x) is a logistic
/// link in x. When amount_as_feature is set, the amount itself is appended as
/// the final feature column. amount_label_correlation couples the log-amount
/// to the (standardized) class-signal projection.
struct SyntheticSpec {
  std::size_t n = 1000;
  std::size_t dim = 8;
  double prior = 0.1;
  double signal = 1.0;
  std::size_t signal_dims = 3;
  double amount_mu_log = std::log(20.0);
  double amount_sigma = 1.0;
  CostSchema schema = CostSchema::kChurn;
  std::optional<double> fixed_cost;
  bool amount_as_feature = true;
  double amount_label_correlation = 0.0;
};

inline void validate(const SyntheticSpec& spec) {
  if (spec.n == 0) throw std::invalid_argument("n must be >= 1");
  if (spec.dim == 0) throw std::invalid_argument("dim must be >= 1");
  if (!(spec.prior > 0.0 && spec.prior < 1.0)) {
    throw std::invalid_argument("class prior must be inside (0, 1)");
  }
  if (spec.signal < 0.0) throw std::invalid_argument("signal must be >= 0");
  if (spec.signal_dims == 0 || spec.signal_dims > spec.dim) {
    throw std::invalid_argument("signal_dims must be in [1, dim]");
  }
  if (spec.amount_sigma < 0.0) throw std::invalid_argument("amount_sigma must be >= 0");
  if (spec.amount_label_correlation < 0.0 || spec.amount_label_correlation >= 1.0) {
    throw std::invalid_argument("amount_label_correlation must be in [0, 1)");
  }
  if (spec.schema == CostSchema::kExplicit || spec.schema == CostSchema::kCreditScoring) {
    throw std::invalid_argument("synthetic generator needs an amount-parametrized schema");
  }
}

inline TaskSet generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  validate(spec);
  detail::Rng rng(seed);
  TaskSet out;
  for (std::size_t j = 0; j < spec.dim; ++j) {
    out.feature_names.push_back("x" + std::to_string(j));
  }
  if (spec.amount_as_feature) out.feature_names.push_back("amount");

  const double m = static_cast<double>(spec.signal_dims);
  const double shift = spec.signal / std::sqrt(m);
  const double proj_mean = spec.signal * spec.prior;
  const double proj_sd =
      std::sqrt(1.0 + spec.signal * spec.signal * spec.prior * (1.0 - spec.prior));
  const double rho = spec.amount_label_correlation;

  out.tasks.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Task task;
    task.label = rng.uniform() < spec.prior ? 1 : 0;
    task.features.resize(spec.dim);
    double proj = 0.0;
    for (std::size_t j = 0; j < spec.dim; ++j) {
      double x = rng.normal();
      if (task.label == 1 && j < spec.signal_dims) x += shift;
      task.features[j] = x;
      if (j < spec.signal_dims) proj += x;
    }
    proj /= std::sqrt(m);
    const double eps = rng.normal();
    const double z = rho * (proj - proj_mean) / proj_sd + std::sqrt(1.0 - rho * rho) * eps;
    const double amount = std::exp(spec.amount_mu_log + spec.amount_sigma * z);
    if (spec.amount_as_feature) task.features.push_back(amount);

    CostParams params;
    params.fixed_cost = spec.fixed_cost;
    params.amount = amount;
    task.cost = build_cost_matrix(spec.schema, params);
    out.tasks.push_back(std::move(task));
  }
  return out;
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  if (j.contains("n")) s.n = j["n"].get<std::size_t>();
  if (j.contains("dim")) s.dim = j["dim"].get<std::size_t>();
  if (j.contains("prior")) s.prior = j["prior"].get<double>();
  if (j.contains("signal")) s.signal = j["signal"].get<double>();
  if (j.contains("signal_dims")) s.signal_dims = j["signal_dims"].get<std::size_t>();
  if (j.contains("amount_mu_log")) s.amount_mu_log = j["amount_mu_log"].get<double>();
  if (j.contains("amount_sigma")) s.amount_sigma = j["amount_sigma"].get<double>();
  if (j.contains("schema")) s.schema = cost_schema_from_string(j["schema"].get<std::string>());
  if (j.contains("fixed_cost")) s.fixed_cost = j["fixed_cost"].get<double>();
  if (j.contains("amount_as_feature")) s.amount_as_feature = j["amount_as_feature"].get<bool>();
  if (j.contains("amount_label_correlation")) {
    s.amount_label_correlation = j["amount_label_correlation"].get<double>();
  }
  validate(s);
  return s;
}

}  // namespace caprank
