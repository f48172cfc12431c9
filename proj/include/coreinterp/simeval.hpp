#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coreinterp/activation_store.hpp"

namespace coreinterp::simeval {

struct ShapeMetricConfig {
  /// 0 = full whitening, 1 = no whitening.
  double alpha = 0.5;
  std::size_t max_rows = 20000;
  std::uint64_t seed = 0;
  /// Covariance eigenvalues below this are raised to it before the inverse
  /// square root. When unset, 1e-6 * trace(cov) / p is used.
  std::optional<double> ridge;

  void validate() const;
  nlohmann::json to_json() const;
  static ShapeMetricConfig from_json(const nlohmann::json& j);
};

/// [(n*h'*w'), d'] with sample-major, then spatial row-major row order.
Matrix flatten_maps(const Tensor4& maps);

/// Apply X ((1 - alpha) Cov^(-1/2) + alpha I) to already-centered X, with the
/// covariance spectrum floored at the ridge.
Matrix partial_whiten(const Matrix& centered, double alpha, std::optional<double> ridge);

/// Angular distance in [0, pi] between two representations with matching rows,
/// after zero-padding to equal width, centering, partial whitening and the
/// optimal orthogonal alignment. Throws ComputationError("degenerate
/// representation") when either side has zero norm after centering.
double angular_shape_distance(const Matrix& x, const Matrix& y, const ShapeMetricConfig& cfg);

struct SimilarityReport {
  std::map<ClassId, double> per_class_distance;
  std::map<ClassId, std::string> skipped;  // class -> reason
  double phi_mean = 0.0;
  double budget_rho = 0.0;
  std::string interpretation;
  std::string coreset;
  std::string model;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static SimilarityReport from_json(const nlohmann::json& j);
};

/// One class's pair of interpretation maps (full data vs coreset).
struct MapPair {
  ClassId cls = 0;
  Tensor4 full;
  Tensor4 coreset;
};

/// Distance per class and their arithmetic mean. Degenerate classes are
/// skipped and listed; all classes skipped is a ComputationError.
SimilarityReport phi_average(const std::vector<MapPair>& pairs, const ShapeMetricConfig& cfg);

/// Mean of already-computed per-class distances, with skipped classes recorded.
SimilarityReport phi_from_distances(const std::map<ClassId, double>& distances,
                                    std::map<ClassId, std::string> skipped);

inline const std::vector<double> kRobustnessBudgets = {0.10, 0.20, 0.30, 0.40, 0.50};

struct RobustnessEntry {
  std::string interpretation;
  std::string coreset;
  std::string model;
  std::vector<double> budgets;
  std::vector<double> phis;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::vector<double> missing_budgets;
};

struct RobustnessReport {
  std::vector<RobustnessEntry> entries;

  nlohmann::json to_json() const;
  /// Plain-text table: one row per (model, interpretation, coreset), "mean ± std" cells.
  std::string to_table() const;
};

/// Mean and population std of phi_mean over the reports of one
/// (interpretation, coreset, model) group. Requires at least 2 budgets.
RobustnessEntry robustness_entry(const std::vector<SimilarityReport>& reports);

/// Groups reports by (model, interpretation, coreset) and summarizes each group.
RobustnessReport robustness_summary(const std::vector<SimilarityReport>& reports);

}  // namespace coreinterp::simeval
