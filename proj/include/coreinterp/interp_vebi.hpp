#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coreinterp/activation_store.hpp"

namespace coreinterp::vebi {

struct UnitRef {
  std::string layer_id;
  std::size_t filter = 0;
  auto operator<=>(const UnitRef&) const = default;
};

/// Pooled activations of every unit of every layer, concatenated in manifest
/// layer order.
struct UnitMatrix {
  Matrix values;                // [n_view, D_total]
  std::vector<UnitRef> columns;  // column -> (layer, filter)
  std::map<std::string, std::size_t> layer_offset;

  std::size_t column_of(const UnitRef& u) const;
};

UnitMatrix build_unit_matrix(const DatasetView& view);
UnitMatrix build_unit_matrix(const std::vector<std::pair<std::string, const Tensor4*>>& layers);

/// Columns scaled to zero mean and unit (population) variance. Columns whose
/// spread is numerically zero are dropped and listed.
struct Standardized {
  Matrix psi;
  std::vector<std::size_t> kept;     // psi column -> source column
  std::vector<std::size_t> dropped;  // source columns with zero variance
};
Standardized standardize_columns(const Matrix& m);

struct LassoOptions {
  /// Convergence when every coordinate's change, measured on the gradient
  /// scale |dw_j| * ||psi_j||^2, is below tol.
  double tol = 1e-6;
  std::size_t max_sweeps = 1000;
};

struct LassoResult {
  Vector weights;
  std::size_t sweeps = 0;
  bool converged = false;
};

/// min_w 1/2 ||Psi w - y||^2 + mu ||w||_1 by cyclic coordinate descent with
/// soft-thresholding, starting from w = 0.
LassoResult solve_lasso(const Matrix& psi, const Vector& y, double mu, const LassoOptions& opts = {});

double lasso_objective(const Matrix& psi, const Vector& y, const Vector& w, double mu);

/// Largest violation of the lasso optimality conditions at w.
double kkt_residual(const Matrix& psi, const Vector& y, const Vector& w, double mu);

struct RelevantUnit {
  std::string layer_id;
  std::size_t filter = 0;
  double weight = 0.0;
  UnitRef ref() const { return {layer_id, filter}; }
};

using UnitList = std::vector<RelevantUnit>;

struct RelevantUnits {
  std::map<ClassId, UnitList> per_class;  // sorted by |weight| descending
  std::map<ClassId, double> mu;
  double mu_fraction = 0.0;  // 0 when mu was given absolutely
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static RelevantUnits from_json(const nlohmann::json& j);
};

struct VebiOptions {
  /// mu = mu_fraction * ||Psi^T y||_inf per class unless mu_absolute is set.
  double mu_fraction = 0.05;
  std::optional<double> mu_absolute;
  LassoOptions lasso;
};

/// One-vs-rest lasso per class over all exported layers.
RelevantUnits identify_units(const DatasetView& view, const VebiOptions& opts);
RelevantUnits identify_units(const UnitMatrix& units, std::span<const ClassId> labels,
                             std::size_t num_classes, const VebiOptions& opts);

/// Units of one class restricted to one layer, preserving order.
UnitList units_in_layer(const UnitList& units, const std::string& layer_id);

struct AlignedUnits {
  UnitList a, b;
  std::vector<std::string> shared_layers;
};

/// Drops layers not present on both sides and trims the larger side of each
/// shared layer to its top units by |weight|. nullopt when no layer is shared.
std::optional<AlignedUnits> align_unit_sets(const UnitList& a, const UnitList& b);

enum class CoverageNorm {
  Jaccard,    // 100 |a n b| / |a u b|
  Reference,  // 100 |a n b| / |b|
};

/// Percentage overlap of (layer, filter) identities; nullopt when undefined.
std::optional<double> coverage(const UnitList& a, const UnitList& b,
                               CoverageNorm norm = CoverageNorm::Jaccard);

/// Per-class coverage over the union of classes of a and b.
std::map<ClassId, std::optional<double>> intersection_coverage(
    const RelevantUnits& a, const RelevantUnits& b, CoverageNorm norm = CoverageNorm::Jaccard);

/// Channels of `layer_tensor` picked by the units that belong to `layer_id`,
/// in unit order.
Tensor4 vebi_maps(const Tensor4& layer_tensor, const UnitList& units, const std::string& layer_id);

void save(const RelevantUnits& units, const std::filesystem::path& file, const nlohmann::json& extra);
RelevantUnits load(const std::filesystem::path& file);

}  // namespace coreinterp::vebi
