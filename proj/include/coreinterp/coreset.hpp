#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coreinterp/activation_store.hpp"

namespace coreinterp {

enum class SelectionMethod { Random, Moderate, DGPruning };

std::string to_string(SelectionMethod m);
SelectionMethod parse_selection_method(const std::string& s);

struct CoresetSpec {
  SelectionMethod method = SelectionMethod::Random;
  double rho = 0.1;
  std::uint64_t seed = 0;
  std::size_t knn_k = 5;
  double gamma_forward = 1.0;
  double gamma_backward = 1.0;
  /// Min-max normalize DGPruning's initial centrality scores to [0, 1].
  bool normalize_scores = true;

  void validate() const;
  nlohmann::json to_json() const;
  static CoresetSpec from_json(const nlohmann::json& j);
};

/// Samples kept per class: max(1, round(rho * n_c)), rounding half away from zero.
std::size_t class_budget(double rho, std::size_t class_size);

struct Coreset {
  std::map<ClassId, std::vector<std::size_t>> per_class_indices;  // sorted, global
  CoresetSpec spec;
  std::string source_model;

  std::vector<std::size_t> all_indices() const;  // sorted union
  std::size_t size() const;

  /// {spec, source_model, per_class: {class: [sample_id, ...]}}
  nlohmann::json to_json(const DatasetManifest& m) const;
  /// Sample ids are resolved against `m`; unknown ids are a ValidationError listing them.
  static Coreset from_json(const nlohmann::json& j, const DatasetManifest& m);

  void save(const std::filesystem::path& path, const DatasetManifest& m) const;
  static nlohmann::json read_json(const std::filesystem::path& path);
};

/// k-NN graph over the samples of one class. Node ids are local row positions.
struct SampleGraph {
  struct Edge {
    std::size_t target;
    double distance;
    double weight;
  };
  std::vector<std::vector<Edge>> neighbors;  // ascending distance, ties by lower index
  double sigma = 0.0;
};

/// Row mean of a class's pooled vectors.
Vector class_center(const Matrix& vectors);

/// Uniform sample without replacement; returned ascending.
std::vector<std::size_t> select_random(std::span<const std::size_t> class_indices, double rho,
                                       std::uint64_t seed);

/// Local row positions (ascending) whose distance-to-center rank lies nearest
/// the median rank. The window grows below-then-above the median rank; among
/// samples with tied distance the lowest indices are taken.
std::vector<std::size_t> select_moderate(const Matrix& vectors, double rho);

/// Each node keeps its min(k, n-1) nearest others; w = exp(-dist / sigma) with
/// sigma the median kept distance (floored at 1e-12).
SampleGraph build_knn_graph(const Matrix& vectors, std::size_t k);

/// Centrality-scored graph selection with forward message passing and
/// backward neighbor suppression. Returns local row positions, ascending.
std::vector<std::size_t> select_dgpruning(const Matrix& vectors, const CoresetSpec& spec);

/// Runs the configured selector independently per class on pooled last-layer vectors.
Coreset select_coreset(const Dataset& ds, const CoresetSpec& spec);

/// Same, on explicit pooled vectors and labels.
Coreset select_coreset(const Matrix& pooled, std::span<const ClassId> labels,
                       std::size_t num_classes, const CoresetSpec& spec,
                       const std::string& source_model);

/// View of `target` holding the coreset's samples, matched by sample_id. Works
/// across source models; missing ids raise ValidationError listing them.
DatasetView apply_coreset(const nlohmann::json& coreset_json,
                          std::shared_ptr<const Dataset> target);
DatasetView apply_coreset(const Coreset& coreset, const DatasetManifest& source,
                          std::shared_ptr<const Dataset> target);

}  // namespace coreinterp
