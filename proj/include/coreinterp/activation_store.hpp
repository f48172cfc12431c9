#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coreinterp/tensor.hpp"

namespace coreinterp {

using ClassId = std::size_t;

/// Pooled activations [n, d] of one layer; row i derives from sample i.
struct ActivationVectorSet {
  Matrix data;
  std::string layer_id;
};

/// Linear head on globally pooled features: logits = weights * g + bias.
struct ClassifierHead {
  Matrix weights;  // [C, d_cls]
  Vector bias;     // [C]
  std::string input_layer_id;

  std::size_t num_classes() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t input_depth() const { return static_cast<std::size_t>(weights.cols()); }

  /// argmax of the logits for one pooled feature vector; ties go to the lower class.
  ClassId predict(const Eigen::Ref<const Vector>& pooled) const;
};

struct DatasetManifest {
  std::vector<std::string> sample_ids;
  std::vector<ClassId> labels;
  std::vector<std::string> class_names;
  std::vector<std::string> layer_ids;
  std::map<std::string, std::filesystem::path> tensor_files;  // absolute after load
  std::optional<std::filesystem::path> head_weights_file;
  std::optional<std::filesystem::path> head_bias_file;
  std::string source_model;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t size() const { return sample_ids.size(); }
  std::size_t num_classes() const;

  /// Checks count/label/layer consistency. File existence is checked by load.
  void validate() const;

  nlohmann::json to_json(const std::filesystem::path& relative_to) const;
  static DatasetManifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
};

/// A validated dataset whose per-layer tensors are loaded on first access and
/// then shared read-only.
class Dataset {
 public:
  /// Parses and validates a manifest; tensor files are only stat'ed here.
  static std::shared_ptr<const Dataset> load(const std::filesystem::path& manifest_path);

  /// In-memory dataset, mainly for tests and generated fixtures.
  static std::shared_ptr<const Dataset> from_memory(DatasetManifest manifest,
                                                    std::map<std::string, Tensor4> tensors,
                                                    std::optional<ClassifierHead> head);

  const DatasetManifest& manifest() const { return manifest_; }
  std::size_t size() const { return manifest_.size(); }
  std::size_t num_classes() const { return manifest_.num_classes(); }
  const std::string& last_layer() const { return manifest_.layer_ids.back(); }

  /// Loads (once) and returns a layer tensor. Throws ValidationError naming the
  /// file on shape mismatch or non-finite values.
  std::shared_ptr<const Tensor4> layer(const std::string& layer_id) const;

  const std::optional<ClassifierHead>& head() const { return head_; }
  const ClassifierHead& require_head() const;

  std::optional<std::size_t> index_of(const std::string& sample_id) const;

 private:
  struct Cache;

  Dataset(DatasetManifest manifest, std::optional<ClassifierHead> head);

  DatasetManifest manifest_;
  std::optional<ClassifierHead> head_;
  std::map<std::string, std::size_t> id_index_;
  std::shared_ptr<Cache> cache_;
};

/// An order-stable subset of a dataset's samples.
class DatasetView {
 public:
  DatasetView() = default;
  DatasetView(std::shared_ptr<const Dataset> base, std::vector<std::size_t> rows);
  static DatasetView full(std::shared_ptr<const Dataset> base);

  const Dataset& base() const { return *base_; }
  std::shared_ptr<const Dataset> base_ptr() const { return base_; }
  const std::vector<std::size_t>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  ClassId label(std::size_t k) const { return base_->manifest().labels[rows_[k]]; }
  std::vector<ClassId> labels() const;
  std::vector<std::string> sample_ids() const;

  Tensor4 layer(const std::string& layer_id) const;

  /// Restriction to the samples of one class, preserving order.
  DatasetView of_class(ClassId c) const;

 private:
  std::shared_ptr<const Dataset> base_;
  std::vector<std::size_t> rows_;
};

/// out[i, c] = mean over spatial locations of t[i, :, :, c].
ActivationVectorSet global_average_pool(const Tensor4& t, std::string layer_id = {});

/// Class -> ascending sample indices. Every class in [0, C) is present, possibly empty.
std::map<ClassId, std::vector<std::size_t>> partition_by_class(std::span<const ClassId> labels,
                                                               std::size_t num_classes);
std::map<ClassId, std::vector<std::size_t>> partition_by_class(const DatasetManifest& m);

struct SyntheticConfig {
  std::size_t classes = 10;
  std::size_t per_class = 100;
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t depth = 32;
  /// Number of exported layers; earlier layers have half the depth of the last.
  std::size_t layers = 2;
  double spread = 0.5;
  /// Drives every per-sample draw (shared latent factors, noise). Two fixtures
  /// with the same sample_seed but different model_seed behave like two models
  /// looking at the same images.
  std::uint64_t seed = 7;
  std::optional<std::uint64_t> model_seed;
  /// Class c is carried by a single channel (c mod depth) on top of a flat baseline.
  bool single_active_channel = false;
  std::string source_model = "synthetic";
};

/// Writes tensors, a bundled head, and manifest.json into `out_dir`, returning
/// the manifest path. The head rows are the class mean directions with bias
/// -|mu_c|^2 / 2; its accuracy on the pooled last layer is recorded as
/// metadata.baseline_accuracy.
std::filesystem::path make_synthetic(const SyntheticConfig& cfg,
                                     const std::filesystem::path& out_dir);

/// Accuracy of the head on pooled last-layer features of the whole dataset.
double head_accuracy(const Tensor4& last_layer, std::span<const ClassId> labels,
                     const ClassifierHead& head);

}  // namespace coreinterp
