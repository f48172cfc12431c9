#include "coreinterp/activation_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>

#include "coreinterp/errors.hpp"
#include "coreinterp/npy.hpp"
#include "coreinterp/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coreinterp {

ClassId ClassifierHead::predict(const Eigen::Ref<const Vector>& pooled) const {
  if (static_cast<std::size_t>(pooled.size()) != input_depth()) {
    throw ValidationError("classifier head expects depth " + std::to_string(input_depth()) +
                          ", got " + std::to_string(pooled.size()));
  }
  const Vector logits = weights * pooled + bias;
  ClassId best = 0;
  for (Eigen::Index c = 1; c < logits.size(); ++c) {
    if (logits[c] > logits[static_cast<Eigen::Index>(best)]) best = static_cast<ClassId>(c);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Manifest

std::size_t DatasetManifest::num_classes() const {
  if (!class_names.empty()) return class_names.size();
  std::size_t c = 0;
  for (auto l : labels) c = std::max(c, l + 1);
  return c;
}

void DatasetManifest::validate() const {
  if (sample_ids.empty()) throw ValidationError("manifest lists no samples");
  if (labels.size() != sample_ids.size()) {
    throw ValidationError("manifest has " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(sample_ids.size()) + " sample_ids");
  }
  const std::size_t c = num_classes();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= c) {
      throw ValidationError("label " + std::to_string(labels[i]) + " of sample " +
                            sample_ids[i] + " is outside [0, " + std::to_string(c) + ")");
    }
  }
  std::vector<std::string> sorted_ids = sample_ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  if (std::adjacent_find(sorted_ids.begin(), sorted_ids.end()) != sorted_ids.end()) {
    throw ValidationError("manifest contains duplicate sample_ids");
  }
  if (layer_ids.empty()) throw ValidationError("manifest lists no layers");
  for (const auto& id : layer_ids) {
    if (!tensor_files.contains(id)) {
      throw ValidationError("layer " + id + " has no tensor file in manifest");
    }
  }
  if (head_weights_file.has_value() != head_bias_file.has_value()) {
    throw ValidationError("classifier_file needs both weights and bias");
  }
}

json DatasetManifest::to_json(const fs::path& relative_to) const {
  auto rel = [&](const fs::path& p) {
    return relative_to.empty() ? p.generic_string() : p.lexically_relative(relative_to).generic_string();
  };
  json j;
  j["sample_ids"] = sample_ids;
  j["labels"] = labels;
  j["class_names"] = class_names;
  j["layer_ids"] = layer_ids;
  json files = json::object();
  for (const auto& [id, p] : tensor_files) files[id] = rel(p);
  j["tensor_files"] = files;
  if (head_weights_file) {
    j["classifier_file"] = {{"weights", rel(*head_weights_file)},
                            {"bias", rel(*head_bias_file)},
                            {"input_layer_id", layer_ids.back()}};
  } else {
    j["classifier_file"] = nullptr;
  }
  j["source_model"] = source_model;
  j["metadata"] = metadata;
  return j;
}

DatasetManifest DatasetManifest::from_json(const json& j, const fs::path& base_dir) {
  auto resolve = [&](const std::string& s) {
    fs::path p(s);
    return p.is_absolute() ? p : base_dir / p;
  };
  DatasetManifest m;
  try {
    m.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    m.labels = j.at("labels").get<std::vector<ClassId>>();
    if (j.contains("class_names") && !j["class_names"].is_null()) {
      m.class_names = j["class_names"].get<std::vector<std::string>>();
    }
    m.layer_ids = j.at("layer_ids").get<std::vector<std::string>>();
    for (const auto& [id, p] : j.at("tensor_files").items()) {
      m.tensor_files[id] = resolve(p.get<std::string>());
    }
    if (j.contains("classifier_file") && !j["classifier_file"].is_null()) {
      const auto& cf = j["classifier_file"];
      m.head_weights_file = resolve(cf.at("weights").get<std::string>());
      m.head_bias_file = resolve(cf.at("bias").get<std::string>());
    }
    m.source_model = j.value("source_model", std::string{});
    if (j.contains("metadata")) m.metadata = j["metadata"];
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Dataset

struct Dataset::Cache {
  std::mutex mu;
  std::map<std::string, std::shared_ptr<const Tensor4>> layers;
};

Dataset::Dataset(DatasetManifest manifest, std::optional<ClassifierHead> head)
    : manifest_(std::move(manifest)), head_(std::move(head)), cache_(std::make_shared<Cache>()) {
  for (std::size_t i = 0; i < manifest_.sample_ids.size(); ++i) {
    id_index_[manifest_.sample_ids[i]] = i;
  }
}

std::shared_ptr<const Dataset> Dataset::load(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("missing manifest " + manifest_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  DatasetManifest m = DatasetManifest::from_json(j, manifest_path.parent_path());
  for (const auto& id : m.layer_ids) {
    if (!fs::exists(m.tensor_files.at(id))) {
      throw ValidationError("missing tensor file " + m.tensor_files.at(id).string());
    }
  }
  std::optional<ClassifierHead> head;
  if (m.head_weights_file) {
    ClassifierHead h;
    h.weights = npy::load_matrix(*m.head_weights_file);
    h.bias = npy::load_vector(*m.head_bias_file);
    h.input_layer_id = j["classifier_file"].value("input_layer_id", m.layer_ids.back());
    if (h.bias.size() != h.weights.rows()) {
      throw ValidationError(m.head_bias_file->string() + ": bias length does not match weights");
    }
    if (h.num_classes() < m.num_classes()) {
      throw ValidationError("classifier head has fewer outputs than the dataset has classes");
    }
    head = std::move(h);
  }
  return std::shared_ptr<const Dataset>(new Dataset(std::move(m), std::move(head)));
}

std::shared_ptr<const Dataset> Dataset::from_memory(DatasetManifest manifest,
                                                    std::map<std::string, Tensor4> tensors,
                                                    std::optional<ClassifierHead> head) {
  for (const auto& [id, t] : tensors) manifest.tensor_files.emplace(id, fs::path("<memory>") / id);
  manifest.validate();
  auto ds = std::shared_ptr<Dataset>(new Dataset(std::move(manifest), std::move(head)));
  for (auto& [id, t] : tensors) {
    if (t.shape().n != ds->size()) {
      throw ValidationError("in-memory layer " + id + " has " + std::to_string(t.shape().n) +
                            " samples, manifest has " + std::to_string(ds->size()));
    }
    t.check_finite("in-memory layer " + id);
    ds->cache_->layers[id] = std::make_shared<const Tensor4>(std::move(t));
  }
  return ds;
}

std::shared_ptr<const Tensor4> Dataset::layer(const std::string& layer_id) const {
  std::lock_guard lock(cache_->mu);
  if (auto it = cache_->layers.find(layer_id); it != cache_->layers.end()) return it->second;
  auto file = manifest_.tensor_files.find(layer_id);
  if (file == manifest_.tensor_files.end()) {
    throw ValidationError("unknown layer " + layer_id);
  }
  Tensor4 t = npy::load_tensor(file->second);
  if (t.shape().n != size()) {
    throw ValidationError(file->second.string() + ": tensor has " + std::to_string(t.shape().n) +
                          " samples, manifest has " + std::to_string(size()));
  }
  if (head_ && head_->input_layer_id == layer_id && t.shape().d != head_->input_depth()) {
    throw ValidationError(file->second.string() + ": depth " + std::to_string(t.shape().d) +
                          " does not match classifier head input " +
                          std::to_string(head_->input_depth()));
  }
  auto ptr = std::make_shared<const Tensor4>(std::move(t));
  cache_->layers[layer_id] = ptr;
  return ptr;
}

const ClassifierHead& Dataset::require_head() const {
  if (!head_) throw ValidationError("dataset has no classifier head");
  return *head_;
}

std::optional<std::size_t> Dataset::index_of(const std::string& sample_id) const {
  auto it = id_index_.find(sample_id);
  if (it == id_index_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// DatasetView

DatasetView::DatasetView(std::shared_ptr<const Dataset> base, std::vector<std::size_t> rows)
    : base_(std::move(base)), rows_(std::move(rows)) {
  for (auto r : rows_) {
    if (r >= base_->size()) throw ValidationError("view row " + std::to_string(r) + " out of range");
  }
}

DatasetView DatasetView::full(std::shared_ptr<const Dataset> base) {
  std::vector<std::size_t> rows(base->size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return DatasetView(std::move(base), std::move(rows));
}

std::vector<ClassId> DatasetView::labels() const {
  std::vector<ClassId> out;
  out.reserve(rows_.size());
  for (auto r : rows_) out.push_back(base_->manifest().labels[r]);
  return out;
}

std::vector<std::string> DatasetView::sample_ids() const {
  std::vector<std::string> out;
  out.reserve(rows_.size());
  for (auto r : rows_) out.push_back(base_->manifest().sample_ids[r]);
  return out;
}

Tensor4 DatasetView::layer(const std::string& layer_id) const {
  return base_->layer(layer_id)->gather(rows_);
}

DatasetView DatasetView::of_class(ClassId c) const {
  std::vector<std::size_t> rows;
  for (auto r : rows_) {
    if (base_->manifest().labels[r] == c) rows.push_back(r);
  }
  return DatasetView(base_, std::move(rows));
}

// ---------------------------------------------------------------------------
// Pooling and partitioning

ActivationVectorSet global_average_pool(const Tensor4& t, std::string layer_id) {
  const auto& s = t.shape();
  ActivationVectorSet out{Matrix::Zero(s.n, s.d), std::move(layer_id)};
  const double inv = 1.0 / static_cast<double>(s.h * s.w);
  for (std::size_t i = 0; i < s.n; ++i) {
    auto block = t.sample(i);
    for (std::size_t loc = 0; loc < s.h * s.w; ++loc) {
      for (std::size_t c = 0; c < s.d; ++c) out.data(i, c) += block[loc * s.d + c];
    }
    for (std::size_t c = 0; c < s.d; ++c) out.data(i, c) *= inv;
  }
  return out;
}

std::map<ClassId, std::vector<std::size_t>> partition_by_class(std::span<const ClassId> labels,
                                                               std::size_t num_classes) {
  std::map<ClassId, std::vector<std::size_t>> parts;
  for (ClassId c = 0; c < num_classes; ++c) parts[c];
  for (std::size_t i = 0; i < labels.size(); ++i) parts[labels[i]].push_back(i);
  return parts;
}

std::map<ClassId, std::vector<std::size_t>> partition_by_class(const DatasetManifest& m) {
  return partition_by_class(m.labels, m.num_classes());
}

double head_accuracy(const Tensor4& last_layer, std::span<const ClassId> labels,
                     const ClassifierHead& head) {
  const Matrix pooled = global_average_pool(last_layer).data;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < pooled.rows(); ++i) {
    if (head.predict(pooled.row(i).transpose()) == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

namespace {

constexpr std::size_t kLatentDim = 4;

struct LayerModel {
  Matrix means;                 // [C, d]
  std::vector<Matrix> mixing;   // per class [d, kLatentDim]
};

LayerModel make_layer_model(const SyntheticConfig& cfg, std::size_t depth, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  LayerModel lm;
  lm.means = Matrix(cfg.classes, depth);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    for (std::size_t j = 0; j < depth; ++j) {
      if (cfg.single_active_channel) {
        lm.means(c, j) = (j == c % depth) ? 3.0 : 0.5;
      } else {
        lm.means(c, j) = 1.0 + 2.0 * unif(rng);
      }
    }
  }
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    Matrix b(depth, kLatentDim);
    for (Eigen::Index k = 0; k < b.size(); ++k) {
      b.data()[k] = gauss(rng) / std::sqrt(static_cast<double>(kLatentDim));
    }
    lm.mixing.push_back(std::move(b));
  }
  return lm;
}

}  // namespace

fs::path make_synthetic(const SyntheticConfig& cfg, const fs::path& out_dir) {
  if (cfg.classes == 0 || cfg.per_class == 0 || cfg.height == 0 || cfg.width == 0 ||
      cfg.depth == 0 || cfg.layers == 0) {
    throw ValidationError("synthetic dataset dimensions must be positive");
  }
  if (cfg.spread < 0.0) throw ValidationError("synthetic spread must be >= 0");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw ValidationError("cannot create output directory " + out_dir.string());
  }

  const std::size_t n = cfg.classes * cfg.per_class;
  const std::uint64_t model_seed = cfg.model_seed.value_or(cfg.seed);

  DatasetManifest m;
  m.source_model = cfg.source_model;
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sample_%05zu", i);
    m.sample_ids.emplace_back(buf);
    m.labels.push_back(i % cfg.classes);
  }
  for (std::size_t c = 0; c < cfg.classes; ++c) m.class_names.push_back("class_" + std::to_string(c));

  // Per-sample latent factors are shared by every layer and every model seed.
  std::vector<std::array<double, kLatentDim>> sample_latent(n);
  {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0xA11CE));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& z : sample_latent) {
      for (auto& v : z) v = gauss(rng);
    }
  }

  Tensor4 last;
  Matrix last_means;
  for (std::size_t layer = 0; layer < cfg.layers; ++layer) {
    const bool is_last = layer + 1 == cfg.layers;
    const std::size_t depth = is_last ? cfg.depth : std::max<std::size_t>(1, cfg.depth / 2);
    const std::string layer_id = "layer" + std::to_string(layer + 1);
    LayerModel lm = make_layer_model(cfg, depth, mix_seed(model_seed, 100 + layer));

    Tensor4 t(Shape4{n, cfg.height, cfg.width, depth});
    std::mt19937_64 rng(mix_seed(cfg.seed, 200 + layer));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::Matrix<double, kLatentDim, 1> z;
    Vector iso(depth);
    for (std::size_t i = 0; i < n; ++i) {
      const ClassId c = m.labels[i];
      for (std::size_t u = 0; u < cfg.height; ++u) {
        for (std::size_t v = 0; v < cfg.width; ++v) {
          for (std::size_t k = 0; k < kLatentDim; ++k) {
            z[static_cast<Eigen::Index>(k)] = 0.8 * sample_latent[i][k] + 0.6 * gauss(rng);
          }
          for (std::size_t j = 0; j < depth; ++j) iso[static_cast<Eigen::Index>(j)] = gauss(rng);
          const Vector value = lm.means.row(c).transpose() +
                               cfg.spread * (lm.mixing[c] * z + 0.3 * iso);
          for (std::size_t j = 0; j < depth; ++j) {
            // float32 is the interchange precision; keep in-memory values identical to disk.
            const float x = static_cast<float>(std::max(0.0, value[static_cast<Eigen::Index>(j)]));
            t.at(i, u, v, j) = x;
          }
        }
      }
    }
    const fs::path file = out_dir / (layer_id + ".npy");
    npy::save_tensor(file, t);
    m.layer_ids.push_back(layer_id);
    m.tensor_files[layer_id] = file;
    if (is_last) {
      last = std::move(t);
      last_means = lm.means;
    }
  }

  ClassifierHead head;
  head.weights = last_means.cast<float>().cast<double>();
  head.bias = Vector(cfg.classes);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    const double sq = head.weights.row(static_cast<Eigen::Index>(c)).squaredNorm();
    head.bias[static_cast<Eigen::Index>(c)] = static_cast<float>(-0.5 * sq);
  }
  head.input_layer_id = m.layer_ids.back();
  m.head_weights_file = out_dir / "head_weights.npy";
  m.head_bias_file = out_dir / "head_bias.npy";
  npy::save_matrix(*m.head_weights_file, head.weights);
  npy::save_vector(*m.head_bias_file, head.bias);

  m.metadata = {{"generator", "synthetic"},
                {"activation_point", "post-nonlinearity (clamped at 0)"},
                {"seed", cfg.seed},
                {"model_seed", model_seed},
                {"spread", cfg.spread},
                {"single_active_channel", cfg.single_active_channel},
                {"baseline_accuracy", head_accuracy(last, m.labels, head)}};

  const fs::path manifest_path = out_dir / "manifest.json";
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + manifest_path.string());
  out << m.to_json(out_dir).dump(2) << "\n";
  return manifest_path;
}

}  // namespace coreinterp
