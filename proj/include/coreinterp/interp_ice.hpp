#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "coreinterp/activation_store.hpp"

namespace coreinterp::ice {

struct NmfOptions {
  std::size_t rank = 8;
  std::size_t max_iter = 200;
  double tol = 1e-4;  // stop when the relative loss change drops below this
  std::uint64_t seed = 0;
};

/// V ~= S * W with nonnegative S [N, r] and components W [r, d].
struct NmfModel {
  Matrix components;  // W, [r, d]
  std::size_t rank = 0;
  double fit_loss = 0.0;  // ||V - S W||_F at exit
  std::size_t iterations_run = 0;
  std::vector<double> loss_history;  // index 0 is the initial loss
};

/// Lee-Seung multiplicative updates on the Frobenius loss. S starts at the
/// constant sqrt(mean(V)/r) and W at seeded uniform(0,1) times the same scale,
/// so the fit does not depend on the order of V's rows.
NmfModel fit_nmf(const Matrix& V, const NmfOptions& opts);

struct ProjectionOptions {
  std::size_t max_iter = 500;
  double tol = 1e-6;
};

/// Nonnegative codes S for V with the components frozen.
Matrix project_nmf(const Matrix& V, const Matrix& components, const ProjectionOptions& opts = {});

/// Clamps at 0, projects every location onto the components and maps back:
/// returns S*W with the tensor's own shape (d' = d).
Tensor4 ice_maps(const Tensor4& t, const NmfModel& model, const ProjectionOptions& opts = {});

/// One factorization per class, fit on the clamped activations of that class.
struct IceFeatures {
  NmfOptions options;
  std::string layer_id;
  std::map<ClassId, NmfModel> per_class;
};

IceFeatures fit_ice(const DatasetView& view, const std::string& layer_id, const NmfOptions& opts);

/// components_<c>.npy plus ice.json sidecar (r, loss, seed, class).
void save(const IceFeatures& f, const std::filesystem::path& dir, const nlohmann::json& extra);
IceFeatures load(const std::filesystem::path& dir);

}  // namespace coreinterp::ice
