#include "coreinterp/interp_ice.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "coreinterp/errors.hpp"
#include "coreinterp/npy.hpp"
#include "coreinterp/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coreinterp::ice {

namespace {

constexpr double kEps = 1e-12;

double reconstruction_error(const Matrix& V, const Matrix& S, const Matrix& W) {
  return (V - S * W).norm();
}

double init_scale(const Matrix& V, std::size_t rank) {
  const double mean = V.size() ? V.mean() : 0.0;
  return std::sqrt(std::max(mean, 0.0) / static_cast<double>(rank));
}

void update_codes(const Matrix& V, Matrix& S, const Matrix& W) {
  const Matrix numer = V * W.transpose();
  const Matrix denom = S * (W * W.transpose());
  S = (S.array() * numer.array() / (denom.array() + kEps)).matrix();
}

}  // namespace

NmfModel fit_nmf(const Matrix& V, const NmfOptions& opts) {
  const auto N = static_cast<std::size_t>(V.rows());
  const auto d = static_cast<std::size_t>(V.cols());
  if (opts.rank == 0 || opts.rank > std::min(N, d)) {
    throw ValidationError("NMF rank " + std::to_string(opts.rank) + " outside [1, min(N, d) = " +
                          std::to_string(std::min(N, d)) + "]");
  }
  if (!V.allFinite()) throw ValidationError("NMF input contains non-finite values");
  if ((V.array() < 0.0).any()) throw ValidationError("NMF input has negative entries");

  const double scale = init_scale(V, opts.rank);
  Matrix S = Matrix::Constant(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(opts.rank), scale);
  Matrix W(static_cast<Eigen::Index>(opts.rank), static_cast<Eigen::Index>(d));
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index k = 0; k < W.size(); ++k) W.data()[k] = unif(rng) * scale;

  NmfModel model;
  model.rank = opts.rank;
  double loss = reconstruction_error(V, S, W);
  model.loss_history.push_back(loss);
  std::size_t it = 0;
  while (it < opts.max_iter && loss > 0.0) {
    update_codes(V, S, W);
    const Matrix numer = S.transpose() * V;
    const Matrix denom = (S.transpose() * S) * W;
    W = (W.array() * numer.array() / (denom.array() + kEps)).matrix();
    ++it;
    const double next = reconstruction_error(V, S, W);
    model.loss_history.push_back(next);
    const double change = std::abs(loss - next) / std::max(loss, kEps);
    loss = next;
    if (change < opts.tol) break;
  }
  model.components = std::move(W);
  model.fit_loss = loss;
  model.iterations_run = it;
  return model;
}

Matrix project_nmf(const Matrix& V, const Matrix& components, const ProjectionOptions& opts) {
  if (V.cols() != components.cols()) {
    throw ValidationError("depth mismatch: data has " + std::to_string(V.cols()) +
                          " channels, components have " + std::to_string(components.cols()));
  }
  if ((V.array() < 0.0).any()) throw ValidationError("NMF projection input has negative entries");
  const auto rank = static_cast<std::size_t>(components.rows());
  Matrix S = Matrix::Constant(V.rows(), components.rows(), init_scale(V, rank));
  // With W frozen, V W^T and W W^T are fixed; the loss follows from them too:
  // |V - SW|^2 = |V|^2 - 2 <S, V W^T> + <S G, S>.
  const Matrix numer = V * components.transpose();
  const Matrix gram = components * components.transpose();
  const double v2 = V.squaredNorm();
  auto loss_of = [&](const Matrix& SG) {
    return std::sqrt(std::max(0.0, v2 - 2.0 * S.cwiseProduct(numer).sum() + SG.cwiseProduct(S).sum()));
  };
  Matrix SG = S * gram;
  double loss = reconstruction_error(V, S, components);
  for (std::size_t it = 0; it < opts.max_iter && loss > 0.0; ++it) {
    S = (S.array() * numer.array() / (SG.array() + kEps)).matrix();
    SG = S * gram;
    const double next = loss_of(SG);
    const double change = std::abs(loss - next) / std::max(loss, kEps);
    loss = next;
    if (change < opts.tol) break;
  }
  return S;
}

Tensor4 ice_maps(const Tensor4& t, const NmfModel& model, const ProjectionOptions& opts) {
  if (t.shape().d != static_cast<std::size_t>(model.components.cols())) {
    throw ValidationError("depth mismatch: tensor depth " + std::to_string(t.shape().d) +
                          ", NMF components depth " + std::to_string(model.components.cols()));
  }
  const Matrix V = flatten(clamp_nonnegative(t));
  const Matrix S = project_nmf(V, model.components, opts);
  return unflatten(S * model.components, t.shape());
}

IceFeatures fit_ice(const DatasetView& view, const std::string& layer_id, const NmfOptions& opts) {
  IceFeatures f;
  f.options = opts;
  f.layer_id = layer_id;
  const Tensor4 acts = clamp_nonnegative(view.layer(layer_id));
  const auto labels = view.labels();
  const auto parts = partition_by_class(labels, view.base().num_classes());
  std::vector<std::pair<ClassId, std::vector<std::size_t>>> work;
  for (const auto& [c, rows] : parts) {
    if (!rows.empty()) work.emplace_back(c, rows);
  }
  std::vector<NmfModel> models(work.size());
  parallel_for(work.size(), [&](std::size_t w) {
    NmfOptions o = opts;
    o.seed = mix_seed(opts.seed, work[w].first);
    const Matrix V = flatten(acts.gather(work[w].second));
    // a very small class (tiny coreset) cannot support the full rank
    o.rank = std::min<std::size_t>(o.rank, static_cast<std::size_t>(std::min(V.rows(), V.cols())));
    models[w] = fit_nmf(V, o);
  });
  for (std::size_t w = 0; w < work.size(); ++w) f.per_class[work[w].first] = std::move(models[w]);
  return f;
}

void save(const IceFeatures& f, const fs::path& dir, const json& extra) {
  fs::create_directories(dir);
  json classes = json::object();
  for (const auto& [c, m] : f.per_class) {
    const std::string file = "components_" + std::to_string(c) + ".npy";
    npy::save_matrix(dir / file, m.components);
    classes[std::to_string(c)] = {{"file", file},
                                  {"r", m.rank},
                                  {"loss", m.fit_loss},
                                  {"iterations", m.iterations_run},
                                  {"seed", mix_seed(f.options.seed, c)}};
  }
  json j = extra;
  j["method"] = "ice";
  j["layer_id"] = f.layer_id;
  j["options"] = {{"rank", f.options.rank},
                  {"max_iter", f.options.max_iter},
                  {"tol", f.options.tol},
                  {"seed", f.options.seed},
                  {"negative_activations", "clamped to 0"}};
  j["classes"] = classes;
  std::ofstream out(dir / "ice.json", std::ios::trunc);
  out << j.dump(2) << "\n";
}

IceFeatures load(const fs::path& dir) {
  std::ifstream in(dir / "ice.json");
  if (!in) throw ValidationError("missing " + (dir / "ice.json").string());
  IceFeatures f;
  try {
    const json j = json::parse(in);
    f.layer_id = j.at("layer_id").get<std::string>();
    const auto& o = j.at("options");
    f.options.rank = o.at("rank").get<std::size_t>();
    f.options.max_iter = o.at("max_iter").get<std::size_t>();
    f.options.tol = o.at("tol").get<double>();
    f.options.seed = o.at("seed").get<std::uint64_t>();
    for (const auto& [key, c] : j.at("classes").items()) {
      NmfModel m;
      m.components = npy::load_matrix(dir / c.at("file").get<std::string>());
      m.rank = c.at("r").get<std::size_t>();
      m.fit_loss = c.at("loss").get<double>();
      m.iterations_run = c.at("iterations").get<std::size_t>();
      f.per_class[std::stoul(key)] = std::move(m);
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed ice.json: " + std::string(e.what()));
  }
  return f;
}

}  // namespace coreinterp::ice
