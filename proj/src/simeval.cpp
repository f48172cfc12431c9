#include "coreinterp/simeval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include "coreinterp/errors.hpp"
#include "coreinterp/parallel.hpp"

using nlohmann::json;

namespace coreinterp::simeval {

void ShapeMetricConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  if (max_rows == 0) throw ValidationError("max_rows must be positive");
  if (ridge && *ridge < 0.0) throw ValidationError("ridge must be >= 0");
}

json ShapeMetricConfig::to_json() const {
  json j = {{"alpha", alpha}, {"max_rows", max_rows}, {"seed", seed}};
  j["ridge"] = ridge ? json(*ridge) : json("1e-6*trace(cov)/p");
  return j;
}

ShapeMetricConfig ShapeMetricConfig::from_json(const json& j) {
  ShapeMetricConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.max_rows = j.value("max_rows", c.max_rows);
  c.seed = j.value("seed", c.seed);
  if (j.contains("ridge") && j["ridge"].is_number()) c.ridge = j["ridge"].get<double>();
  c.validate();
  return c;
}

Matrix flatten_maps(const Tensor4& maps) { return flatten(maps); }

Matrix partial_whiten(const Matrix& centered, double alpha, std::optional<double> ridge) {
  const auto p = centered.cols();
  const double n = static_cast<double>(centered.rows());
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / n;
  const double floor = ridge.value_or(1e-6 * cov.trace() / static_cast<double>(p));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues below the ridge are raised to it; well-conditioned directions
  // are whitened exactly.
  const Eigen::VectorXd inv_sqrt =
      eig.eigenvalues().unaryExpr([&](double l) { return 1.0 / std::sqrt(std::max(l, floor)); });
  const Eigen::MatrixXd whitener = eig.eigenvectors() * inv_sqrt.asDiagonal() *
                                   eig.eigenvectors().transpose();
  const Eigen::MatrixXd transform =
      (1.0 - alpha) * whitener + alpha * Eigen::MatrixXd::Identity(p, p);
  return centered * transform;
}

namespace {

Matrix pad_and_center(const Matrix& m, Eigen::Index width) {
  Matrix out = Matrix::Zero(m.rows(), width);
  out.leftCols(m.cols()) = m;
  out.rowwise() -= out.colwise().mean();
  return out;
}

}  // namespace

double angular_shape_distance(const Matrix& x_in, const Matrix& y_in, const ShapeMetricConfig& cfg) {
  cfg.validate();
  if (x_in.rows() != y_in.rows()) {
    throw ValidationError("shape metric needs matching rows, got " + std::to_string(x_in.rows()) +
                          " and " + std::to_string(y_in.rows()));
  }
  const Eigen::Index width = std::max(x_in.cols(), y_in.cols());
  if (x_in.rows() <= width) {
    throw ValidationError("shape metric needs more rows (" + std::to_string(x_in.rows()) +
                          ") than columns (" + std::to_string(width) + ")");
  }
  if (!x_in.allFinite() || !y_in.allFinite()) {
    throw ValidationError("shape metric input contains non-finite values");
  }

  const Matrix* x = &x_in;
  const Matrix* y = &y_in;
  Matrix xs, ys;
  if (static_cast<std::size_t>(x_in.rows()) > cfg.max_rows) {
    if (cfg.max_rows <= static_cast<std::size_t>(width)) {
      throw ValidationError("max_rows must exceed the representation width");
    }
    std::vector<std::size_t> idx(static_cast<std::size_t>(x_in.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(cfg.seed);
    for (std::size_t k = 0; k < cfg.max_rows; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
      std::swap(idx[k], idx[pick(rng)]);
    }
    idx.resize(cfg.max_rows);
    std::sort(idx.begin(), idx.end());
    xs = Matrix(static_cast<Eigen::Index>(idx.size()), x_in.cols());
    ys = Matrix(static_cast<Eigen::Index>(idx.size()), y_in.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      xs.row(static_cast<Eigen::Index>(k)) = x_in.row(static_cast<Eigen::Index>(idx[k]));
      ys.row(static_cast<Eigen::Index>(k)) = y_in.row(static_cast<Eigen::Index>(idx[k]));
    }
    x = &xs;
    y = &ys;
  }

  const Matrix xc = pad_and_center(*x, width);
  const Matrix yc = pad_and_center(*y, width);
  if (xc.norm() == 0.0 || yc.norm() == 0.0) throw ComputationError("degenerate representation");

  const Matrix mx = partial_whiten(xc, cfg.alpha, cfg.ridge);
  const Matrix my = partial_whiten(yc, cfg.alpha, cfg.ridge);
  const double nx = mx.norm();
  const double ny = my.norm();
  if (nx == 0.0 || ny == 0.0) throw ComputationError("degenerate representation");

  // max over orthogonal Q of <Mx, My Q> is the nuclear norm of Mx^T My.
  const Eigen::MatrixXd cross = mx.transpose() * my;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross);
  const double aligned = svd.singularValues().sum();
  const double cosine = std::clamp(aligned / (nx * ny), -1.0, 1.0);
  return std::acos(cosine);
}

// ---------------------------------------------------------------------------

json SimilarityReport::to_json() const {
  json per_class = json::object();
  for (const auto& [c, d] : per_class_distance) per_class[std::to_string(c)] = d;
  json skip = json::object();
  for (const auto& [c, why] : skipped) skip[std::to_string(c)] = why;
  json j = extra;
  j["per_class_distance"] = per_class;
  j["skipped"] = skip;
  j["phi_mean"] = phi_mean;
  j["budget_rho"] = budget_rho;
  j["interpretation"] = interpretation;
  j["coreset"] = coreset;
  j["model"] = model;
  return j;
}

SimilarityReport SimilarityReport::from_json(const json& j) {
  SimilarityReport r;
  try {
    for (const auto& [k, v] : j.at("per_class_distance").items()) {
      r.per_class_distance[std::stoul(k)] = v.get<double>();
    }
    if (j.contains("skipped")) {
      for (const auto& [k, v] : j["skipped"].items()) r.skipped[std::stoul(k)] = v.get<std::string>();
    }
    r.phi_mean = j.at("phi_mean").get<double>();
    r.budget_rho = j.at("budget_rho").get<double>();
    r.interpretation = j.value("interpretation", std::string{});
    r.coreset = j.value("coreset", std::string{});
    r.model = j.value("model", std::string{});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed similarity report: ") + e.what());
  }
  return r;
}

SimilarityReport phi_from_distances(const std::map<ClassId, double>& distances,
                                    std::map<ClassId, std::string> skipped) {
  if (distances.empty()) {
    throw ComputationError("every class was skipped; no similarity can be reported");
  }
  SimilarityReport r;
  r.per_class_distance = distances;
  r.skipped = std::move(skipped);
  double sum = 0.0;
  for (const auto& [c, d] : distances) sum += d;
  r.phi_mean = sum / static_cast<double>(distances.size());
  return r;
}

SimilarityReport phi_average(const std::vector<MapPair>& pairs, const ShapeMetricConfig& cfg) {
  std::vector<std::optional<double>> dist(pairs.size());
  std::vector<std::string> reason(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t k) {
    try {
      dist[k] = angular_shape_distance(flatten_maps(pairs[k].full), flatten_maps(pairs[k].coreset), cfg);
    } catch (const ComputationError& e) {
      reason[k] = e.what();
    }
  });
  std::map<ClassId, double> ok;
  std::map<ClassId, std::string> skipped;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (dist[k]) {
      ok[pairs[k].cls] = *dist[k];
    } else {
      skipped[pairs[k].cls] = reason[k];
    }
  }
  return phi_from_distances(ok, std::move(skipped));
}

// ---------------------------------------------------------------------------

RobustnessEntry robustness_entry(const std::vector<SimilarityReport>& reports) {
  if (reports.size() < 2) {
    throw ValidationError("robustness needs at least 2 budgets, got " + std::to_string(reports.size()));
  }
  RobustnessEntry e;
  e.interpretation = reports.front().interpretation;
  e.coreset = reports.front().coreset;
  e.model = reports.front().model;
  std::vector<const SimilarityReport*> sorted;
  for (const auto& r : reports) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](auto* a, auto* b) { return a->budget_rho < b->budget_rho; });
  for (const auto* r : sorted) {
    e.budgets.push_back(r->budget_rho);
    e.phis.push_back(r->phi_mean);
  }
  const double k = static_cast<double>(e.phis.size());
  double sum = 0.0;
  for (double v : e.phis) sum += v;
  e.mean = sum / k;
  double sq = 0.0;
  for (double v : e.phis) sq += (v - e.mean) * (v - e.mean);
  e.std = std::sqrt(sq / k);
  for (double b : kRobustnessBudgets) {
    const bool present = std::any_of(e.budgets.begin(), e.budgets.end(),
                                     [&](double x) { return std::abs(x - b) < 1e-9; });
    if (!present) e.missing_budgets.push_back(b);
  }
  return e;
}

RobustnessReport robustness_summary(const std::vector<SimilarityReport>& reports) {
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<SimilarityReport>> groups;
  for (const auto& r : reports) {
    const bool in_grid = std::any_of(kRobustnessBudgets.begin(), kRobustnessBudgets.end(),
                                     [&](double b) { return std::abs(r.budget_rho - b) < 1e-9; });
    if (in_grid) groups[{r.model, r.interpretation, r.coreset}].push_back(r);
  }
  RobustnessReport out;
  for (const auto& [key, group] : groups) out.entries.push_back(robustness_entry(group));
  if (out.entries.empty()) throw ValidationError("no reports at the robustness budgets 10-50%");
  return out;
}

json RobustnessReport::to_json() const {
  json arr = json::array();
  for (const auto& e : entries) {
    arr.push_back({{"interpretation", e.interpretation},
                   {"coreset", e.coreset},
                   {"model", e.model},
                   {"budgets", e.budgets},
                   {"phi", e.phis},
                   {"mean", e.mean},
                   {"std", e.std},
                   {"missing_budgets", e.missing_budgets}});
  }
  return {{"entries", arr}, {"budgets", kRobustnessBudgets}, {"std", "population"}};
}

std::string RobustnessReport::to_table() const {
  std::size_t w_model = 5, w_interp = 14, w_coreset = 7;
  for (const auto& e : entries) {
    w_model = std::max(w_model, e.model.size());
    w_interp = std::max(w_interp, e.interpretation.size());
    w_coreset = std::max(w_coreset, e.coreset.size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w_model)) << "model" << "  "
     << std::setw(static_cast<int>(w_interp)) << "interpretation" << "  "
     << std::setw(static_cast<int>(w_coreset)) << "coreset" << "  "
     << "phi (mean ± std)\n";
  os << std::string(w_model + w_interp + w_coreset + 6 + 19, '-') << "\n";
  for (const auto& e : entries) {
    os << std::left << std::setw(static_cast<int>(w_model)) << e.model << "  "
       << std::setw(static_cast<int>(w_interp)) << e.interpretation << "  "
       << std::setw(static_cast<int>(w_coreset)) << e.coreset << "  " << std::fixed
       << std::setprecision(4) << e.mean << " ± " << e.std;
    if (!e.missing_budgets.empty()) os << "  (missing budgets)";
    os << "\n";
  }
  return os.str();
}

}  // namespace coreinterp::simeval
