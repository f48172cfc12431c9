#include "coreinterp/interp_vebi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "coreinterp/errors.hpp"
#include "coreinterp/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coreinterp::vebi {

std::size_t UnitMatrix::column_of(const UnitRef& u) const {
  auto it = layer_offset.find(u.layer_id);
  if (it == layer_offset.end()) throw ValidationError("unknown layer " + u.layer_id);
  const std::size_t col = it->second + u.filter;
  if (col >= columns.size() || columns[col].layer_id != u.layer_id) {
    throw ValidationError("filter " + std::to_string(u.filter) + " out of range for layer " +
                          u.layer_id);
  }
  return col;
}

UnitMatrix build_unit_matrix(const std::vector<std::pair<std::string, const Tensor4*>>& layers) {
  if (layers.empty()) throw ValidationError("no layers to build a unit matrix from");
  const std::size_t n = layers.front().second->shape().n;
  std::size_t total = 0;
  for (const auto& [id, t] : layers) {
    if (t->shape().n != n) {
      throw ValidationError("layer " + id + " has " + std::to_string(t->shape().n) +
                            " samples, expected " + std::to_string(n));
    }
    total += t->shape().d;
  }
  UnitMatrix um;
  um.values = Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(total));
  std::size_t offset = 0;
  for (const auto& [id, t] : layers) {
    const auto pooled = global_average_pool(*t, id);
    um.values.middleCols(static_cast<Eigen::Index>(offset), pooled.data.cols()) = pooled.data;
    um.layer_offset[id] = offset;
    for (std::size_t f = 0; f < t->shape().d; ++f) um.columns.push_back({id, f});
    offset += t->shape().d;
  }
  return um;
}

UnitMatrix build_unit_matrix(const DatasetView& view) {
  std::vector<Tensor4> tensors;
  const auto& ids = view.base().manifest().layer_ids;
  tensors.reserve(ids.size());
  for (const auto& id : ids) tensors.push_back(view.layer(id));
  std::vector<std::pair<std::string, const Tensor4*>> layers;
  for (std::size_t k = 0; k < ids.size(); ++k) layers.emplace_back(ids[k], &tensors[k]);
  return build_unit_matrix(layers);
}

Standardized standardize_columns(const Matrix& m) {
  Standardized out;
  const double n = static_cast<double>(m.rows());
  std::vector<Vector> cols;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double mean = m.col(j).mean();
    const Vector centered = m.col(j).array() - mean;
    const double sd = std::sqrt(centered.squaredNorm() / n);
    if (!(sd > 1e-10 * std::max(1.0, std::abs(mean)))) {
      out.dropped.push_back(static_cast<std::size_t>(j));
      continue;
    }
    out.kept.push_back(static_cast<std::size_t>(j));
    cols.push_back(centered / sd);
  }
  out.psi = Matrix(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.psi.col(static_cast<Eigen::Index>(k)) = cols[k];
  return out;
}

namespace {

double soft_threshold(double z, double mu) {
  if (z > mu) return z - mu;
  if (z < -mu) return z + mu;
  return 0.0;
}

void check_problem(const Matrix& psi, const Vector& y, double mu) {
  if (mu < 0.0 || std::isnan(mu)) throw ValidationError("lasso mu must be >= 0");
  if (psi.rows() != y.size()) throw ValidationError("lasso: Psi rows do not match targets");
  if (!psi.allFinite() || !y.allFinite()) throw ValidationError("lasso input contains NaN/Inf");
}

}  // namespace

LassoResult solve_lasso(const Matrix& psi_in, const Vector& y, double mu, const LassoOptions& opts) {
  check_problem(psi_in, y, mu);
  const Eigen::MatrixXd psi = psi_in;  // column-major for column sweeps
  const Eigen::Index p = psi.cols();
  const Vector col_sq = psi.colwise().squaredNorm().transpose();

  LassoResult res;
  res.weights = Vector::Zero(p);
  Vector residual = y;
  for (res.sweeps = 0; res.sweeps < opts.max_sweeps;) {
    ++res.sweeps;
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (col_sq[j] == 0.0) continue;
      const double old = res.weights[j];
      const double z = psi.col(j).dot(residual) + col_sq[j] * old;
      const double updated = soft_threshold(z, mu) / col_sq[j];
      if (updated != old) {
        residual -= (updated - old) * psi.col(j);
        res.weights[j] = updated;
        max_change = std::max(max_change, std::abs(updated - old) * col_sq[j]);
      }
    }
    if (max_change < opts.tol) {
      res.converged = true;
      break;
    }
    // Refresh the running residual now and then so rounding does not accumulate.
    if (res.sweeps % 50 == 0) residual = y - psi * res.weights;
  }
  return res;
}

double lasso_objective(const Matrix& psi, const Vector& y, const Vector& w, double mu) {
  return 0.5 * (psi * w - y).squaredNorm() + mu * w.lpNorm<1>();
}

double kkt_residual(const Matrix& psi, const Vector& y, const Vector& w, double mu) {
  const Vector grad = psi.transpose() * (psi * w - y);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    const double v = w[j] == 0.0 ? std::max(0.0, std::abs(grad[j]) - mu)
                                 : std::abs(grad[j] + mu * (w[j] > 0 ? 1.0 : -1.0));
    worst = std::max(worst, v);
  }
  return worst;
}

// ---------------------------------------------------------------------------

RelevantUnits identify_units(const UnitMatrix& units, std::span<const ClassId> labels,
                             std::size_t num_classes, const VebiOptions& opts) {
  if (labels.size() != static_cast<std::size_t>(units.values.rows())) {
    throw ValidationError("unit matrix rows do not match labels");
  }
  std::set<ClassId> present(labels.begin(), labels.end());
  if (present.size() < 2) throw ValidationError("unit identification needs at least 2 classes");
  if (opts.mu_absolute && *opts.mu_absolute < 0.0) throw ValidationError("mu must be >= 0");

  const Standardized st = standardize_columns(units.values);
  RelevantUnits out;
  out.mu_fraction = opts.mu_absolute ? 0.0 : opts.mu_fraction;
  if (!st.dropped.empty()) {
    out.warnings.push_back(std::to_string(st.dropped.size()) +
                           " zero-variance unit columns dropped before the lasso");
  }

  std::vector<ClassId> classes;
  for (ClassId c = 0; c < num_classes; ++c) {
    if (present.contains(c)) classes.push_back(c);
  }
  std::vector<UnitList> lists(classes.size());
  std::vector<double> mus(classes.size());
  parallel_for(classes.size(), [&](std::size_t k) {
    const ClassId c = classes[k];
    Vector y(static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      y[static_cast<Eigen::Index>(i)] = labels[i] == c ? 1.0 : 0.0;
    }
    const double mu = opts.mu_absolute
                          ? *opts.mu_absolute
                          : opts.mu_fraction * (st.psi.transpose() * y).lpNorm<Eigen::Infinity>();
    mus[k] = mu;
    const LassoResult res = solve_lasso(st.psi, y, mu, opts.lasso);
    UnitList list;
    for (Eigen::Index j = 0; j < res.weights.size(); ++j) {
      if (res.weights[j] != 0.0) {
        const UnitRef& ref = units.columns[st.kept[static_cast<std::size_t>(j)]];
        list.push_back({ref.layer_id, ref.filter, res.weights[j]});
      }
    }
    std::stable_sort(list.begin(), list.end(), [](const RelevantUnit& a, const RelevantUnit& b) {
      return std::abs(a.weight) > std::abs(b.weight);
    });
    lists[k] = std::move(list);
  });
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (lists[k].empty()) {
      out.warnings.push_back("class " + std::to_string(classes[k]) + ": lasso selected no units");
    }
    out.per_class[classes[k]] = std::move(lists[k]);
    out.mu[classes[k]] = mus[k];
  }
  return out;
}

RelevantUnits identify_units(const DatasetView& view, const VebiOptions& opts) {
  const UnitMatrix um = build_unit_matrix(view);
  return identify_units(um, view.labels(), view.base().num_classes(), opts);
}

UnitList units_in_layer(const UnitList& units, const std::string& layer_id) {
  UnitList out;
  for (const auto& u : units) {
    if (u.layer_id == layer_id) out.push_back(u);
  }
  return out;
}

std::optional<AlignedUnits> align_unit_sets(const UnitList& a, const UnitList& b) {
  std::vector<std::string> layers;
  for (const auto& u : a) {
    if (std::find(layers.begin(), layers.end(), u.layer_id) == layers.end()) layers.push_back(u.layer_id);
  }
  AlignedUnits out;
  auto by_weight = [](UnitList l) {
    std::stable_sort(l.begin(), l.end(), [](const RelevantUnit& x, const RelevantUnit& y) {
      return std::abs(x.weight) > std::abs(y.weight);
    });
    return l;
  };
  std::sort(layers.begin(), layers.end());
  for (const auto& layer : layers) {
    UnitList la = by_weight(units_in_layer(a, layer));
    UnitList lb = by_weight(units_in_layer(b, layer));
    if (la.empty() || lb.empty()) continue;
    const std::size_t keep = std::min(la.size(), lb.size());
    la.resize(keep);
    lb.resize(keep);
    out.a.insert(out.a.end(), la.begin(), la.end());
    out.b.insert(out.b.end(), lb.begin(), lb.end());
    out.shared_layers.push_back(layer);
  }
  if (out.shared_layers.empty()) return std::nullopt;
  return out;
}

std::optional<double> coverage(const UnitList& a, const UnitList& b, CoverageNorm norm) {
  std::set<UnitRef> sa, sb;
  for (const auto& u : a) sa.insert(u.ref());
  for (const auto& u : b) sb.insert(u.ref());
  std::size_t shared = 0;
  for (const auto& r : sa) shared += sb.count(r);
  const std::size_t denom = norm == CoverageNorm::Jaccard ? sa.size() + sb.size() - shared : sb.size();
  if (denom == 0) return std::nullopt;
  return 100.0 * static_cast<double>(shared) / static_cast<double>(denom);
}

std::map<ClassId, std::optional<double>> intersection_coverage(const RelevantUnits& a,
                                                               const RelevantUnits& b,
                                                               CoverageNorm norm) {
  std::set<ClassId> classes;
  for (const auto& [c, l] : a.per_class) classes.insert(c);
  for (const auto& [c, l] : b.per_class) classes.insert(c);
  std::map<ClassId, std::optional<double>> out;
  static const UnitList empty;
  for (ClassId c : classes) {
    auto ia = a.per_class.find(c);
    auto ib = b.per_class.find(c);
    out[c] = coverage(ia == a.per_class.end() ? empty : ia->second,
                      ib == b.per_class.end() ? empty : ib->second, norm);
  }
  return out;
}

Tensor4 vebi_maps(const Tensor4& layer_tensor, const UnitList& units, const std::string& layer_id) {
  std::vector<std::size_t> channels;
  for (const auto& u : units) {
    if (u.layer_id != layer_id) continue;
    if (u.filter >= layer_tensor.shape().d) {
      throw ValidationError("unit filter " + std::to_string(u.filter) + " out of range for layer " +
                            layer_id + " of depth " + std::to_string(layer_tensor.shape().d));
    }
    channels.push_back(u.filter);
  }
  if (channels.empty()) throw ValidationError("no relevant units in layer " + layer_id);
  return layer_tensor.select_channels(channels);
}

// ---------------------------------------------------------------------------

json RelevantUnits::to_json() const {
  json classes = json::object();
  json mus = json::object();
  for (const auto& [c, list] : per_class) {
    json arr = json::array();
    for (const auto& u : list) arr.push_back({u.layer_id, u.filter, u.weight});
    classes[std::to_string(c)] = std::move(arr);
  }
  for (const auto& [c, m] : mu) mus[std::to_string(c)] = m;
  return {{"mu", {{"fraction", mu_fraction}, {"per_class", mus}}},
          {"classes", classes},
          {"warnings", warnings}};
}

RelevantUnits RelevantUnits::from_json(const json& j) {
  RelevantUnits out;
  try {
    const auto& mu = j.at("mu");
    if (mu.is_number()) {
      out.mu_fraction = 0.0;
    } else {
      out.mu_fraction = mu.value("fraction", 0.0);
      for (const auto& [key, v] : mu.at("per_class").items()) out.mu[std::stoul(key)] = v.get<double>();
    }
    for (const auto& [key, arr] : j.at("classes").items()) {
      UnitList list;
      for (const auto& e : arr) {
        list.push_back({e.at(0).get<std::string>(), e.at(1).get<std::size_t>(), e.at(2).get<double>()});
      }
      out.per_class[std::stoul(key)] = std::move(list);
    }
    if (j.contains("warnings")) out.warnings = j["warnings"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed relevant-units JSON: ") + e.what());
  }
  return out;
}

void save(const RelevantUnits& units, const fs::path& file, const json& extra) {
  json j = extra;
  const json body = units.to_json();
  for (const auto& [k, v] : body.items()) j[k] = v;
  j["method"] = "vebi";
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + file.string());
  out << j.dump(2) << "\n";
}

RelevantUnits load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("missing " + file.string());
  try {
    return RelevantUnits::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
}

}  // namespace coreinterp::vebi
