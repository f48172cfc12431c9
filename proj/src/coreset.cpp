#include "coreinterp/coreset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "coreinterp/errors.hpp"
#include "coreinterp/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coreinterp {

std::string to_string(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::Random: return "random";
    case SelectionMethod::Moderate: return "moderate";
    case SelectionMethod::DGPruning: return "dgpruning";
  }
  return "unknown";
}

SelectionMethod parse_selection_method(const std::string& s) {
  if (s == "random") return SelectionMethod::Random;
  if (s == "moderate") return SelectionMethod::Moderate;
  if (s == "dgpruning") return SelectionMethod::DGPruning;
  throw ValidationError("unknown selection method '" + s + "' (random|moderate|dgpruning)");
}

void CoresetSpec::validate() const {
  if (!(rho > 0.0 && rho < 1.0)) {
    throw ValidationError("rho must lie in (0, 1), got " + std::to_string(rho));
  }
  if (knn_k < 1) throw ValidationError("knn_k must be >= 1");
  if (gamma_forward < 0.0 || gamma_backward < 0.0) {
    throw ValidationError("message-passing gammas must be >= 0");
  }
}

json CoresetSpec::to_json() const {
  return {{"method", to_string(method)},     {"rho", rho},
          {"seed", seed},                     {"knn_k", knn_k},
          {"gamma_forward", gamma_forward},   {"gamma_backward", gamma_backward},
          {"normalize_scores", normalize_scores}};
}

CoresetSpec CoresetSpec::from_json(const json& j) {
  CoresetSpec s;
  try {
    s.method = parse_selection_method(j.at("method").get<std::string>());
    s.rho = j.at("rho").get<double>();
    s.seed = j.value("seed", std::uint64_t{0});
    s.knn_k = j.value("knn_k", std::size_t{5});
    s.gamma_forward = j.value("gamma_forward", 1.0);
    s.gamma_backward = j.value("gamma_backward", 1.0);
    s.normalize_scores = j.value("normalize_scores", true);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed coreset spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::size_t class_budget(double rho, std::size_t class_size) {
  const auto rounded = static_cast<std::size_t>(std::lround(rho * static_cast<double>(class_size)));
  return std::min(class_size, std::max<std::size_t>(1, rounded));
}

// ---------------------------------------------------------------------------
// Coreset

std::vector<std::size_t> Coreset::all_indices() const {
  std::vector<std::size_t> out;
  for (const auto& [c, idx] : per_class_indices) out.insert(out.end(), idx.begin(), idx.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t Coreset::size() const {
  std::size_t n = 0;
  for (const auto& [c, idx] : per_class_indices) n += idx.size();
  return n;
}

json Coreset::to_json(const DatasetManifest& m) const {
  json per_class = json::object();
  for (const auto& [c, idx] : per_class_indices) {
    json ids = json::array();
    for (auto i : idx) ids.push_back(m.sample_ids.at(i));
    per_class[std::to_string(c)] = std::move(ids);
  }
  return {{"spec", spec.to_json()}, {"source_model", source_model}, {"per_class", per_class}};
}

Coreset Coreset::from_json(const json& j, const DatasetManifest& m) {
  Coreset cs;
  std::vector<std::string> missing;
  try {
    cs.spec = CoresetSpec::from_json(j.at("spec"));
    cs.source_model = j.value("source_model", std::string{});
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < m.sample_ids.size(); ++i) index[m.sample_ids[i]] = i;
    for (const auto& [key, ids] : j.at("per_class").items()) {
      const ClassId c = std::stoul(key);
      auto& out = cs.per_class_indices[c];
      for (const auto& id : ids) {
        auto it = index.find(id.get<std::string>());
        if (it == index.end()) {
          missing.push_back(id.get<std::string>());
        } else {
          out.push_back(it->second);
        }
      }
      std::sort(out.begin(), out.end());
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed coreset: ") + e.what());
  }
  if (!missing.empty()) {
    std::string msg = "coreset references " + std::to_string(missing.size()) +
                      " sample_ids absent from the dataset:";
    for (const auto& id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  return cs;
}

void Coreset::save(const fs::path& path, const DatasetManifest& m) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << to_json(m).dump(2) << "\n";
}

json Coreset::read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing coreset file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Selectors

Vector class_center(const Matrix& vectors) {
  if (vectors.rows() == 0) throw ValidationError("class center of an empty class");
  return vectors.colwise().mean().transpose();
}

std::vector<std::size_t> select_random(std::span<const std::size_t> class_indices, double rho,
                                       std::uint64_t seed) {
  if (class_indices.empty()) throw ValidationError("cannot select from an empty class");
  const std::size_t budget = class_budget(rho, class_indices.size());
  std::vector<std::size_t> pool(class_indices.begin(), class_indices.end());
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `budget` slots become the sample.
  for (std::size_t k = 0; k < budget; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
  }
  pool.resize(budget);
  std::sort(pool.begin(), pool.end());
  return pool;
}

namespace {

std::vector<double> distances_to_center(const Matrix& vectors) {
  const Vector center = class_center(vectors);
  std::vector<double> dist(static_cast<std::size_t>(vectors.rows()));
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    dist[static_cast<std::size_t>(i)] = (vectors.row(i).transpose() - center).norm();
  }
  return dist;
}

}  // namespace

std::vector<std::size_t> select_moderate(const Matrix& vectors, double rho) {
  const auto n = static_cast<std::size_t>(vectors.rows());
  const std::vector<double> dist = distances_to_center(vectors);
  const std::size_t budget = class_budget(rho, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
  });

  // Rank positions around the median, alternating below then above.
  const std::size_t median = (n - 1) / 2;
  std::vector<bool> taken(n, false);
  std::size_t count = 0;
  for (std::size_t step = 0; count < budget; ++step) {
    const std::size_t offset = (step + 1) / 2;
    const bool below = step % 2 == 1;
    if (below && offset > median) continue;
    const std::size_t pos = below ? median - offset : median + offset;
    if (pos >= n) continue;
    taken[pos] = true;
    ++count;
  }

  // Within a run of equal distances the ranks are interchangeable: hand the
  // run's selected slots to its lowest sample indices (the run is index-sorted).
  std::vector<std::size_t> out;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    std::size_t slots = 0;
    while (end < n && dist[order[end]] == dist[order[start]]) slots += taken[end++];
    for (std::size_t k = 0; k < slots; ++k) out.push_back(order[start + k]);
    start = end;
  }
  std::sort(out.begin(), out.end());
  return out;
}

SampleGraph build_knn_graph(const Matrix& vectors, std::size_t k) {
  const auto n = static_cast<std::size_t>(vectors.rows());
  SampleGraph g;
  g.neighbors.resize(n);
  if (n < 2) return g;
  const std::size_t kk = std::min(k, n - 1);

  std::vector<double> kept;
  kept.reserve(n * kk);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) {
        cand.emplace_back((vectors.row(static_cast<Eigen::Index>(i)) -
                           vectors.row(static_cast<Eigen::Index>(j))).norm(),
                          j);
      }
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
    for (std::size_t e = 0; e < kk; ++e) {
      g.neighbors[i].push_back({cand[e].second, cand[e].first, 0.0});
      kept.push_back(cand[e].first);
    }
  }

  std::sort(kept.begin(), kept.end());
  const std::size_t m = kept.size();
  const double median = m % 2 == 1 ? kept[m / 2] : 0.5 * (kept[m / 2 - 1] + kept[m / 2]);
  g.sigma = std::max(median, 1e-12);
  for (auto& edges : g.neighbors) {
    for (auto& e : edges) {
      e.weight = std::max(std::exp(-e.distance / g.sigma), std::numeric_limits<double>::min());
    }
  }
  return g;
}

std::vector<std::size_t> select_dgpruning(const Matrix& vectors, const CoresetSpec& spec) {
  const auto n = static_cast<std::size_t>(vectors.rows());
  if (n == 0) throw ValidationError("cannot select from an empty class");
  const std::size_t budget = class_budget(spec.rho, n);

  // Centrality: closer to the class center scores higher.
  const std::vector<double> dist = distances_to_center(vectors);
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) score[i] = -dist[i];
  if (spec.normalize_scores) {
    const auto [lo, hi] = std::minmax_element(score.begin(), score.end());
    const double min = *lo, range = *hi - *lo;
    for (double& s : score) s = range > 0.0 ? (s - min) / range : 1.0;
  }

  const SampleGraph graph = build_knn_graph(vectors, spec.knn_k);

  // Forward pass: every node absorbs its neighbors' initial scores.
  std::vector<double> current(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (const auto& e : graph.neighbors[i]) acc += e.weight * score[e.target];
    current[i] = score[i] + spec.gamma_forward * acc;
  }

  // Backward pass: each pick suppresses its unselected neighbors.
  std::vector<bool> selected(n, false);
  std::vector<std::size_t> out;
  out.reserve(budget);
  while (out.size() < budget) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!selected[i] && (best == n || current[i] > current[best])) best = i;
    }
    selected[best] = true;
    out.push_back(best);
    for (const auto& e : graph.neighbors[best]) {
      if (!selected[e.target]) current[e.target] *= 1.0 - spec.gamma_backward * e.weight;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Coreset select_coreset(const Matrix& pooled, std::span<const ClassId> labels,
                       std::size_t num_classes, const CoresetSpec& spec,
                       const std::string& source_model) {
  spec.validate();
  const auto parts = partition_by_class(labels, num_classes);
  std::vector<std::pair<ClassId, std::vector<std::size_t>>> work(parts.begin(), parts.end());
  std::vector<std::vector<std::size_t>> picked(work.size());

  parallel_for(work.size(), [&](std::size_t w) {
    const auto& [c, members] = work[w];
    if (members.empty()) return;
    std::vector<std::size_t> local;
    if (spec.method == SelectionMethod::Random) {
      picked[w] = select_random(members, spec.rho, mix_seed(spec.seed, c));
      return;
    }
    Matrix rows(static_cast<Eigen::Index>(members.size()), pooled.cols());
    for (std::size_t k = 0; k < members.size(); ++k) {
      rows.row(static_cast<Eigen::Index>(k)) = pooled.row(static_cast<Eigen::Index>(members[k]));
    }
    local = spec.method == SelectionMethod::Moderate ? select_moderate(rows, spec.rho)
                                                     : select_dgpruning(rows, spec);
    for (auto l : local) picked[w].push_back(members[l]);
  });

  Coreset cs;
  cs.spec = spec;
  cs.source_model = source_model;
  for (std::size_t w = 0; w < work.size(); ++w) {
    if (!work[w].second.empty()) cs.per_class_indices[work[w].first] = std::move(picked[w]);
  }
  return cs;
}

Coreset select_coreset(const Dataset& ds, const CoresetSpec& spec) {
  const auto last = ds.layer(ds.last_layer());
  const Matrix pooled = global_average_pool(*last).data;
  return select_coreset(pooled, ds.manifest().labels, ds.num_classes(), spec,
                        ds.manifest().source_model);
}

DatasetView apply_coreset(const json& coreset_json, std::shared_ptr<const Dataset> target) {
  std::vector<std::size_t> rows;
  std::vector<std::string> missing;
  try {
    for (const auto& [key, ids] : coreset_json.at("per_class").items()) {
      for (const auto& id : ids) {
        if (auto idx = target->index_of(id.get<std::string>())) {
          rows.push_back(*idx);
        } else {
          missing.push_back(id.get<std::string>());
        }
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed coreset: ") + e.what());
  }
  if (!missing.empty()) {
    std::string msg = "coreset references " + std::to_string(missing.size()) +
                      " sample_ids absent from the target dataset:";
    for (const auto& id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return DatasetView(std::move(target), std::move(rows));
}

DatasetView apply_coreset(const Coreset& coreset, const DatasetManifest& source,
                          std::shared_ptr<const Dataset> target) {
  return apply_coreset(coreset.to_json(source), std::move(target));
}

}  // namespace coreinterp
