#include "coreinterp/fidelity.hpp"

#include <algorithm>
#include <cstdio>
#include <iterator>
#include <map>

#include "coreinterp/errors.hpp"

using nlohmann::json;

namespace coreinterp::fidelity {

Classification classify(const Tensor4& maps, std::span<const ClassId> labels,
                        const ClassifierHead& head) {
  if (maps.shape().d != head.input_depth()) {
    throw ValidationError("depth mismatch: maps depth " + std::to_string(maps.shape().d) +
                          ", classifier head expects " + std::to_string(head.input_depth()));
  }
  if (labels.size() != maps.shape().n) throw ValidationError("label count does not match maps");
  if (labels.empty()) throw ValidationError("nothing to classify");
  const Matrix pooled = global_average_pool(maps).data;
  Classification out;
  out.predictions.reserve(labels.size());
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < pooled.rows(); ++i) {
    const ClassId p = head.predict(pooled.row(i).transpose());
    out.predictions.push_back(p);
    correct += p == labels[static_cast<std::size_t>(i)];
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  return out;
}

namespace {

std::vector<std::size_t> head_channels(const vebi::UnitList& units, const ClassifierHead& head,
                                       std::size_t depth) {
  std::vector<std::size_t> channels;
  for (const auto& u : units) {
    if (u.layer_id != head.input_layer_id) continue;
    if (u.filter >= depth) {
      throw ValidationError("unit filter " + std::to_string(u.filter) + " out of range for layer " +
                            u.layer_id + " of depth " + std::to_string(depth));
    }
    channels.push_back(u.filter);
  }
  return channels;
}

void zero_channels(Tensor4& t, std::size_t sample, std::span<const std::size_t> channels) {
  const auto& s = t.shape();
  auto block = t.sample(sample);
  for (std::size_t loc = 0; loc < s.h * s.w; ++loc) {
    for (auto c : channels) block[loc * s.d + c] = 0.0;
  }
}

constexpr const char* kScopeNote = "units zeroed in the classifier's input layer only";

}  // namespace

FidelityReport perturb_and_classify(const Tensor4& last_layer, std::span<const ClassId> labels,
                                    ClassId cls, const vebi::UnitList& units,
                                    const ClassifierHead& head) {
  const auto channels = head_channels(units, head, last_layer.shape().d);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == cls) rows.push_back(i);
  }
  if (rows.empty()) throw ValidationError("class " + std::to_string(cls) + " has no samples");
  const std::vector<ClassId> class_labels(rows.size(), cls);
  Tensor4 subset = last_layer.gather(rows);
  const double baseline = classify(subset, class_labels, head).accuracy;
  for (std::size_t k = 0; k < rows.size(); ++k) zero_channels(subset, k, channels);

  FidelityReport r;
  r.accuracy = classify(subset, class_labels, head).accuracy;
  r.baseline_accuracy = baseline;
  r.accuracy_drop = baseline - r.accuracy;
  r.n_evaluated = rows.size();
  r.method = "vebi";
  r.cls = cls;
  r.note = kScopeNote;
  return r;
}

std::string to_string(Suppress s) { return s == Suppress::All ? "all" : "supporting"; }

Suppress parse_suppress(const std::string& s) {
  if (s == "supporting") return Suppress::Supporting;
  if (s == "all") return Suppress::All;
  throw ValidationError("unknown suppression mode '" + s + "' (supporting|all)");
}

vebi::UnitList supporting_units(const vebi::UnitList& units) {
  vebi::UnitList out;
  std::copy_if(units.begin(), units.end(), std::back_inserter(out),
               [](const vebi::RelevantUnit& u) { return u.weight > 0.0; });
  return out;
}

FidelityReport perturb_all_classes(const Tensor4& last_layer, std::span<const ClassId> labels,
                                   const vebi::RelevantUnits& units, const ClassifierHead& head,
                                   Suppress which) {
  std::map<ClassId, std::vector<std::size_t>> channels;
  for (const auto& [c, list] : units.per_class) {
    channels[c] = head_channels(which == Suppress::All ? list : supporting_units(list), head,
                                last_layer.shape().d);
  }
  Tensor4 perturbed = last_layer;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = channels.find(labels[i]);
    if (it != channels.end()) zero_channels(perturbed, i, it->second);
  }
  FidelityReport r;
  r.baseline_accuracy = classify(last_layer, labels, head).accuracy;
  r.accuracy = classify(perturbed, labels, head).accuracy;
  r.accuracy_drop = r.baseline_accuracy - r.accuracy;
  r.n_evaluated = labels.size();
  r.method = "vebi";
  r.note = std::string(kScopeNote) + "; " +
           (which == Suppress::All ? "all relevant units" : "positively weighted units");
  return r;
}

json FidelityReport::to_json() const {
  json j = {{"accuracy", accuracy},
            {"baseline_accuracy", baseline_accuracy},
            {"accuracy_drop", accuracy_drop},
            {"n_evaluated", n_evaluated},
            {"method", method},
            {"coreset", coreset},
            {"rho", rho}};
  if (cls) j["class"] = *cls;
  if (!note.empty()) j["note"] = note;
  return j;
}

std::string csv_header() { return "rho,method,coreset,accuracy\n"; }

std::string csv_row(const FidelityReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.4f,%s,%s,%.6f\n", r.rho, r.method.c_str(), r.coreset.c_str(),
                r.accuracy);
  return buf;
}

}  // namespace coreinterp::fidelity
