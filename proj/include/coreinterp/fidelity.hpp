#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coreinterp/activation_store.hpp"
#include "coreinterp/interp_vebi.hpp"

namespace coreinterp::fidelity {

struct Classification {
  std::vector<ClassId> predictions;
  double accuracy = 0.0;
};

/// argmax(head.weights * GAP(maps) + head.bias) per sample, ties to the lower class.
Classification classify(const Tensor4& maps, std::span<const ClassId> labels,
                        const ClassifierHead& head);

struct FidelityReport {
  double accuracy = 0.0;
  double baseline_accuracy = 0.0;
  double accuracy_drop = 0.0;  // baseline - accuracy
  std::size_t n_evaluated = 0;
  std::string method;
  std::string coreset;
  double rho = 1.0;
  std::optional<ClassId> cls;  // set for single-class perturbation reports
  std::string note;

  nlohmann::json to_json() const;
};

/// Zeroes the units of `units` that live in the head's input layer on the
/// samples of class `cls`, then classifies those samples. Units in other
/// layers are ignored (the head only sees its input layer).
FidelityReport perturb_and_classify(const Tensor4& last_layer, std::span<const ClassId> labels,
                                    ClassId cls, const vebi::UnitList& units,
                                    const ClassifierHead& head);

/// Which of a class's relevant units are zeroed. Negatively weighted units
/// are evidence for rival classes; zeroing them tends to help the class.
enum class Suppress { Supporting, All };

std::string to_string(Suppress s);
Suppress parse_suppress(const std::string& s);

/// Units with positive weight, order preserved.
vebi::UnitList supporting_units(const vebi::UnitList& units);

/// Every sample is perturbed with the units of its own class; accuracy over all samples.
FidelityReport perturb_all_classes(const Tensor4& last_layer, std::span<const ClassId> labels,
                                   const vebi::RelevantUnits& units, const ClassifierHead& head,
                                   Suppress which = Suppress::Supporting);

/// "rho,method,coreset,accuracy" rows for accuracy-vs-budget plots.
std::string csv_header();
std::string csv_row(const FidelityReport& r);

}  // namespace coreinterp::fidelity
