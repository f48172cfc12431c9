#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "coreinterp/activation_store.hpp"
#include "coreinterp/coreset.hpp"
#include "coreinterp/fidelity.hpp"
#include "coreinterp/interp_ice.hpp"
#include "coreinterp/interp_topic.hpp"
#include "coreinterp/interp_vebi.hpp"
#include "coreinterp/simeval.hpp"

namespace coreinterp::pipeline {

enum class Method { Ice, Topic, Vebi };

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct InterpretOptions {
  ice::NmfOptions nmf;
  ice::ProjectionOptions projection;
  topic::TopicOptions topic;
  vebi::VebiOptions vebi;
  fidelity::Suppress suppress = fidelity::Suppress::Supporting;

  nlohmann::json to_json() const;
  static InterpretOptions from_json(const nlohmann::json& j);
};

/// Relevant features produced by one interpretation method.
struct Features {
  Method method = Method::Ice;
  std::variant<ice::IceFeatures, topic::TopicModel, vebi::RelevantUnits> value;
  std::string tag;  // "full" or the coreset label
  nlohmann::json meta = nlohmann::json::object();  // artifact header, filled by load_features
};

/// Runs the interpretation method on the samples of `view` only.
Features interpret(const DatasetView& view, Method method, const InterpretOptions& opts);

void save_features(const Features& f, const std::filesystem::path& dir, const nlohmann::json& meta);
Features load_features(const std::filesystem::path& dir);

/// Interpretation maps of every class of `eval` (ICE and Topic only; VEBI maps
/// depend on the aligned unit pair and are built inside `similarity`).
using ClassMaps = std::map<ClassId, Tensor4>;
ClassMaps class_maps(const DatasetView& eval, const Features& f, const InterpretOptions& opts);

/// Per-class angular distance between maps from `full` and from `coreset`,
/// both evaluated on all samples of `eval`, and their class mean. For VEBI the
/// per-class value averages the shared layers. `full_maps` / `coreset_maps`
/// may carry precomputed class_maps of either side.
simeval::SimilarityReport similarity(const DatasetView& eval, const Features& full,
                                     const Features& coreset, const simeval::ShapeMetricConfig& cfg,
                                     const InterpretOptions& opts,
                                     const ClassMaps* full_maps = nullptr,
                                     const ClassMaps* coreset_maps = nullptr);

/// Classification accuracy through the frozen head using the features:
/// ICE maps (each sample through its own class's factorization), Topic
/// reconstructions, or VEBI suppression of each class's units. For ICE,
/// `maps` may carry precomputed class_maps(eval, f).
fidelity::FidelityReport evaluate_fidelity(const DatasetView& eval, const Features& f,
                                           const InterpretOptions& opts,
                                           const ClassMaps* maps = nullptr);

/// Stable 64-bit FNV-1a hash of a JSON document's compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace coreinterp::pipeline
