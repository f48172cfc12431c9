#include "coreinterp/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "coreinterp/errors.hpp"
#include "coreinterp/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coreinterp::pipeline {

std::string to_string(Method m) {
  switch (m) {
    case Method::Ice: return "ice";
    case Method::Topic: return "topic";
    case Method::Vebi: return "vebi";
  }
  return "unknown";
}

Method parse_method(const std::string& s) {
  if (s == "ice") return Method::Ice;
  if (s == "topic") return Method::Topic;
  if (s == "vebi") return Method::Vebi;
  throw ValidationError("unknown interpretation method '" + s + "' (ice|topic|vebi)");
}

json InterpretOptions::to_json() const {
  json j;
  j["ice"] = {{"rank", nmf.rank},
              {"max_iter", nmf.max_iter},
              {"tol", nmf.tol},
              {"seed", nmf.seed},
              {"projection_max_iter", projection.max_iter},
              {"projection_tol", projection.tol}};
  j["topic"] = {{"m", topic.m},
                {"l", topic.l},
                {"epochs", topic.epochs},
                {"lr", topic.lr},
                {"batch_size", topic.batch_size},
                {"seed", topic.seed},
                {"init", topic.init == topic::TopicInit::Identity ? "identity" : "orthonormal"},
                {"init_noise", topic.init_noise}};
  j["vebi"] = {{"mu_fraction", vebi.mu_fraction},
               {"mu", vebi.mu_absolute ? json(*vebi.mu_absolute) : json(nullptr)},
               {"tol", vebi.lasso.tol},
               {"max_sweeps", vebi.lasso.max_sweeps},
               {"suppress", fidelity::to_string(suppress)}};
  return j;
}

InterpretOptions InterpretOptions::from_json(const json& j) {
  InterpretOptions o;
  try {
    if (j.contains("ice")) {
      const auto& i = j["ice"];
      o.nmf.rank = i.value("rank", o.nmf.rank);
      o.nmf.max_iter = i.value("max_iter", o.nmf.max_iter);
      o.nmf.tol = i.value("tol", o.nmf.tol);
      o.nmf.seed = i.value("seed", o.nmf.seed);
      o.projection.max_iter = i.value("projection_max_iter", o.projection.max_iter);
      o.projection.tol = i.value("projection_tol", o.projection.tol);
    }
    if (j.contains("topic")) {
      const auto& t = j["topic"];
      o.topic.m = t.value("m", o.topic.m);
      o.topic.l = t.value("l", o.topic.l);
      o.topic.epochs = t.value("epochs", o.topic.epochs);
      o.topic.lr = t.value("lr", o.topic.lr);
      o.topic.batch_size = t.value("batch_size", o.topic.batch_size);
      o.topic.seed = t.value("seed", o.topic.seed);
      const std::string init = t.value("init", std::string("orthonormal"));
      if (init != "identity" && init != "orthonormal") {
        throw ValidationError("topic init must be 'orthonormal' or 'identity', got '" + init + "'");
      }
      o.topic.init = init == "identity" ? topic::TopicInit::Identity : topic::TopicInit::Orthonormal;
      o.topic.init_noise = t.value("init_noise", o.topic.init_noise);
    }
    if (j.contains("vebi")) {
      const auto& v = j["vebi"];
      o.vebi.mu_fraction = v.value("mu_fraction", o.vebi.mu_fraction);
      if (v.contains("mu") && v["mu"].is_number()) o.vebi.mu_absolute = v["mu"].get<double>();
      o.vebi.lasso.tol = v.value("tol", o.vebi.lasso.tol);
      o.vebi.lasso.max_sweeps = v.value("max_sweeps", o.vebi.lasso.max_sweeps);
      if (v.contains("suppress")) o.suppress = fidelity::parse_suppress(v["suppress"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed interpretation options: ") + e.what());
  }
  return o;
}

Features interpret(const DatasetView& view, Method method, const InterpretOptions& opts) {
  if (view.size() == 0) throw ValidationError("cannot interpret an empty view");
  Features f;
  f.method = method;
  const Dataset& ds = view.base();
  switch (method) {
    case Method::Ice:
      f.value = ice::fit_ice(view, ds.last_layer(), opts.nmf);
      break;
    case Method::Topic:
      f.value = topic::fit_topics(view, ds.require_head(), opts.topic);
      break;
    case Method::Vebi:
      f.value = vebi::identify_units(view, opts.vebi);
      break;
  }
  return f;
}

void save_features(const Features& f, const fs::path& dir, const json& meta) {
  fs::create_directories(dir);
  json extra = meta;
  extra["tag"] = f.tag;
  switch (f.method) {
    case Method::Ice: ice::save(std::get<ice::IceFeatures>(f.value), dir, extra); break;
    case Method::Topic: topic::save(std::get<topic::TopicModel>(f.value), dir, extra); break;
    case Method::Vebi: vebi::save(std::get<vebi::RelevantUnits>(f.value), dir / "vebi.json", extra); break;
  }
}

Features load_features(const fs::path& dir) {
  Features f;
  auto read_meta = [](const fs::path& file) {
    std::ifstream in(file);
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError(file.string() + ": " + e.what());
    }
  };
  fs::path header;
  if (fs::exists(dir / "ice.json")) {
    f.method = Method::Ice;
    f.value = ice::load(dir);
    header = dir / "ice.json";
  } else if (fs::exists(dir / "topic.json")) {
    f.method = Method::Topic;
    f.value = topic::load(dir);
    header = dir / "topic.json";
  } else if (fs::exists(dir / "vebi.json")) {
    f.method = Method::Vebi;
    f.value = vebi::load(dir / "vebi.json");
    header = dir / "vebi.json";
  } else {
    throw ValidationError("no relevant-feature artifact (ice.json, topic.json, vebi.json) in " +
                          dir.string());
  }
  f.meta = read_meta(header);
  f.tag = f.meta.value("tag", std::string{});
  return f;
}

ClassMaps class_maps(const DatasetView& eval, const Features& f, const InterpretOptions& opts) {
  const Dataset& ds = eval.base();
  const Tensor4 acts = eval.layer(ds.last_layer());
  const auto parts = partition_by_class(eval.labels(), ds.num_classes());
  std::vector<std::pair<ClassId, std::vector<std::size_t>>> work;
  for (const auto& [c, rows] : parts) {
    if (!rows.empty()) work.emplace_back(c, rows);
  }
  std::vector<Tensor4> maps(work.size());
  parallel_for(work.size(), [&](std::size_t k) {
    const Tensor4 class_acts = acts.gather(work[k].second);
    if (f.method == Method::Ice) {
      const auto& feats = std::get<ice::IceFeatures>(f.value);
      auto it = feats.per_class.find(work[k].first);
      if (it == feats.per_class.end()) {
        throw ValidationError("ICE features have no factorization for class " +
                              std::to_string(work[k].first));
      }
      maps[k] = ice::ice_maps(class_acts, it->second, opts.projection);
    } else if (f.method == Method::Topic) {
      maps[k] = topic::topic_maps(class_acts, std::get<topic::TopicModel>(f.value));
    } else {
      throw ValidationError("VEBI maps are built per aligned unit pair");
    }
  });
  ClassMaps out;
  for (std::size_t k = 0; k < work.size(); ++k) out[work[k].first] = std::move(maps[k]);
  return out;
}

namespace {

simeval::SimilarityReport vebi_similarity(const DatasetView& eval, const vebi::RelevantUnits& full,
                                          const vebi::RelevantUnits& coreset,
                                          const simeval::ShapeMetricConfig& cfg) {
  const Dataset& ds = eval.base();
  std::map<std::string, Tensor4> layers;
  for (const auto& id : ds.manifest().layer_ids) layers.emplace(id, eval.layer(id));
  const auto parts = partition_by_class(eval.labels(), ds.num_classes());

  std::map<ClassId, double> distances;
  std::map<ClassId, std::string> skipped;
  for (const auto& [c, rows] : parts) {
    if (rows.empty()) continue;
    auto fa = full.per_class.find(c);
    auto fb = coreset.per_class.find(c);
    if (fa == full.per_class.end() || fb == coreset.per_class.end() || fa->second.empty() ||
        fb->second.empty()) {
      skipped[c] = "no relevant units on one side";
      continue;
    }
    auto aligned = vebi::align_unit_sets(fa->second, fb->second);
    if (!aligned) {
      skipped[c] = "no layer with relevant units on both sides";
      continue;
    }
    double sum = 0.0;
    std::size_t used = 0;
    std::string reason;
    for (const auto& layer : aligned->shared_layers) {
      const Tensor4 class_acts = layers.at(layer).gather(rows);
      try {
        sum += simeval::angular_shape_distance(
            simeval::flatten_maps(vebi::vebi_maps(class_acts, aligned->a, layer)),
            simeval::flatten_maps(vebi::vebi_maps(class_acts, aligned->b, layer)), cfg);
        ++used;
      } catch (const ComputationError& e) {
        reason = e.what();
      }
    }
    if (used == 0) {
      skipped[c] = reason;
    } else {
      distances[c] = sum / static_cast<double>(used);
    }
  }
  return simeval::phi_from_distances(distances, std::move(skipped));
}

}  // namespace

simeval::SimilarityReport similarity(const DatasetView& eval, const Features& full,
                                     const Features& coreset, const simeval::ShapeMetricConfig& cfg,
                                     const InterpretOptions& opts, const ClassMaps* full_maps,
                                     const ClassMaps* coreset_maps) {
  if (full.method != coreset.method) {
    throw ValidationError("cannot compare features of different interpretation methods");
  }
  simeval::SimilarityReport report;
  if (full.method == Method::Vebi) {
    report = vebi_similarity(eval, std::get<vebi::RelevantUnits>(full.value),
                             std::get<vebi::RelevantUnits>(coreset.value), cfg);
  } else {
    ClassMaps own_full;
    if (full_maps == nullptr) {
      own_full = class_maps(eval, full, opts);
      full_maps = &own_full;
    }
    ClassMaps own_core;
    if (coreset_maps == nullptr) {
      own_core = class_maps(eval, coreset, opts);
      coreset_maps = &own_core;
    }
    std::vector<simeval::MapPair> pairs;
    for (const auto& [c, z] : *coreset_maps) {
      auto it = full_maps->find(c);
      if (it == full_maps->end()) throw ValidationError("full-data maps missing class " + std::to_string(c));
      pairs.push_back({c, it->second, z});
    }
    report = simeval::phi_average(pairs, cfg);
  }
  report.interpretation = to_string(full.method);
  report.coreset = coreset.tag;
  report.model = eval.base().manifest().source_model;
  report.extra["shape_metric"] = cfg.to_json();
  return report;
}

fidelity::FidelityReport evaluate_fidelity(const DatasetView& eval, const Features& f,
                                           const InterpretOptions& opts, const ClassMaps* maps_in) {
  const Dataset& ds = eval.base();
  const ClassifierHead& head = ds.require_head();
  const auto labels = eval.labels();
  fidelity::FidelityReport r;
  if (f.method == Method::Vebi) {
    r = fidelity::perturb_all_classes(eval.layer(head.input_layer_id), labels,
                                      std::get<vebi::RelevantUnits>(f.value), head, opts.suppress);
  } else {
    const Tensor4 acts = eval.layer(head.input_layer_id);
    Tensor4 maps;
    if (f.method == Method::Ice) {
      // Each sample goes through the factorization of its own class.
      ClassMaps own;
      if (maps_in == nullptr) {
        own = class_maps(eval, f, opts);
        maps_in = &own;
      }
      const ClassMaps& per_class = *maps_in;
      maps = Tensor4(acts.shape());
      std::map<ClassId, std::size_t> cursor;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const Tensor4& z = per_class.at(labels[i]);
        auto src = z.sample(cursor[labels[i]]++);
        std::copy(src.begin(), src.end(), maps.sample(i).begin());
      }
    } else {
      const auto& model = std::get<topic::TopicModel>(f.value);
      maps = topic::topic_reconstruct(topic::topic_maps(acts, model), model);
    }
    r.accuracy = fidelity::classify(maps, labels, head).accuracy;
    r.baseline_accuracy = fidelity::classify(acts, labels, head).accuracy;
    r.accuracy_drop = r.baseline_accuracy - r.accuracy;
    r.n_evaluated = labels.size();
  }
  r.method = to_string(f.method);
  r.coreset = f.tag;
  return r;
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace coreinterp::pipeline
