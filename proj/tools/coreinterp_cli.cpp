#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "coreinterp/errors.hpp"
#include "coreinterp/pipeline.hpp"
#include "coreinterp/viz.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace coreinterp;
using pipeline::Method;

namespace {

// Exit codes. 1 is what CLI11 parse failures map to.
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitComputation = 3;
constexpr int kExitInternal = 4;

const std::vector<double> kDefaultBudgets = {0.05, 0.10, 0.20, 0.30, 0.40, 0.50, 0.95};

// Command-line values that override the config file. Unset means "keep".
struct Overrides {
  std::string config;
  std::optional<std::string> dataset, output_dir, suppress;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> selectors, methods;
  std::vector<double> budgets;
  std::optional<std::size_t> knn_k, rank, topics, epochs;
  std::optional<double> gamma_forward, gamma_backward, mu_fraction, alpha;
  bool raw_scores = false;
};

struct RunConfig {
  json doc;  // resolved document, hashed into every artifact
  fs::path dataset;
  fs::path output_dir;
  std::uint64_t seed = 0;
  std::vector<SelectionMethod> selectors;
  std::vector<double> budgets;
  CoresetSpec coreset;  // method and rho are filled per combination
  std::vector<Method> methods;
  pipeline::InterpretOptions interp;
  simeval::ShapeMetricConfig shape;

  std::string hash() const { return pipeline::config_hash(doc); }
  json provenance() const { return {{"config_hash", hash()}, {"seed", seed}}; }
};

json default_document() {
  json interp = pipeline::InterpretOptions{}.to_json();
  interp["methods"] = {"ice"};
  return {{"dataset", nullptr},
          {"output_dir", "outputs"},
          {"seed", 0},
          {"coreset",
           {{"methods", {"random", "moderate", "dgpruning"}},
            {"budgets", kDefaultBudgets},
            {"knn_k", 5},
            {"gamma_forward", 1.0},
            {"gamma_backward", 1.0},
            {"normalize_scores", true}}},
          {"interpretation", interp},
          {"shape_metric", simeval::ShapeMetricConfig{}.to_json()}};
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << text;
}

RunConfig resolve(const Overrides& ov, const json& inputs = json::object()) {
  json doc = default_document();
  if (!ov.config.empty()) {
    const json file = read_json_file(ov.config);
    if (!file.is_object()) throw ValidationError(ov.config + ": config must be a JSON object");
    doc.merge_patch(file);
  }
  if (ov.dataset) doc["dataset"] = *ov.dataset;
  if (ov.output_dir) doc["output_dir"] = *ov.output_dir;
  if (ov.seed) doc["seed"] = *ov.seed;
  if (!ov.selectors.empty()) doc["coreset"]["methods"] = ov.selectors;
  if (!ov.budgets.empty()) doc["coreset"]["budgets"] = ov.budgets;
  if (ov.knn_k) doc["coreset"]["knn_k"] = *ov.knn_k;
  if (ov.gamma_forward) doc["coreset"]["gamma_forward"] = *ov.gamma_forward;
  if (ov.gamma_backward) doc["coreset"]["gamma_backward"] = *ov.gamma_backward;
  if (ov.raw_scores) doc["coreset"]["normalize_scores"] = false;
  if (!ov.methods.empty()) doc["interpretation"]["methods"] = ov.methods;
  if (ov.rank) doc["interpretation"]["ice"]["rank"] = *ov.rank;
  if (ov.topics) doc["interpretation"]["topic"]["m"] = *ov.topics;
  if (ov.epochs) doc["interpretation"]["topic"]["epochs"] = *ov.epochs;
  if (ov.mu_fraction) doc["interpretation"]["vebi"]["mu_fraction"] = *ov.mu_fraction;
  if (ov.suppress) doc["interpretation"]["vebi"]["suppress"] = *ov.suppress;
  if (ov.alpha) doc["shape_metric"]["alpha"] = *ov.alpha;

  RunConfig rc;
  try {
    // one seed drives every stochastic step
    rc.seed = doc.at("seed").get<std::uint64_t>();
    doc["interpretation"]["ice"]["seed"] = rc.seed;
    doc["interpretation"]["topic"]["seed"] = rc.seed;
    doc["shape_metric"]["seed"] = rc.seed;
    if (!inputs.empty()) doc["inputs"] = inputs;

    if (doc["dataset"].is_string()) rc.dataset = doc["dataset"].get<std::string>();
    rc.output_dir = doc.at("output_dir").get<std::string>();
    const auto& cs = doc.at("coreset");
    for (const auto& s : cs.at("methods")) rc.selectors.push_back(parse_selection_method(s.get<std::string>()));
    rc.budgets = cs.at("budgets").get<std::vector<double>>();
    rc.coreset.seed = rc.seed;
    rc.coreset.knn_k = cs.at("knn_k").get<std::size_t>();
    rc.coreset.gamma_forward = cs.at("gamma_forward").get<double>();
    rc.coreset.gamma_backward = cs.at("gamma_backward").get<double>();
    rc.coreset.normalize_scores = cs.at("normalize_scores").get<bool>();
    for (const auto& m : doc.at("interpretation").at("methods")) {
      rc.methods.push_back(pipeline::parse_method(m.get<std::string>()));
    }
    rc.interp = pipeline::InterpretOptions::from_json(doc["interpretation"]);
    rc.shape = simeval::ShapeMetricConfig::from_json(doc.at("shape_metric"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed configuration: ") + e.what());
  }
  for (double b : rc.budgets) {
    if (!(b > 0.0 && b < 1.0)) throw ValidationError("budget " + std::to_string(b) + " outside (0, 1)");
  }
  if (rc.selectors.empty() || rc.budgets.empty() || rc.methods.empty()) {
    throw ValidationError("configuration needs at least one selector, budget and method");
  }
  rc.doc = std::move(doc);
  return rc;
}

std::shared_ptr<const Dataset> load_dataset(const RunConfig& rc) {
  if (rc.dataset.empty()) throw ValidationError("no dataset given (--dataset or \"dataset\" in the config)");
  const fs::path p = fs::is_directory(rc.dataset) ? rc.dataset / "manifest.json" : rc.dataset;
  return Dataset::load(p);
}

std::string rho_label(double rho) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", rho);
  return buf;
}

// outputs/{model}/coresets/{method}_rho{rho}.json
fs::path coreset_path(const RunConfig& rc, const std::string& model, SelectionMethod m, double rho) {
  return rc.output_dir / model / "coresets" / (to_string(m) + "_rho" + rho_label(rho) + ".json");
}

// outputs/{model}/{method}/{coreset}/{rho}/
fs::path run_dir(const RunConfig& rc, const std::string& model, Method m, const std::string& tag, double rho) {
  return rc.output_dir / model / pipeline::to_string(m) / tag / rho_label(rho);
}

fs::path write_coreset(const RunConfig& rc, const Dataset& ds, SelectionMethod sel, double rho,
                       const fs::path& dir) {
  CoresetSpec spec = rc.coreset;
  spec.method = sel;
  spec.rho = rho;
  const Coreset cs = select_coreset(ds, spec);
  json j = cs.to_json(ds.manifest());
  j.update(rc.provenance());
  const fs::path out = dir / (to_string(sel) + "_rho" + rho_label(rho) + ".json");
  write_json(out, j);
  return out;
}

// ---------------------------------------------------------------------------

int cmd_select(const RunConfig& rc, const std::string& out_dir) {
  const auto ds = load_dataset(rc);
  const std::string& model = ds->manifest().source_model;
  const fs::path dir = out_dir.empty() ? coreset_path(rc, model, rc.selectors[0], 0.1).parent_path() : fs::path(out_dir);
  for (auto sel : rc.selectors) {
    for (double rho : rc.budgets) std::cout << write_coreset(rc, *ds, sel, rho, dir).string() << "\n";
  }
  return 0;
}

struct Interpreted {
  pipeline::Features features;
  fs::path dir;
  double rho = 1.0;
};

Interpreted interpret_one(const RunConfig& rc, std::shared_ptr<const Dataset> ds, Method m,
                          const std::string& coreset_file, const std::string& out_dir,
                          const std::string& dir_suffix = {}) {
  const std::string& model = ds->manifest().source_model;
  Interpreted res;
  DatasetView view = DatasetView::full(ds);
  std::string tag = "full";
  json meta = rc.provenance();
  if (!coreset_file.empty()) {
    const json cj = Coreset::read_json(coreset_file);
    view = apply_coreset(cj, ds);
    try {
      tag = cj.at("spec").at("method").get<std::string>();
      res.rho = cj.at("spec").at("rho").get<double>();
    } catch (const json::exception& e) {
      throw ValidationError(coreset_file + ": " + e.what());
    }
    meta["coreset_file"] = coreset_file;
    meta["coreset_source_model"] = cj.value("source_model", std::string{});
  }
  meta["model"] = model;
  meta["rho"] = res.rho;
  meta["n_samples"] = view.size();
  res.features = pipeline::interpret(view, m, rc.interp);
  res.features.tag = tag;
  res.dir = out_dir.empty() ? run_dir(rc, model, m, tag + dir_suffix, res.rho) : fs::path(out_dir);
  pipeline::save_features(res.features, res.dir, meta);
  res.features.meta = meta;
  return res;
}

int cmd_interpret(const RunConfig& rc, const std::string& coreset_file, const std::string& out_dir) {
  const auto ds = load_dataset(rc);
  if (!out_dir.empty() && rc.methods.size() > 1) {
    throw ValidationError("--out-dir takes a single interpretation method");
  }
  for (auto m : rc.methods) {
    std::cout << interpret_one(rc, ds, m, coreset_file, out_dir).dir.string() << "\n";
  }
  return 0;
}

struct Evaluation {
  simeval::SimilarityReport similarity;
  fidelity::FidelityReport fidelity;
};

Evaluation evaluate_pair(const RunConfig& rc, const DatasetView& eval, const pipeline::Features& full,
                         const pipeline::Features& core, const pipeline::ClassMaps* full_maps) {
  Evaluation ev;
  const double rho = core.meta.value("rho", 1.0);
  pipeline::ClassMaps core_maps;
  const bool mapped = core.method != Method::Vebi;
  if (mapped) core_maps = pipeline::class_maps(eval, core, rc.interp);
  ev.similarity = pipeline::similarity(eval, full, core, rc.shape, rc.interp, full_maps,
                                       mapped ? &core_maps : nullptr);
  ev.similarity.budget_rho = rho;
  ev.fidelity = pipeline::evaluate_fidelity(eval, core, rc.interp, mapped ? &core_maps : nullptr);
  ev.fidelity.rho = rho;
  return ev;
}

void write_evaluation(const RunConfig& rc, const Evaluation& ev, const fs::path& dir) {
  json sim = ev.similarity.to_json();
  sim.update(rc.provenance());
  write_json(dir / "similarity.json", sim);
  json fid = ev.fidelity.to_json();
  fid.update(rc.provenance());
  write_json(dir / "fidelity.json", fid);
  write_text(dir / "fidelity.csv", fidelity::csv_header() + fidelity::csv_row(ev.fidelity));
}

int cmd_evaluate(const RunConfig& rc, const std::string& full_dir, const std::string& features_dir,
                 const std::string& out_dir) {
  const auto ds = load_dataset(rc);
  const auto eval = DatasetView::full(ds);
  const auto full = pipeline::load_features(full_dir);
  const auto core = pipeline::load_features(features_dir);
  if (full.tag != "full") {
    std::cerr << "warning: reference features are tagged '" << full.tag << "', not 'full'\n";
  }
  pipeline::ClassMaps full_maps;
  if (full.method != Method::Vebi) full_maps = pipeline::class_maps(eval, full, rc.interp);
  const Evaluation ev = evaluate_pair(rc, eval, full, core, full.method != Method::Vebi ? &full_maps : nullptr);
  const fs::path dir = out_dir.empty() ? fs::path(features_dir) : fs::path(out_dir);
  write_evaluation(rc, ev, dir);
  std::printf("phi=%.6f accuracy=%.4f baseline=%.4f skipped=%zu -> %s\n", ev.similarity.phi_mean,
              ev.fidelity.accuracy, ev.fidelity.baseline_accuracy, ev.similarity.skipped.size(),
              dir.string().c_str());
  return 0;
}

int cmd_robustness(const RunConfig& rc, std::vector<std::string> files, const std::string& root,
                   const std::string& out_dir) {
  if (files.empty()) {
    const fs::path base = root.empty() ? rc.output_dir : fs::path(root);
    if (!fs::is_directory(base)) throw ValidationError("no such directory " + base.string());
    for (const auto& e : fs::recursive_directory_iterator(base)) {
      if (e.is_regular_file() && e.path().filename() == "similarity.json") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) throw ValidationError("no similarity reports found");
  std::vector<simeval::SimilarityReport> reports;
  for (const auto& f : files) reports.push_back(simeval::SimilarityReport::from_json(read_json_file(f)));
  const auto summary = simeval::robustness_summary(reports);
  const fs::path dir = out_dir.empty() ? (root.empty() ? rc.output_dir : fs::path(root)) : fs::path(out_dir);
  json j = summary.to_json();
  j.update(rc.provenance());
  write_json(dir / "robustness.json", j);
  write_text(dir / "robustness.txt", summary.to_table());
  std::cout << summary.to_table();
  return 0;
}

Tensor4 sample_maps(const Dataset& ds, const pipeline::Features& f, const DatasetView& view,
                    std::size_t row, const RunConfig& rc) {
  const std::vector<std::size_t> one = {row};
  const ClassId label = view.labels()[row];
  switch (f.method) {
    case Method::Ice: {
      const auto& feats = std::get<ice::IceFeatures>(f.value);
      auto it = feats.per_class.find(label);
      if (it == feats.per_class.end()) throw ValidationError("no factorization for class " + std::to_string(label));
      return ice::ice_maps(view.layer(feats.layer_id).gather(one), it->second, rc.interp.projection);
    }
    case Method::Topic:
      return topic::topic_maps(view.layer(ds.require_head().input_layer_id).gather(one),
                               std::get<topic::TopicModel>(f.value));
    case Method::Vebi: {
      const auto& units = std::get<vebi::RelevantUnits>(f.value);
      const std::string& layer = ds.require_head().input_layer_id;
      const Tensor4 acts = view.layer(layer).gather(one);
      auto it = units.per_class.find(label);
      const auto list = it == units.per_class.end() ? vebi::UnitList{} : vebi::units_in_layer(it->second, layer);
      if (list.empty()) return Tensor4({1, acts.shape().h, acts.shape().w, 1});
      return vebi::vebi_maps(acts, list, layer);
    }
  }
  throw ValidationError("unknown method");
}

int cmd_visualize(const RunConfig& rc, const std::vector<std::string>& feature_dirs,
                  std::vector<std::string> sample_ids, std::size_t k, std::size_t size,
                  const std::string& images, const std::string& out) {
  const auto ds = load_dataset(rc);
  const auto view = DatasetView::full(ds);
  const auto& m = ds->manifest();
  if (sample_ids.empty()) {
    const auto parts = partition_by_class(m);
    for (const auto& [c, rows] : parts) {
      if (!rows.empty() && sample_ids.size() < 4) sample_ids.push_back(m.sample_ids[rows.front()]);
    }
  }
  std::vector<std::size_t> rows;
  for (const auto& id : sample_ids) {
    auto it = std::find(m.sample_ids.begin(), m.sample_ids.end(), id);
    if (it == m.sample_ids.end()) throw ValidationError("unknown sample id " + id);
    rows.push_back(static_cast<std::size_t>(it - m.sample_ids.begin()));
  }
  std::vector<viz::Image> inputs;
  for (std::size_t r : rows) {
    if (images.empty()) {
      inputs.push_back(viz::test_card(size, size, r));
    } else {
      inputs.push_back(viz::read_png(fs::path(images) / (m.sample_ids[r] + ".png")));
    }
  }
  std::vector<std::vector<viz::Image>> tiles = {inputs};
  json row_meta = json::array();
  for (const auto& dir : feature_dirs) {
    const auto f = pipeline::load_features(dir);
    std::vector<viz::Image> row;
    for (std::size_t s = 0; s < rows.size(); ++s) {
      const Tensor4 maps = sample_maps(*ds, f, view, rows[s], rc);
      const auto heat = viz::compose_heatmap(maps, 0, std::min(k, maps.shape().d), inputs[s].height, inputs[s].width);
      row.push_back(viz::overlay(heat, inputs[s]));
    }
    tiles.push_back(std::move(row));
    row_meta.push_back({{"features", dir}, {"method", pipeline::to_string(f.method)}, {"tag", f.tag},
                        {"rho", f.meta.value("rho", 1.0)}});
  }
  const fs::path out_path = out.empty() ? rc.output_dir / m.source_model / "panel.png" : fs::path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  viz::write_png(out_path, viz::compose_panel(tiles));
  json meta = rc.provenance();
  meta.update({{"rows", row_meta},
               {"samples", sample_ids},
               {"k", k},
               {"colormap", "inferno"},
               {"blend", viz::kBlend},
               {"normalization", "min-max"},
               {"resize", "bilinear"}});
  fs::path meta_path = out_path;
  meta_path.replace_extension(".json");
  write_json(meta_path, meta);
  std::cout << out_path.string() << "\n";
  return 0;
}

int cmd_transfer(const RunConfig& rc, const std::string& coreset_file, const std::string& full_dir,
                 const std::string& out_dir) {
  const auto ds = load_dataset(rc);
  const json cj = Coreset::read_json(coreset_file);
  const std::string source = cj.value("source_model", std::string{});
  const std::string suffix = source == ds->manifest().source_model ? "" : "-from-" + source;
  if (!out_dir.empty() && rc.methods.size() > 1) {
    throw ValidationError("--out-dir takes a single interpretation method");
  }
  for (auto m : rc.methods) {
    const Interpreted res = interpret_one(rc, ds, m, coreset_file, out_dir, suffix);
    std::cout << res.dir.string() << "\n";
    if (!full_dir.empty()) {
      const auto eval = DatasetView::full(ds);
      const auto full = pipeline::load_features(full_dir);
      const Evaluation ev = evaluate_pair(rc, eval, full, res.features, nullptr);
      write_evaluation(rc, ev, res.dir);
      std::printf("phi=%.6f accuracy=%.4f\n", ev.similarity.phi_mean, ev.fidelity.accuracy);
    }
  }
  return 0;
}

// Whole grid: coresets, full-data reference, every (method, selector, budget)
// cell with its reports, then the robustness table and accuracy CSV.
int cmd_run(const RunConfig& rc) {
  const auto ds = load_dataset(rc);
  const std::string& model = ds->manifest().source_model;
  const auto eval = DatasetView::full(ds);
  const fs::path coreset_dir = rc.output_dir / model / "coresets";
  std::map<std::pair<SelectionMethod, double>, fs::path> coresets;
  for (auto sel : rc.selectors) {
    for (double rho : rc.budgets) coresets[{sel, rho}] = write_coreset(rc, *ds, sel, rho, coreset_dir);
  }
  std::vector<simeval::SimilarityReport> reports;
  std::string csv = fidelity::csv_header();
  for (auto m : rc.methods) {
    const Interpreted full = interpret_one(rc, ds, m, {}, {});
    pipeline::ClassMaps full_maps;
    const bool mapped = m != Method::Vebi;
    if (mapped) full_maps = pipeline::class_maps(eval, full.features, rc.interp);
    auto ref = pipeline::evaluate_fidelity(eval, full.features, rc.interp, mapped ? &full_maps : nullptr);
    ref.rho = 1.0;
    json ref_json = ref.to_json();
    ref_json.update(rc.provenance());
    write_json(full.dir / "fidelity.json", ref_json);
    csv += fidelity::csv_row(ref);
    for (auto sel : rc.selectors) {
      for (double rho : rc.budgets) {
        const Interpreted cell = interpret_one(rc, ds, m, coresets.at({sel, rho}).string(), {});
        const Evaluation ev = evaluate_pair(rc, eval, full.features, cell.features, mapped ? &full_maps : nullptr);
        write_evaluation(rc, ev, cell.dir);
        reports.push_back(ev.similarity);
        csv += fidelity::csv_row(ev.fidelity);
        std::fprintf(stderr, "%s %s rho=%s phi=%.4f acc=%.4f\n", pipeline::to_string(m).c_str(),
                     to_string(sel).c_str(), rho_label(rho).c_str(), ev.similarity.phi_mean,
                     ev.fidelity.accuracy);
      }
    }
  }
  const fs::path base = rc.output_dir / model;
  write_text(base / "fidelity.csv", csv);
  try {
    const auto summary = simeval::robustness_summary(reports);
    json j = summary.to_json();
    j.update(rc.provenance());
    write_json(base / "robustness.json", j);
    write_text(base / "robustness.txt", summary.to_table());
    std::cout << summary.to_table();
  } catch (const ValidationError& e) {
    std::cerr << "robustness skipped: " << e.what() << "\n";
  }
  json cfg = rc.doc;
  cfg["config_hash"] = rc.hash();
  write_json(base / "run_config.json", cfg);
  return 0;
}

void add_config_options(CLI::App* sub, Overrides& ov) {
  sub->add_option("-c,--config", ov.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("-d,--dataset", ov.dataset, "dataset manifest (or its directory)");
  sub->add_option("-o,--output-root", ov.output_dir, "root of the outputs/ tree");
  sub->add_option("--seed", ov.seed, "seed for every stochastic step");
  sub->add_option("--selectors", ov.selectors, "coreset methods: random,moderate,dgpruning")->delimiter(',');
  sub->add_option("--budgets", ov.budgets, "budget fractions in (0, 1)")->delimiter(',');
  sub->add_option("--knn-k", ov.knn_k, "DGPruning neighbours per node");
  sub->add_option("--gamma-forward", ov.gamma_forward, "DGPruning forward message weight");
  sub->add_option("--gamma-backward", ov.gamma_backward, "DGPruning backward suppression weight");
  sub->add_flag("--raw-scores", ov.raw_scores, "do not min-max normalize DGPruning scores");
  sub->add_option("-m,--methods", ov.methods, "interpretation methods: ice,topic,vebi")->delimiter(',');
  sub->add_option("--rank", ov.rank, "ICE rank");
  sub->add_option("--topics", ov.topics, "number of topics");
  sub->add_option("--epochs", ov.epochs, "topic training epochs");
  sub->add_option("--mu-fraction", ov.mu_fraction, "VEBI mu as a fraction of |Psi^T y|_inf");
  sub->add_option("--suppress", ov.suppress, "VEBI fidelity suppression: supporting|all");
  sub->add_option("--alpha", ov.alpha, "shape metric whitening interpolation");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coreset-based interpretation of CNN activations"};
  app.require_subcommand(1);
  Overrides ov;
  int rc_code = 0;

  // synth takes its own flags; it predates any run configuration
  SyntheticConfig synth;
  std::string synth_out;
  std::optional<std::uint64_t> synth_model_seed;
  auto* s = app.add_subcommand("synth", "write a synthetic activation dataset");
  s->add_option("out", synth_out, "output directory")->required();
  s->add_option("--classes", synth.classes);
  s->add_option("--per-class", synth.per_class);
  s->add_option("--height", synth.height);
  s->add_option("--width", synth.width);
  s->add_option("--depth", synth.depth);
  s->add_option("--layers", synth.layers);
  s->add_option("--spread", synth.spread);
  s->add_option("--seed", synth.seed, "per-sample draws");
  s->add_option("--model-seed", synth_model_seed, "class means and mixing (the \"model\")");
  s->add_flag("--single-active", synth.single_active_channel);
  s->add_option("--model-name", synth.source_model);
  s->callback([&] {
    synth.model_seed = synth_model_seed;
    std::cout << make_synthetic(synth, synth_out).string() << "\n";
  });

  std::string out_dir, coreset_file, full_dir, features_dir, root, out_png, images;
  std::vector<std::string> files, feature_dirs, samples;
  std::size_t k = 5, size = 128;

  auto* sel = app.add_subcommand("select", "select coresets for every (selector, budget)");
  add_config_options(sel, ov);
  sel->add_option("--out-dir", out_dir, "directory for the coreset files");
  sel->callback([&] { rc_code = cmd_select(resolve(ov), out_dir); });

  auto* in = app.add_subcommand("interpret", "relevant features on the full data or a coreset");
  add_config_options(in, ov);
  in->add_option("--coreset", coreset_file, "coreset JSON; omitted means the full data")->check(CLI::ExistingFile);
  in->add_option("--out-dir", out_dir, "feature directory (default outputs/{model}/{method}/{coreset}/{rho})");
  in->callback([&] {
    rc_code = cmd_interpret(resolve(ov, {{"coreset", coreset_file.empty() ? json(nullptr) : json(coreset_file)}}),
                            coreset_file, out_dir);
  });

  auto* ev = app.add_subcommand("evaluate", "similarity to the full-data features, and fidelity");
  add_config_options(ev, ov);
  ev->add_option("--full", full_dir, "full-data feature directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--features", features_dir, "coreset feature directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out-dir", out_dir, "report directory (default: the coreset feature directory)");
  ev->callback([&] {
    rc_code = cmd_evaluate(resolve(ov, {{"full", full_dir}, {"features", features_dir}}), full_dir,
                           features_dir, out_dir);
  });

  auto* rb = app.add_subcommand("robustness", "mean and std of phi over the 10-50% budgets");
  add_config_options(rb, ov);
  rb->add_option("reports", files, "similarity.json files (default: search --root)");
  rb->add_option("--root", root, "directory searched for similarity.json");
  rb->add_option("--out-dir", out_dir, "where robustness.json/.txt go (default: the root)");
  rb->callback([&] { rc_code = cmd_robustness(resolve(ov), files, root, out_dir); });

  auto* vz = app.add_subcommand("visualize", "heatmap panel: one row per feature directory");
  add_config_options(vz, ov);
  vz->add_option("--features", feature_dirs, "feature directories, one panel row each")->required()->delimiter(',');
  vz->add_option("--samples", samples, "sample ids (default: first sample of four classes)")->delimiter(',');
  vz->add_option("-k", k, "top channels combined per heatmap");
  vz->add_option("--size", size, "tile size when no images are given");
  vz->add_option("--images", images, "directory of {sample_id}.png inputs");
  vz->add_option("--out", out_png, "panel PNG path");
  vz->callback([&] { rc_code = cmd_visualize(resolve(ov), feature_dirs, samples, k, size, images, out_png); });

  auto* tr = app.add_subcommand("transfer", "interpret one model's data with another model's coreset");
  add_config_options(tr, ov);
  tr->add_option("--coreset", coreset_file, "coreset JSON selected on the source model")->required()->check(CLI::ExistingFile);
  tr->add_option("--full", full_dir, "full-data features of the target, to also evaluate");
  tr->add_option("--out-dir", out_dir, "feature directory");
  tr->callback([&] {
    rc_code = cmd_transfer(resolve(ov, {{"coreset", coreset_file}}), coreset_file, full_dir, out_dir);
  });

  auto* rn = app.add_subcommand("run", "the whole grid: select, interpret, evaluate, robustness");
  add_config_options(rn, ov);
  rn->callback([&] { rc_code = cmd_run(resolve(ov)); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ComputationError& e) {
    std::cerr << "computation failed: " << e.what() << "\n";
    return kExitComputation;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return rc_code;
}
