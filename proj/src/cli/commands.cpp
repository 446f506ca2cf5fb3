#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "lesioncal/cli.hpp"
#include "lesioncal/csv.hpp"
#include "lesioncal/morphology.hpp"
#include "lesioncal/nifti.hpp"

namespace lesioncal::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

template <class T>
const T& need(const std::optional<T>& section, const char* name) {
  if (!section) throw ConfigError(std::string("missing config section '") + name + "'");
  return *section;
}

const HarnessSection& need_models(const RunConfig& cfg) {
  const auto& h = need(cfg.harness, "harness");
  if (h.models.empty()) throw ConfigError("config key 'harness.models': at least one model is required");
  set_external_concurrency(h.max_processes);
  return h;
}

std::size_t workers(const RunConfig& cfg) { return cfg.harness ? cfg.harness->workers : 1; }

std::vector<StudyRecord> manifest(const RunConfig& cfg) {
  if (!cfg.data.manifest) throw ConfigError("missing config key 'data.manifest'");
  return synth::read_manifest(*cfg.data.manifest);
}

GridVolume load_image(const StudyRecord& r) {
  try {
    return nifti::read_volume(r.image_path).volume;
  } catch (const std::exception& e) {
    throw std::runtime_error("study " + r.id + ": cannot load image: " + e.what());
  }
}

BinaryMask load_label(const StudyRecord& r) {
  if (!r.label_path) throw std::runtime_error("study " + r.id + ": no label in manifest");
  try {
    return BinaryMask(nifti::read_volume(*r.label_path).volume);
  } catch (const std::exception& e) {
    throw std::runtime_error("study " + r.id + ": cannot load label: " + e.what());
  }
}

std::vector<StudyRecord> lesion_records(const std::vector<StudyRecord>& all) {
  std::vector<StudyRecord> out;
  for (const auto& r : all)
    if (!r.is_control) out.push_back(r);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

std::vector<StudyRecord> control_records(const std::vector<StudyRecord>& all) {
  std::vector<StudyRecord> out;
  for (const auto& r : all)
    if (r.is_control) out.push_back(r);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

void write_json(const fs::path& p, const ordered_json& j) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

class Outputs {
 public:
  Outputs(fs::path dir, std::string command, const RunConfig& cfg)
      : dir_(std::move(dir)), command_(std::move(command)), cfg_(cfg) {}

  fs::path path(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }
  void csv(const std::string& name, const csv::Row& header, const std::vector<csv::Row>& rows) {
    csv::write_file(path(name), header, rows);
  }
  void json(const std::string& name, const ordered_json& j) { write_json(path(name), j); }
  void volume(const std::string& name, const GridVolume& v) { nifti::write_volume(v, path(name)); }

  void seed(const std::string& key, std::uint64_t value) { seeds_[key] = value; }

  void finish() {
    ordered_json meta;
    meta["command"] = command_;
    meta["version"] = LESIONCAL_VERSION;
    meta["config"] = cfg_.source.string();
    meta["config_hash"] = cfg_.hash;
    meta["seeds"] = seeds_.empty() ? ordered_json::object() : seeds_;
    meta["outputs"] = files_;
    write_json(dir_ / ("run_metadata_" + command_ + ".json"), meta);
  }

 private:
  fs::path dir_;
  std::string command_;
  const RunConfig& cfg_;
  std::vector<std::string> files_;
  ordered_json seeds_ = ordered_json::object();
};

void cmd_synth(const RunConfig& cfg, Outputs& out, const fs::path& dir) {
  const auto& s = need(cfg.synth, "synth");
  synth::make_dataset(s.n_lesion, s.n_control, s.spec, dir, workers(cfg));
  out.path("manifest.json");
  const ArchetypeAtlas atlas = synth::make_archetype_atlas(s.spec);
  fs::create_directories(dir / "atlas");
  for (std::size_t k = 0; k < atlas.maps.size(); ++k)
    out.volume("atlas/archetype_" + std::to_string(k) + ".nii.gz", atlas.maps[k]);
  out.seed("synth.seed", s.spec.seed);
}

void cmd_folds(const RunConfig& cfg, Outputs& out) {
  const auto& f = need(cfg.folds, "folds");
  const auto all = manifest(cfg);
  auto lesions = lesion_records(all);
  const auto controls = control_records(all);
  if (lesions.empty()) throw std::runtime_error("manifest has no lesion studies");

  if (!f.atlas.empty()) {
    ArchetypeAtlas atlas;
    atlas.threshold = f.threshold;
    for (const auto& p : f.atlas) atlas.maps.push_back(nifti::read_volume(p).volume);
    atlas.validate();
    for (auto& r : lesions) r.phenotype = assign_phenotype(load_label(r), atlas);
  }
  FoldPlan plan = balance_folds(lesions, f.k, f.n_perm, f.seed, workers(cfg));
  assign_controls(plan, controls, f.seed);
  out.json("foldplan.json", to_json(plan));

  std::vector<csv::Row> rows;
  for (const auto& r : fold_summary(plan, lesions))
    rows.push_back({std::to_string(r.fold), csv::format_number(r.mean_age), csv::format_optional(r.sd_age),
                    csv::format_number(r.prop_female), csv::format_optional(r.sd_female),
                    csv::format_number(r.mean_label), csv::format_optional(r.sd_label)});
  out.csv("fold_summary.csv", fold_summary_header(), rows);
  out.seed("folds.seed", f.seed);
}

FoldPlan load_plan(const RunConfig& cfg) {
  if (!cfg.data.foldplan) throw ConfigError("missing config key 'data.foldplan'");
  std::ifstream f(*cfg.data.foldplan, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + cfg.data.foldplan->string());
  nlohmann::json j;
  f >> j;
  return plan_from_json(j);
}

void cmd_score(const RunConfig& cfg, Outputs& out) {
  const auto& h = need_models(cfg);
  const auto all = manifest(cfg);
  const FoldPlan plan = load_plan(cfg);
  std::map<std::string, const StudyRecord*> by_id;
  for (const auto& r : all) by_id[r.id] = &r;

  std::map<std::string, BinaryMask> labels;
  std::map<std::string, GridVolume> images;
  for (const auto& a : plan.assignments) {
    if (a.is_control) continue;
    const auto it = by_id.find(a.id);
    if (it == by_id.end()) throw std::runtime_error("study " + a.id + ": in the fold plan but not in the manifest");
    labels.emplace(a.id, load_label(*it->second));
    images.emplace(a.id, load_image(*it->second));
  }
  std::vector<std::pair<std::string, const GridVolume*>> refs;
  for (const auto& [id, img] : images) refs.emplace_back(id, &img);
  const PredictionTable preds = predict_all(h.models, refs, h.workers);
  const auto rows = cv_evaluate(plan, labels, preds, cfg.metrics);
  out.csv("metric_rows.csv", metric_rows_header(), metric_rows_csv(rows));
  out.csv("pooled_summary.csv", pooled_header(), pooled_csv(aggregate_cv(rows)));
}

void cmd_anatomy(const RunConfig& cfg, Outputs& out) {
  const auto& a = need(cfg.anatomy, "anatomy");
  if (!cfg.data.metric_rows) throw ConfigError("missing config key 'data.metric_rows'");
  const auto all = manifest(cfg);

  const auto table = csv::read_file(*cfg.data.metric_rows);
  if (table.empty()) throw std::runtime_error("metric rows file is empty");
  const auto& header = table.front();
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("metric rows: missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_study = col("study_id"), c_model = col("model_id"), c_score = col(a.glm.score_name);

  std::set<std::string> models;
  for (std::size_t i = 1; i < table.size(); ++i) models.insert(table[i].at(c_model));
  std::string model = a.model;
  if (model.empty()) {
    if (models.size() != 1) throw ConfigError("config key 'anatomy.model': required when metric rows hold several models");
    model = *models.begin();
  } else if (!models.count(model)) {
    throw ConfigError("config key 'anatomy.model': no rows for model '" + model + "'");
  }

  std::map<std::string, double> score;
  std::size_t undefined = 0;
  for (std::size_t i = 1; i < table.size(); ++i) {
    if (table[i].at(c_model) != model) continue;
    const std::string& v = table[i].at(c_score);
    if (v.empty()) {
      ++undefined;
      continue;
    }
    score[table[i].at(c_study)] = std::stod(v);
  }

  std::vector<std::string> ids;
  std::vector<BinaryMask> masks;
  std::vector<double> scores, volumes;
  for (const auto& r : lesion_records(all)) {
    const auto it = score.find(r.id);
    if (it == score.end()) continue;
    ids.push_back(r.id);
    masks.push_back(load_label(r));
    scores.push_back(it->second);
    volumes.push_back(static_cast<double>(masks.back().count()));
  }
  if (ids.size() != score.size()) throw std::runtime_error("metric rows name studies missing from the manifest");

  GlmSpec glm = a.glm;
  glm.workers = workers(cfg);
  const DensityStack stack = density_stack(masks, glm, ids);
  const std::vector<double> none;
  const FweResult fwe =
      permutation_fwe(stack, scores, glm.include_volume_covariate ? std::span<const double>(volumes) : none, glm);

  out.volume("tmap.nii", fwe.tmap.t);
  out.volume("fwe_p.nii", fwe.corrected_p);
  out.volume("overlap.nii", overlap_map(masks));
  std::vector<csv::Row> rows;
  for (std::size_t c = 0; c < fwe.clusters.size(); ++c) {
    const auto& cl = fwe.clusters[c];
    rows.push_back({std::to_string(c + 1), std::to_string(cl.size), csv::format_number(cl.peak_t),
                    std::to_string(cl.peak[0]), std::to_string(cl.peak[1]), std::to_string(cl.peak[2]),
                    csv::format_optional(cl.corrected_p)});
  }
  out.csv("clusters.csv", {"cluster", "size", "peak_t", "peak_x", "peak_y", "peak_z", "corrected_p"}, rows);

  std::size_t significant = 0;
  for (std::size_t i = 0; i < fwe.corrected_p.size(); ++i)
    significant += fwe.tmap.tested.contains(i) && fwe.corrected_p[i] < glm.alpha_fwe;
  ordered_json s;
  s["model"] = model;
  s["score"] = glm.score_name;
  s["n_subjects"] = ids.size();
  s["excluded_undefined"] = undefined;
  s["covariate"] = glm.include_volume_covariate;
  s["df"] = fwe.tmap.df;
  s["tested_voxels"] = fwe.tmap.tested.count();
  s["t_threshold"] = std::isfinite(fwe.t_threshold) ? ordered_json(fwe.t_threshold) : ordered_json(nullptr);
  s["significant_voxels"] = significant;
  out.json("anatomy.json", s);
  out.seed("anatomy.seed", glm.seed);
}

void cmd_morphology(const RunConfig& cfg, Outputs& out) {
  const auto& m = need(cfg.morphology, "morphology");
  const auto& h = need_models(cfg);
  const auto lesions = lesion_records(manifest(cfg));
  if (lesions.empty()) throw std::runtime_error("manifest has no lesion studies");

  std::vector<std::string> ids;
  std::vector<BinaryMask> labels;
  std::vector<GridVolume> images;
  for (const auto& r : lesions) {
    ids.push_back(r.id);
    labels.push_back(load_label(r));
    images.push_back(load_image(r));
  }
  std::vector<std::pair<std::string, const GridVolume*>> refs;
  for (std::size_t i = 0; i < ids.size(); ++i) refs.emplace_back(ids[i], &images[i]);
  const PredictionTable preds = predict_all(h.models, refs, h.workers);

  const EmbeddingModel model = fit_embedding(lesion_matrix(labels, m.downsample), m.embedding);
  const AlignmentTransform align = compute_alignment(model.coords);
  const Eigen::MatrixXd gt = apply_alignment(align, model.coords);

  std::vector<csv::Row> emb_rows, dist_rows;
  for (std::size_t i = 0; i < ids.size(); ++i)
    emb_rows.push_back({ids[i], "ground_truth", csv::format_number(gt(i, 0)), csv::format_number(gt(i, 1))});

  std::vector<std::string> names;
  std::vector<std::vector<double>> dists;
  ordered_json summary = ordered_json::array();
  for (const auto& [name, per_study] : preds) {
    std::vector<BinaryMask> masks;
    for (const auto& id : ids) masks.push_back(binarize(per_study.at(id), cfg.metrics.threshold));
    const Eigen::MatrixXd coords = apply_alignment(align, embed_new(model, lesion_matrix(masks, m.downsample)));
    const DistanceSummary d = embedding_distances(ids, gt, ids, coords);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      emb_rows.push_back({ids[i], name, csv::format_number(coords(i, 0)), csv::format_number(coords(i, 1))});
      dist_rows.push_back({name, d.ids[i], csv::format_number(d.distances[i])});
    }
    summary.push_back({{"model", name}, {"mean_distance", d.mean}, {"median_distance", d.median}});
    names.push_back(name);
    dists.push_back(d.distances);
  }

  std::vector<csv::Row> tests;
  for (std::size_t a = 0; a < names.size(); ++a)
    for (std::size_t b = a + 1; b < names.size(); ++b) {
      const ModelComparison c = compare_models(dists[a], dists[b]);
      const std::string status = c.test ? "tested" : c.indistinguishable ? "indistinguishable" : "insufficient";
      tests.push_back({names[a], names[b], std::to_string(ids.size()),
                       c.test ? csv::format_number(c.test->statistic) : "",
                       c.test ? csv::format_number(c.test->df) : "", c.test ? csv::format_number(c.test->p_value) : "",
                       status});
    }

  out.csv("embedding.csv", {"study_id", "source", "x", "y"}, emb_rows);
  out.csv("distances.csv", {"model", "study_id", "distance"}, dist_rows);
  out.csv("model_tests.csv", pair_header(), tests);
  out.json("embedding_model.json", to_json(model));
  out.json("morphology.json", summary);
  out.seed("morphology.seed", m.embedding.seed);
}

void cmd_noise_sweep(const RunConfig& cfg, Outputs& out) {
  const auto& n = need(cfg.noise, "noise");
  const auto& h = need_models(cfg);
  std::vector<LesionStudy> studies;
  for (const auto& r : lesion_records(manifest(cfg))) studies.push_back({r.id, load_image(r), load_label(r)});
  if (studies.empty()) throw std::runtime_error("manifest has no lesion studies");

  SweepOptions opts;
  opts.seed = n.seed;
  opts.pairing = n.pairing;
  opts.metric = cfg.metrics;
  opts.workers = h.workers;
  const SweepReport rep = noise_sweep(studies, h.models, n.arms, opts);
  for (const auto& g : rep.gaps)
    std::cerr << "gap: " << g.noise << " increment " << g.increment << " study " << g.study << ": " << g.message
              << '\n';
  out.csv("sweep_report.csv", sweep_cells_header(), sweep_cells_csv(rep));
  out.csv("sweep_tests.csv", sweep_tests_header(), sweep_tests_csv(rep));
  out.json("sweep_report.json", to_json(rep));
  out.seed("noise.seed", n.seed);
}

void cmd_fp_report(const RunConfig& cfg, Outputs& out) {
  const auto& h = need_models(cfg);
  std::vector<ControlStudy> controls;
  for (const auto& r : control_records(manifest(cfg))) controls.push_back({r.id, load_image(r)});
  if (controls.empty()) throw std::runtime_error("manifest has no control studies");

  FpOptions opts;
  opts.theta = cfg.metrics.threshold;
  opts.n_boot = h.n_boot;
  opts.size = h.size;
  opts.seed = h.seed;
  opts.workers = h.workers;
  const FpReport rep = fp_report(controls, h.models, opts);
  out.csv("fp_report.csv", fp_table_header(), fp_table_csv(rep));
  out.csv("bootstrap.csv", fp_bootstrap_header(), fp_bootstrap_csv(rep));
  out.csv("fp_tests.csv", pair_header(), fp_pairs_csv(rep));

  std::vector<csv::Row> counts;
  for (const auto& m : rep.models)
    for (std::size_t c = 0; c < rep.control_ids.size(); ++c)
      counts.push_back({m.model, rep.control_ids[c], csv::format_number(m.counts[c])});
  out.csv("fp_counts.csv", {"model", "study_id", "fp_voxels"}, counts);
  out.json("fp_report.json", to_json(rep));
  out.seed("harness.seed", h.seed);
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"synth", "folds", "score", "anatomy", "morphology", "noise-sweep",
                                              "fp-report"};
  return names;
}

void run_command(const std::string& command, const RunConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  Outputs out(out_dir, command, cfg);
  if (command == "synth")
    cmd_synth(cfg, out, out_dir);
  else if (command == "folds")
    cmd_folds(cfg, out);
  else if (command == "score")
    cmd_score(cfg, out);
  else if (command == "anatomy")
    cmd_anatomy(cfg, out);
  else if (command == "morphology")
    cmd_morphology(cfg, out);
  else if (command == "noise-sweep")
    cmd_noise_sweep(cfg, out);
  else if (command == "fp-report")
    cmd_fp_report(cfg, out);
  else
    throw ConfigError("unknown command '" + command + "'");
  out.finish();
}

int main(int argc, char** argv) {
  CLI::App app{"Segmentation evaluation toolkit: folds, scoring, anatomy, morphology, noise and FP reports"};
  app.set_version_flag("--version", std::string(LESIONCAL_VERSION));
  app.require_subcommand(1);

  std::string config, out_dir;
  std::vector<std::string> overrides;
  for (const auto& name : command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON configuration file")->required();
    sub->add_option("--out", out_dir, "output directory (overrides the config's output key)");
    sub->add_option("--set", overrides, "override a scalar config value, e.g. folds.k=3");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const RunConfig cfg = load_config(config, overrides);
    fs::path dir;
    if (!out_dir.empty())
      dir = out_dir;
    else if (cfg.output)
      dir = *cfg.output;
    else
      throw ConfigError("no output directory: pass --out or set 'output'");
    run_command(command, cfg, dir);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "lesioncal " << command << ": configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "lesioncal " << command << ": error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace lesioncal::cli
