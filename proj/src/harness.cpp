#include "lesioncal/harness.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "lesioncal/parallel.hpp"
#include "lesioncal/preprocess.hpp"
#include "lesioncal/random.hpp"

namespace lesioncal {

namespace {

using csv::format_number;
using csv::format_optional;

std::string format_count(std::size_t n) { return std::to_string(n); }

std::optional<double> opt_mean(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return stats::mean(v);
}

PairComparison compare(const std::string& a, const std::string& b, const std::vector<double>& xa,
                       const std::vector<double>& xb) {
  PairComparison pc{a, b, xa.size(), std::nullopt, "insufficient"};
  if (xa.size() < 2) return pc;
  try {
    pc.test = stats::paired_t(xa, xb);
    pc.status = "tested";
  } catch (const stats::ZeroVarianceError&) {
    pc.status = "indistinguishable";
  }
  return pc;
}

csv::Row pair_fields(const PairComparison& p) {
  return {p.model_a,
          p.model_b,
          format_count(p.n),
          p.test ? format_number(p.test->statistic) : "",
          p.test ? format_number(p.test->df) : "",
          p.test ? format_number(p.test->p_value) : "",
          p.status};
}

nlohmann::ordered_json pair_json(const PairComparison& p) {
  nlohmann::ordered_json j;
  j["model_a"] = p.model_a;
  j["model_b"] = p.model_b;
  j["n"] = p.n;
  j["status"] = p.status;
  if (p.test) {
    j["t"] = p.test->statistic;
    j["df"] = p.test->df;
    j["p"] = p.test->p_value;
  }
  return j;
}

void check_unique_names(const std::vector<SegmenterHandle>& models) {
  std::set<std::string> seen;
  for (const auto& m : models) {
    m.validate();
    if (!seen.insert(m.name).second) throw std::invalid_argument("duplicate model name '" + m.name + "'");
  }
}

std::string join_magnitudes(const std::vector<double>& m) {
  std::string s;
  for (std::size_t i = 0; i < m.size(); ++i) s += (i ? ";" : "") + format_number(m[i]);
  return s;
}

struct Eval {
  double dice = 0.0;
  std::optional<double> hd;
  double volume = 0.0;
};

}  // namespace

PredictionTable predict_all(const std::vector<SegmenterHandle>& models,
                            const std::vector<std::pair<std::string, const GridVolume*>>& images,
                            std::size_t workers) {
  check_unique_names(models);
  std::vector<ProbabilityMap> out(models.size() * images.size());
  parallel_for(out.size(), workers, [&](std::size_t t) {
    const auto& m = models[t / images.size()];
    const auto& [id, img] = images[t % images.size()];
    out[t] = run_segmenter(m, *img, id);
  });
  PredictionTable table;
  for (std::size_t t = 0; t < out.size(); ++t)
    table[models[t / images.size()].name].emplace(images[t % images.size()].first, std::move(out[t]));
  return table;
}

std::vector<MetricRow> cv_evaluate(const FoldPlan& plan, const std::map<std::string, BinaryMask>& labels,
                                   const PredictionTable& predictions, const MetricParams& params,
                                   const HausdorffOptions& hd) {
  params.validate();
  std::vector<const FoldAssignment*> lesions;
  for (const auto& a : plan.assignments)
    if (!a.is_control) lesions.push_back(&a);
  std::sort(lesions.begin(), lesions.end(), [](auto* x, auto* y) { return x->id < y->id; });

  std::vector<MetricRow> rows;
  for (const auto& [model, preds] : predictions) {
    for (const auto* a : lesions) {
      const auto lab = labels.find(a->id);
      if (lab == labels.end()) throw std::invalid_argument("study " + a->id + ": missing label");
      const auto pr = preds.find(a->id);
      if (pr == preds.end()) throw std::invalid_argument("model " + model + ": missing prediction for study " + a->id);
      if (!pr->second.volume().same_grid(lab->second.volume()))
        throw std::invalid_argument("model " + model + ", study " + a->id + ": prediction grid differs from label");
      const BinaryMask pred = binarize(pr->second, params.threshold);
      MetricRow r;
      r.study_id = a->id;
      r.model_id = model;
      r.fold = a->fold;
      r.condition = "clean";
      r.dice = dice_score(pred, lab->second);
      r.hd95 = lesioncal::hd95(pred, lab->second, hd);
      r.pred_volume = pred.count();
      r.label_volume = lab->second.count();
      for (std::size_t i = 0; i < pred.size(); ++i) r.fp_voxels += pred.contains(i) && !lab->second.contains(i);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

csv::Row metric_rows_header() {
  return {"study_id", "model_id", "fold", "condition", "dice", "hd95", "pred_volume", "label_volume", "fp_voxels"};
}

std::vector<csv::Row> metric_rows_csv(const std::vector<MetricRow>& rows) {
  std::vector<csv::Row> out;
  for (const auto& r : rows)
    out.push_back({r.study_id, r.model_id, std::to_string(r.fold), r.condition, format_number(r.dice),
                   format_optional(r.hd95), format_count(r.pred_volume), format_count(r.label_volume),
                   format_count(r.fp_voxels)});
  return out;
}

csv::Row pooled_header() { return {"model_id", "fold", "n", "mean_dice", "mean_hd95", "hd95_excluded"}; }

std::vector<csv::Row> pooled_csv(const std::vector<CvSummary>& summaries) {
  std::vector<csv::Row> out;
  for (const auto& s : summaries) {
    out.push_back({s.model_id, "all", format_count(s.n), format_number(s.mean_dice), format_optional(s.mean_hd95),
                   format_count(s.hd95_excluded)});
    for (const auto& f : s.folds)
      out.push_back({s.model_id, std::to_string(f.fold), format_count(f.n), format_number(f.mean_dice),
                     format_optional(f.mean_hd95), ""});
  }
  return out;
}

FpReport fp_report_from_counts(const std::vector<std::string>& control_ids, const std::vector<std::string>& models,
                               const std::vector<std::vector<double>>& counts, const FpOptions& opts) {
  if (control_ids.empty()) throw std::invalid_argument("fp report: no controls");
  if (models.empty()) throw std::invalid_argument("fp report: no models");
  if (counts.size() != models.size()) throw std::invalid_argument("fp report: one count vector per model");
  if (opts.n_boot == 0 || opts.size == 0) throw std::invalid_argument("fp report: n_boot and size must be > 0");
  FpReport r;
  r.control_ids = control_ids;
  r.n_boot = opts.n_boot;
  r.size = opts.size;
  r.seed = opts.seed;
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (counts[m].size() != control_ids.size())
      throw std::invalid_argument("fp report: model " + models[m] + " was not scored on every control");
    FpModelStats s;
    s.model = models[m];
    s.counts = counts[m];
    s.table = stats::descriptive(s.counts);
    s.boot_means = stats::bootstrap_means(s.counts, opts.n_boot, opts.size, opts.seed);
    r.models.push_back(std::move(s));
  }
  for (std::size_t a = 0; a < r.models.size(); ++a)
    for (std::size_t b = a + 1; b < r.models.size(); ++b)
      r.pairs.push_back(compare(r.models[a].model, r.models[b].model, r.models[a].boot_means, r.models[b].boot_means));
  return r;
}

FpReport fp_report(const std::vector<ControlStudy>& controls, const std::vector<SegmenterHandle>& models,
                   const FpOptions& opts) {
  if (controls.empty()) throw std::invalid_argument("fp report: no controls");
  check_unique_names(models);
  std::vector<std::vector<double>> counts(models.size(), std::vector<double>(controls.size()));
  parallel_for(models.size() * controls.size(), opts.workers, [&](std::size_t t) {
    const std::size_t m = t / controls.size(), c = t % controls.size();
    const ProbabilityMap p = run_segmenter(models[m], controls[c].image, controls[c].id);
    counts[m][c] = static_cast<double>(fp_voxel_count(p, opts.theta));
  });
  std::vector<std::string> ids, names;
  for (const auto& c : controls) ids.push_back(c.id);
  for (const auto& m : models) names.push_back(m.name);
  return fp_report_from_counts(ids, names, counts, opts);
}

csv::Row fp_table_header() {
  return {"model", "n", "Mean", "Mean (non-zero)", "SD", "SD (non-zero)", "count \xE2\x89\xA5" "1", "Max"};
}

std::vector<csv::Row> fp_table_csv(const FpReport& r) {
  std::vector<csv::Row> out;
  for (const auto& m : r.models) {
    const auto& t = m.table;
    out.push_back({m.model, format_count(t.n), format_number(t.mean), format_optional(t.nonzero_mean),
                   format_optional(t.sd), format_optional(t.nonzero_sd), format_count(t.count_nonzero),
                   format_number(t.max)});
  }
  return out;
}

csv::Row fp_bootstrap_header() { return {"model", "replicate", "mean"}; }

std::vector<csv::Row> fp_bootstrap_csv(const FpReport& r) {
  std::vector<csv::Row> out;
  for (const auto& m : r.models)
    for (std::size_t i = 0; i < m.boot_means.size(); ++i)
      out.push_back({m.model, format_count(i), format_number(m.boot_means[i])});
  return out;
}

csv::Row pair_header() { return {"model_a", "model_b", "n", "t", "df", "p", "status"}; }

std::vector<csv::Row> fp_pairs_csv(const FpReport& r) {
  std::vector<csv::Row> out;
  for (const auto& p : r.pairs) out.push_back(pair_fields(p));
  return out;
}

nlohmann::ordered_json to_json(const FpReport& r) {
  nlohmann::ordered_json j;
  j["n_controls"] = r.control_ids.size();
  j["n_boot"] = r.n_boot;
  j["size"] = r.size;
  j["seed"] = r.seed;
  const auto header = fp_table_header();
  const auto rows = fp_table_csv(r);
  j["table"] = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json e;
    for (std::size_t i = 0; i < header.size(); ++i) e[header[i]] = row[i];
    j["table"].push_back(std::move(e));
  }
  j["pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : r.pairs) j["pairs"].push_back(pair_json(p));
  return j;
}

void SweepArm::validate() const {
  if (name.empty()) throw std::invalid_argument("sweep arm with empty name");
  if (components.empty()) throw std::invalid_argument("sweep arm " + name + ": no schedules");
  for (const auto& c : components) {
    if (c.n_steps == 0) throw std::invalid_argument("sweep arm " + name + ": schedule with zero steps");
    if (c.n_steps != components.front().n_steps)
      throw std::invalid_argument("sweep arm " + name + ": schedules differ in step count");
    if (!(c.max_magnitude >= 0.0)) throw std::invalid_argument("sweep arm " + name + ": negative magnitude");
  }
}

std::size_t SweepArm::n_steps() const { return components.empty() ? 0 : components.front().n_steps; }

std::uint64_t corruption_seed(std::uint64_t sweep_seed, const std::string& study_id, std::size_t increment,
                              std::size_t component) {
  return derive_seed(derive_seed(study_seed(sweep_seed, study_id), increment), component);
}

GridVolume corrupted_input(const GridVolume& image, const SweepArm& arm, std::size_t increment,
                           std::uint64_t sweep_seed, const std::string& study_id) {
  std::vector<NoiseSpec> specs;
  bool all_zero = true;
  for (std::size_t c = 0; c < arm.components.size(); ++c) {
    NoiseSpec s;
    s.kind = arm.components[c].kind;
    s.magnitude = arm.components[c].magnitudes().at(increment);
    s.seed = corruption_seed(sweep_seed, study_id, increment, c);
    all_zero = all_zero && s.magnitude == 0.0;
    specs.push_back(s);
  }
  if (all_zero) return image;
  return normalize_intensity(apply_combined(image, specs));
}

SweepReport noise_sweep(const std::vector<LesionStudy>& studies, const std::vector<SegmenterHandle>& models,
                        const std::vector<SweepArm>& arms, const SweepOptions& opts) {
  if (studies.empty()) throw std::invalid_argument("noise sweep: no studies");
  if (models.empty()) throw std::invalid_argument("noise sweep: no models");
  if (arms.empty()) throw std::invalid_argument("noise sweep: no noise schedules");
  check_unique_names(models);
  for (const auto& m : models)
    if (!m.runs_on_images())
      throw std::invalid_argument("noise sweep: model " + m.name + " is a fixed prediction set");
  for (const auto& a : arms) a.validate();
  opts.metric.validate();
  for (const auto& s : studies) require_same_grid(s.image, s.label.volume(), ("study " + s.id).c_str());

  // Task layout: (arm, increment, study); every model sees the same corrupted image.
  struct Task {
    std::size_t arm, inc, study;
  };
  std::vector<Task> tasks;
  for (std::size_t a = 0; a < arms.size(); ++a)
    for (std::size_t j = 0; j < arms[a].n_steps(); ++j)
      for (std::size_t s = 0; s < studies.size(); ++s) tasks.push_back({a, j, s});

  const std::size_t nm = models.size();
  std::vector<std::optional<Eval>> evals(tasks.size() * nm);
  std::vector<std::string> errors(tasks.size() * nm);
  parallel_for(tasks.size(), opts.workers, [&](std::size_t t) {
    const Task& tk = tasks[t];
    const LesionStudy& st = studies[tk.study];
    GridVolume input;
    try {
      input = corrupted_input(st.image, arms[tk.arm], tk.inc, opts.seed, st.id);
    } catch (const std::exception& e) {
      for (std::size_t m = 0; m < nm; ++m) errors[t * nm + m] = std::string("corruption failed: ") + e.what();
      return;
    }
    for (std::size_t m = 0; m < nm; ++m) {
      try {
        const BinaryMask pred = binarize(run_segmenter(models[m], input, st.id), opts.metric.threshold);
        evals[t * nm + m] =
            Eval{dice_score(pred, st.label), hd95(pred, st.label, opts.hd), static_cast<double>(pred.count())};
      } catch (const std::exception& e) {
        errors[t * nm + m] = e.what();
      }
    }
  });

  SweepReport rep;
  rep.pairing = opts.pairing;
  auto valid = [&](std::size_t t) {
    for (std::size_t m = 0; m < nm; ++m)
      if (!evals[t * nm + m]) return false;
    return true;
  };
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (valid(t)) continue;
    for (std::size_t m = 0; m < nm; ++m)
      if (!errors[t * nm + m].empty())
        rep.gaps.push_back({arms[tasks[t].arm].name, tasks[t].inc, studies[tasks[t].study].id, errors[t * nm + m]});
  }

  // Index of the first task for (arm, increment); studies follow contiguously.
  std::vector<std::size_t> arm_base(arms.size(), 0);
  for (std::size_t a = 1; a < arms.size(); ++a) arm_base[a] = arm_base[a - 1] + arms[a - 1].n_steps() * studies.size();
  auto task_of = [&](std::size_t a, std::size_t j, std::size_t s) { return arm_base[a] + j * studies.size() + s; };

  for (std::size_t a = 0; a < arms.size(); ++a) {
    for (std::size_t j = 0; j < arms[a].n_steps(); ++j) {
      std::vector<double> mags;
      for (const auto& c : arms[a].components) mags.push_back(c.magnitudes()[j]);
      for (std::size_t m = 0; m < nm; ++m) {
        SweepCell cell;
        cell.noise = arms[a].name;
        cell.increment = j;
        cell.magnitudes = mags;
        cell.model = models[m].name;
        std::vector<double> dice, hd, vol;
        for (std::size_t s = 0; s < studies.size(); ++s) {
          const std::size_t t = task_of(a, j, s);
          if (!valid(t)) continue;
          const Eval& e = *evals[t * nm + m];
          dice.push_back(e.dice);
          vol.push_back(e.volume);
          if (e.hd)
            hd.push_back(*e.hd);
          else
            ++cell.hd95_undefined;
        }
        cell.n = dice.size();
        cell.mean_dice = dice.empty() ? 0.0 : stats::mean(dice);
        cell.mean_pred_volume = vol.empty() ? 0.0 : stats::mean(vol);
        cell.mean_hd95 = opt_mean(hd);
        rep.cells.push_back(std::move(cell));
      }
    }
  }

  static const char* metric_names[] = {"dice", "hd95", "volume"};
  for (std::size_t a = 0; a < arms.size(); ++a) {
    for (int metric = 0; metric < 3; ++metric) {
      for (std::size_t ma = 0; ma < nm; ++ma) {
        for (std::size_t mb = ma + 1; mb < nm; ++mb) {
          std::vector<double> xa, xb;
          std::size_t excluded = 0;
          for (std::size_t j = 0; j < arms[a].n_steps(); ++j) {
            std::vector<double> va, vb;
            for (std::size_t s = 0; s < studies.size(); ++s) {
              const std::size_t t = task_of(a, j, s);
              if (!valid(t)) continue;
              const Eval& ea = *evals[t * nm + ma];
              const Eval& eb = *evals[t * nm + mb];
              if (metric == 0) {
                va.push_back(ea.dice);
                vb.push_back(eb.dice);
              } else if (metric == 2) {
                va.push_back(ea.volume);
                vb.push_back(eb.volume);
              } else if (ea.hd && eb.hd) {
                va.push_back(*ea.hd);
                vb.push_back(*eb.hd);
              } else {
                ++excluded;
              }
            }
            if (va.empty()) continue;
            if (opts.pairing == Pairing::increment_means) {
              xa.push_back(stats::mean(va));
              xb.push_back(stats::mean(vb));
            } else {
              xa.insert(xa.end(), va.begin(), va.end());
              xb.insert(xb.end(), vb.begin(), vb.end());
            }
          }
          SweepTest test;
          test.noise = arms[a].name;
          test.metric = metric_names[metric];
          test.pair = compare(models[ma].name, models[mb].name, xa, xb);
          test.excluded = excluded;
          rep.tests.push_back(std::move(test));
        }
      }
    }
  }

  std::vector<double> pvals;
  std::vector<std::size_t> family;
  for (std::size_t i = 0; i < rep.tests.size(); ++i) {
    if (!rep.tests[i].pair.test) continue;
    pvals.push_back(rep.tests[i].pair.test->p_value);
    family.push_back(i);
  }
  if (!pvals.empty()) {
    const auto fdr = stats::bh_fdr(pvals, opts.alpha);
    const auto fwer = stats::holm_fwer(pvals, opts.alpha);
    for (std::size_t k = 0; k < family.size(); ++k) {
      SweepTest& t = rep.tests[family[k]];
      t.p_fdr = fdr.adjusted[k];
      t.p_fwer = fwer.adjusted[k];
      t.reject_fdr = fdr.reject[k];
      t.reject_fwer = fwer.reject[k];
    }
  }
  return rep;
}

csv::Row sweep_cells_header() {
  return {"noise", "increment", "magnitude", "model", "n", "mean_dice", "mean_hd95", "hd95_undefined",
          "mean_pred_volume"};
}

std::vector<csv::Row> sweep_cells_csv(const SweepReport& r) {
  std::vector<csv::Row> out;
  for (const auto& c : r.cells)
    out.push_back({c.noise, format_count(c.increment), join_magnitudes(c.magnitudes), c.model, format_count(c.n),
                   format_number(c.mean_dice), format_optional(c.mean_hd95), format_count(c.hd95_undefined),
                   format_number(c.mean_pred_volume)});
  return out;
}

csv::Row sweep_tests_header() {
  return {"noise", "metric", "model_a", "model_b", "n", "t", "df", "p", "status", "excluded",
          "p_fdr", "p_fwer", "reject_fdr", "reject_fwer"};
}

std::vector<csv::Row> sweep_tests_csv(const SweepReport& r) {
  std::vector<csv::Row> out;
  for (const auto& t : r.tests) {
    csv::Row row{t.noise, t.metric};
    const csv::Row p = pair_fields(t.pair);
    row.insert(row.end(), p.begin(), p.end());
    row.push_back(format_count(t.excluded));
    row.push_back(format_optional(t.p_fdr));
    row.push_back(format_optional(t.p_fwer));
    row.push_back(t.p_fdr ? (t.reject_fdr ? "true" : "false") : "");
    row.push_back(t.p_fwer ? (t.reject_fwer ? "true" : "false") : "");
    out.push_back(std::move(row));
  }
  return out;
}

nlohmann::ordered_json to_json(const SweepReport& r) {
  nlohmann::ordered_json j;
  j["pairing"] = r.pairing == Pairing::increment_means ? "increment_means" : "per_image";
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : r.cells) {
    nlohmann::ordered_json e;
    e["noise"] = c.noise;
    e["increment"] = c.increment;
    e["magnitudes"] = c.magnitudes;
    e["model"] = c.model;
    e["n"] = c.n;
    e["mean_dice"] = c.mean_dice;
    if (c.mean_hd95)
      e["mean_hd95"] = *c.mean_hd95;
    else
      e["mean_hd95"] = nullptr;
    e["hd95_undefined"] = c.hd95_undefined;
    e["mean_pred_volume"] = c.mean_pred_volume;
    j["cells"].push_back(std::move(e));
  }
  j["tests"] = nlohmann::ordered_json::array();
  for (const auto& t : r.tests) {
    nlohmann::ordered_json e = pair_json(t.pair);
    e["noise"] = t.noise;
    e["metric"] = t.metric;
    e["excluded"] = t.excluded;
    if (t.p_fdr) {
      e["p_fdr"] = *t.p_fdr;
      e["p_fwer"] = *t.p_fwer;
      e["reject_fdr"] = t.reject_fdr;
      e["reject_fwer"] = t.reject_fwer;
    }
    j["tests"].push_back(std::move(e));
  }
  j["gaps"] = nlohmann::ordered_json::array();
  for (const auto& g : r.gaps)
    j["gaps"].push_back({{"noise", g.noise}, {"increment", g.increment}, {"study", g.study}, {"message", g.message}});
  return j;
}

}  // namespace lesioncal
