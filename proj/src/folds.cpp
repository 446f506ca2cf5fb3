#include "lesioncal/folds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "lesioncal/parallel.hpp"
#include "lesioncal/random.hpp"
#include "lesioncal/stats.hpp"

namespace lesioncal {

namespace {

std::string phenotype_label(const std::optional<std::size_t>& p) { return p ? std::to_string(*p) : "none"; }

double variance_or_zero(std::span<const double> x) { return x.size() < 2 ? 0.0 : stats::sample_variance(x); }

double median(std::vector<double> x) {
  if (x.empty()) return 0.0;
  return percentile_linear(std::move(x), 50.0);
}

struct VolumeScores {
  double kw_h = 0.0;
  double kw_p = 1.0;
  double mean_var = 0.0;
  double sd_var = 0.0;
  std::vector<double> means;
  std::vector<double> sds;
};

VolumeScores score_partition(std::span<const StudyRecord> records, const std::vector<int>& fold_of, std::size_t k) {
  std::vector<std::vector<double>> groups(k);
  for (std::size_t i = 0; i < records.size(); ++i) groups[static_cast<std::size_t>(fold_of[i])].push_back(records[i].lesion_volume);
  VolumeScores s;
  for (const auto& g : groups) {
    s.means.push_back(stats::mean(g));
    s.sds.push_back(g.size() < 2 ? 0.0 : stats::sample_sd(g));
  }
  const auto kw = stats::kruskal_wallis(groups);
  s.kw_h = kw.statistic;
  s.kw_p = kw.p_value;
  s.mean_var = variance_or_zero(s.means);
  s.sd_var = variance_or_zero(s.sds);
  return s;
}

void check_records(std::span<const StudyRecord> records, std::size_t k) {
  if (k < 2) throw std::invalid_argument("balance_folds: k must be >= 2");
  if (records.size() < k) throw std::invalid_argument("balance_folds: fewer records than folds");
  std::set<std::string> seen;
  for (const auto& r : records) {
    r.validate();
    if (r.is_control) throw std::invalid_argument("balance_folds: control study " + r.id + " in lesion set");
    if (!seen.insert(r.id).second) throw std::invalid_argument("balance_folds: duplicate study id " + r.id);
  }
}

}  // namespace

std::string to_string(Sex s) {
  switch (s) {
    case Sex::female: return "F";
    case Sex::male: return "M";
    case Sex::unknown: break;
  }
  return "unknown";
}

Sex parse_sex(std::string_view s) {
  if (s == "F" || s == "f" || s == "female") return Sex::female;
  if (s == "M" || s == "m" || s == "male") return Sex::male;
  if (s == "unknown" || s.empty()) return Sex::unknown;
  throw std::invalid_argument("unknown sex value '" + std::string(s) + "'");
}

void StudyRecord::validate() const {
  if (id.empty()) throw std::invalid_argument("study record with empty id");
  if (!(lesion_volume >= 0.0)) throw std::invalid_argument("study " + id + ": negative lesion volume");
  if (is_control && (label_path || phenotype))
    throw std::invalid_argument("study " + id + ": controls carry no label and no phenotype");
}

void ArchetypeAtlas::validate() const {
  if (maps.empty()) throw std::invalid_argument("archetype atlas is empty");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("atlas threshold must lie in (0, 1)");
  for (const auto& m : maps) require_same_grid(maps.front(), m, "archetype atlas");
}

BinaryMask ArchetypeAtlas::mask(std::size_t k) const {
  const GridVolume& m = maps.at(k);
  GridVolume out(m.dims(), m.spacing(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] >= threshold ? 1.0 : 0.0;
  return BinaryMask(std::move(out));
}

std::optional<std::size_t> assign_phenotype(const BinaryMask& mask, const ArchetypeAtlas& atlas) {
  atlas.validate();
  require_same_grid(mask.volume(), atlas.maps.front(), "assign_phenotype");
  // Both-empty Dice is 1 by convention; an empty mask has no phenotype.
  if (mask.count() == 0) return std::nullopt;
  std::optional<std::size_t> best;
  double best_dice = 0.0;
  for (std::size_t k = 0; k < atlas.maps.size(); ++k) {
    const double d = dice_score(mask, atlas.mask(k));
    if (d > best_dice) {
      best_dice = d;
      best = k;
    }
  }
  return best;
}

std::optional<int> FoldPlan::fold_of(const std::string& id) const {
  for (const auto& a : assignments) {
    if (a.id == id) return a.fold;
  }
  return std::nullopt;
}

FoldCandidate generate_candidate(std::span<const StudyRecord> records, std::size_t k, std::uint64_t seed,
                                 std::size_t index) {
  Rng rng(derive_seed(seed, index));
  std::map<std::optional<std::size_t>, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < records.size(); ++i) classes[records[i].phenotype].push_back(i);

  std::vector<int> labels(k);
  std::iota(labels.begin(), labels.end(), 0);
  FoldCandidate c;
  c.fold_of.assign(records.size(), 0);
  std::size_t dealt = 0;
  for (auto& [phenotype, members] : classes) {
    rng.shuffle(members);
    for (std::size_t i : members) c.fold_of[i] = static_cast<int>(dealt++ % k);
  }
  rng.shuffle(labels);
  for (auto& f : c.fold_of) f = labels[static_cast<std::size_t>(f)];

  const auto s = score_partition(records, c.fold_of, k);
  c.kw_h = s.kw_h;
  c.kw_p = s.kw_p;
  c.mean_var = s.mean_var;
  c.sd_var = s.sd_var;
  return c;
}

FoldPlan balance_folds(std::span<const StudyRecord> records, std::size_t k, std::size_t n_perm, std::uint64_t seed,
                       std::size_t workers) {
  check_records(records, k);
  if (n_perm < 1) throw std::invalid_argument("balance_folds: n_perm must be >= 1");

  std::vector<FoldCandidate> pool(n_perm);
  parallel_for(n_perm, workers, [&](std::size_t i) { pool[i] = generate_candidate(records, k, seed, i); });

  std::vector<double> ps, mvs, svs;
  for (const auto& c : pool) {
    ps.push_back(c.kw_p);
    mvs.push_back(c.mean_var);
    svs.push_back(c.sd_var);
  }
  const double med_p = median(ps);
  const double med_mv = median(mvs);
  const double med_sv = median(svs);
  const double norm_mv = med_mv > 0.0 ? med_mv : 1.0;
  const double norm_sv = med_sv > 0.0 ? med_sv : 1.0;

  std::vector<std::size_t> order(n_perm);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pool[a].kw_p > pool[b].kw_p; });
  const auto top = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(n_perm))));

  std::size_t best = order[0];
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < top; ++r) {
    const std::size_t i = order[r];
    const double score = pool[i].mean_var / norm_mv + pool[i].sd_var / norm_sv;
    if (score < best_score || (score == best_score && i < best)) {
      best_score = score;
      best = i;
    }
  }

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.n_perm = n_perm;
  const auto& chosen = pool[best];
  for (std::size_t i = 0; i < records.size(); ++i) plan.assignments.push_back({records[i].id, chosen.fold_of[i], false});

  auto& d = plan.diagnostics;
  d.kw_h = chosen.kw_h;
  d.kw_p = chosen.kw_p;
  d.mean_var = chosen.mean_var;
  d.sd_var = chosen.sd_var;
  d.pool_median_p = med_p;
  d.pool_median_mean_var = med_mv;
  d.pool_median_sd_var = med_sv;
  d.top_pool_size = top;
  d.selected_index = best;
  d.selection_rule =
      "keep candidates with Kruskal-Wallis p in the top 1% of the pool, then minimise "
      "var(fold mean volume)/pool median + var(fold SD volume)/pool median; ties to lowest candidate index";
  const auto s = score_partition(records, chosen.fold_of, k);
  d.fold_mean_volume = s.means;
  d.fold_sd_volume = s.sds;
  d.fold_sizes.assign(k, 0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto f = static_cast<std::size_t>(chosen.fold_of[i]);
    ++d.fold_sizes[f];
    auto& counts = d.phenotype_counts[phenotype_label(records[i].phenotype)];
    counts.resize(k, 0);
    ++counts[f];
  }
  return plan;
}

void assign_controls(FoldPlan& plan, std::span<const StudyRecord> controls, std::uint64_t seed) {
  std::vector<std::size_t> order(controls.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0xC0117801ULL));
  rng.shuffle(order);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const auto& r = controls[order[pos]];
    if (!r.is_control) throw std::invalid_argument("assign_controls: study " + r.id + " is not a control");
    if (plan.fold_of(r.id)) throw std::invalid_argument("assign_controls: study " + r.id + " already assigned");
    plan.assignments.push_back({r.id, static_cast<int>(pos % plan.k), true});
  }
}

std::vector<std::string> fold_summary_header() {
  return {"fold",
          "Mean Patient Age",
          "SD Patient Age",
          "Proportion Female (F)",
          "SD Proportion Female",
          "Mean Label Size",
          "SD Label Size"};
}

std::vector<FoldSummaryRow> fold_summary(const FoldPlan& plan, std::span<const StudyRecord> records) {
  std::map<std::string, const StudyRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  std::vector<std::vector<const StudyRecord*>> members(plan.k);
  for (const auto& a : plan.assignments) {
    if (a.is_control) continue;
    const auto it = by_id.find(a.id);
    if (it == by_id.end()) throw std::invalid_argument("fold_summary: missing record for study " + a.id);
    if (a.fold < 0 || static_cast<std::size_t>(a.fold) >= plan.k)
      throw std::invalid_argument("fold_summary: fold index out of range for study " + a.id);
    members[static_cast<std::size_t>(a.fold)].push_back(it->second);
  }
  std::vector<FoldSummaryRow> out;
  for (std::size_t f = 0; f < plan.k; ++f) {
    FoldSummaryRow row;
    row.fold = static_cast<int>(f);
    row.n = members[f].size();
    if (row.n == 0) {
      out.push_back(row);
      continue;
    }
    std::vector<double> age, female, label;
    for (const auto* r : members[f]) {
      age.push_back(r->age);
      female.push_back(r->sex == Sex::female ? 1.0 : 0.0);
      label.push_back(r->lesion_volume);
    }
    row.mean_age = stats::mean(age);
    row.prop_female = stats::mean(female);
    row.mean_label = stats::mean(label);
    if (row.n >= 2) {
      row.sd_age = stats::sample_sd(age);
      row.sd_female = stats::sample_sd(female);
      row.sd_label = stats::sample_sd(label);
    }
    out.push_back(row);
  }
  return out;
}

std::vector<CvSummary> aggregate_cv(std::span<const MetricRow> rows) {
  std::set<std::pair<std::string, std::string>> seen;
  std::map<std::string, std::vector<const MetricRow*>> by_model;
  for (const auto& r : rows) {
    if (!seen.insert({r.study_id, r.model_id}).second)
      throw std::invalid_argument("aggregate_cv: study " + r.study_id + " appears twice for model " + r.model_id);
    by_model[r.model_id].push_back(&r);
  }
  std::vector<CvSummary> out;
  for (const auto& [model, list] : by_model) {
    CvSummary s;
    s.model_id = model;
    s.n = list.size();
    double dice = 0.0, hd = 0.0;
    std::size_t n_hd = 0;
    std::map<int, std::vector<const MetricRow*>> by_fold;
    for (const auto* r : list) {
      dice += r->dice;
      if (r->hd95) {
        hd += *r->hd95;
        ++n_hd;
      }
      by_fold[r->fold].push_back(r);
    }
    s.mean_dice = dice / static_cast<double>(s.n);
    s.hd95_excluded = s.n - n_hd;
    if (n_hd > 0) s.mean_hd95 = hd / static_cast<double>(n_hd);
    for (const auto& [fold, frows] : by_fold) {
      FoldMeans fm;
      fm.fold = fold;
      fm.n = frows.size();
      double fd = 0.0, fh = 0.0;
      std::size_t fn = 0;
      for (const auto* r : frows) {
        fd += r->dice;
        if (r->hd95) {
          fh += *r->hd95;
          ++fn;
        }
      }
      fm.mean_dice = fd / static_cast<double>(fm.n);
      if (fn > 0) fm.mean_hd95 = fh / static_cast<double>(fn);
      s.folds.push_back(fm);
    }
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::ordered_json to_json(const FoldPlan& plan) {
  nlohmann::ordered_json j;
  j["k"] = plan.k;
  j["seed"] = plan.seed;
  j["n_perm"] = plan.n_perm;
  auto& a = j["assignments"] = nlohmann::ordered_json::array();
  for (const auto& x : plan.assignments) a.push_back({{"id", x.id}, {"fold", x.fold}, {"is_control", x.is_control}});
  const auto& d = plan.diagnostics;
  auto& dj = j["diagnostics"];
  dj["kw_h"] = d.kw_h;
  dj["kw_p"] = d.kw_p;
  dj["mean_volume_variance"] = d.mean_var;
  dj["sd_volume_variance"] = d.sd_var;
  dj["pool_median_kw_p"] = d.pool_median_p;
  dj["pool_median_mean_volume_variance"] = d.pool_median_mean_var;
  dj["pool_median_sd_volume_variance"] = d.pool_median_sd_var;
  dj["top_pool_size"] = d.top_pool_size;
  dj["selected_candidate"] = d.selected_index;
  dj["selection_rule"] = d.selection_rule;
  dj["fold_sizes"] = d.fold_sizes;
  dj["fold_mean_volume"] = d.fold_mean_volume;
  dj["fold_sd_volume"] = d.fold_sd_volume;
  auto& pc = dj["phenotype_counts"] = nlohmann::ordered_json::object();
  for (const auto& [label, counts] : d.phenotype_counts) pc[label] = counts;
  return j;
}

FoldPlan plan_from_json(const nlohmann::json& j) {
  FoldPlan plan;
  plan.k = j.at("k").get<std::size_t>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  plan.n_perm = j.at("n_perm").get<std::size_t>();
  for (const auto& a : j.at("assignments")) {
    plan.assignments.push_back({a.at("id").get<std::string>(), a.at("fold").get<int>(), a.value("is_control", false)});
  }
  if (j.contains("diagnostics")) {
    const auto& dj = j["diagnostics"];
    auto& d = plan.diagnostics;
    d.kw_h = dj.value("kw_h", 0.0);
    d.kw_p = dj.value("kw_p", 1.0);
    d.mean_var = dj.value("mean_volume_variance", 0.0);
    d.sd_var = dj.value("sd_volume_variance", 0.0);
    d.pool_median_p = dj.value("pool_median_kw_p", 0.0);
    d.selection_rule = dj.value("selection_rule", std::string());
  }
  return plan;
}

}  // namespace lesioncal
