#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "lesioncal/cli.hpp"
#include "lesioncal/nifti.hpp"
#include "lesioncal/random.hpp"

namespace lesioncal::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Typed, key-checked view of one configuration object.
class Section {
 public:
  Section(const json& j, std::string path, std::initializer_list<const char*> allowed, const fs::path& base)
      : j_(j), path_(std::move(path)), base_(base) {
    if (!j.is_object()) throw ConfigError("config key '" + path_ + "': expected an object");
    for (const auto& [key, _] : j.items())
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
        throw ConfigError("unknown config key '" + name(key) + "'");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const json& at(const std::string& key) const { return j_.at(key); }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key, double def) const {
    if (!has(key)) return def;
    if (!j_.at(key).is_number()) fail(key, "expected a number");
    return j_.at(key).get<double>();
  }
  std::size_t count(const std::string& key, std::size_t def) const {
    if (!has(key)) return def;
    if (!j_.at(key).is_number_integer() || j_.at(key).get<long long>() < 0) fail(key, "expected a non-negative integer");
    return j_.at(key).get<std::size_t>();
  }
  bool flag(const std::string& key, bool def) const {
    if (!has(key)) return def;
    if (!j_.at(key).is_boolean()) fail(key, "expected true or false");
    return j_.at(key).get<bool>();
  }
  std::string text(const std::string& key, const std::string& def) const {
    if (!has(key)) return def;
    if (!j_.at(key).is_string()) fail(key, "expected a string");
    return j_.at(key).get<std::string>();
  }
  std::uint64_t seed(const std::string& key = "seed") const {
    if (!has(key)) fail(key, "missing; every seed must be given explicitly");
    if (!j_.at(key).is_number_integer() || (j_.at(key).is_number_integer() && !j_.at(key).is_number_unsigned() &&
                                              j_.at(key).get<long long>() < 0))
      fail(key, "expected a non-negative integer seed");
    return j_.at(key).get<std::uint64_t>();
  }
  fs::path file(const std::string& key) const {
    const fs::path p(text(key, ""));
    if (p.empty()) fail(key, "expected a path");
    return resolve(p);
  }
  fs::path resolve(const fs::path& p) const { return (p.is_absolute() ? p : base_ / p).lexically_normal(); }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config key '" + name(key) + "': " + what);
  }

 private:
  const json& j_;
  std::string path_;
  fs::path base_;
};

template <class Fn>
void checked(const std::string& where, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config section '" + where + "': " + e.what());
  }
}

std::array<double, 3> triple(const Section& s, const std::string& key, std::array<double, 3> def) {
  if (!s.has(key)) return def;
  const json& v = s.at(key);
  if (!v.is_array() || v.size() != 3) s.fail(key, "expected three numbers");
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!v[i].is_number()) s.fail(key, "expected three numbers");
    out[i] = v[i].get<double>();
  }
  return out;
}

SynthSection parse_synth(const json& j, const fs::path& base) {
  const Section s(j, "synth",
                  {"n_lesion", "n_control", "dims", "spacing", "background", "lesion", "artefact", "texture_amplitude",
                   "artefact_probability", "archetypes", "radius_median", "radius_log_sd", "radius_min", "radius_max",
                   "seed"},
                  base);
  SynthSection out;
  auto& p = out.spec;
  out.n_lesion = s.count("n_lesion", 0);
  out.n_control = s.count("n_control", 0);
  const auto d = triple(s, "dims", {48, 48, 48});
  for (double v : d)
    if (v < 1 || v != std::floor(v)) s.fail("dims", "expected positive integers");
  p.dims = {static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[1]), static_cast<std::size_t>(d[2])};
  const auto sp = triple(s, "spacing", {2, 2, 2});
  p.spacing = {sp[0], sp[1], sp[2]};
  p.background = s.number("background", p.background);
  p.lesion = s.number("lesion", p.lesion);
  p.artefact = s.number("artefact", p.artefact);
  p.texture_amplitude = s.number("texture_amplitude", p.texture_amplitude);
  p.artefact_probability = s.number("artefact_probability", p.artefact_probability);
  p.n_archetypes = s.count("archetypes", p.n_archetypes);
  p.radius_median = s.number("radius_median", p.radius_median);
  p.radius_log_sd = s.number("radius_log_sd", p.radius_log_sd);
  p.radius_min = s.number("radius_min", p.radius_min);
  p.radius_max = s.number("radius_max", p.radius_max);
  p.seed = s.seed();
  checked("synth", [&] { p.validate(); });
  return out;
}

FoldsSection parse_folds(const json& j, const fs::path& base) {
  const Section s(j, "folds", {"k", "n_perm", "seed", "atlas", "threshold"}, base);
  FoldsSection out;
  out.k = s.count("k", out.k);
  out.n_perm = s.count("n_perm", out.n_perm);
  out.seed = s.seed();
  out.threshold = s.number("threshold", out.threshold);
  if (out.k < 2) s.fail("k", "need at least 2 folds");
  if (out.n_perm < 1) s.fail("n_perm", "need at least one candidate");
  if (!(out.threshold > 0.0 && out.threshold < 1.0)) s.fail("threshold", "must lie in (0, 1)");
  if (s.has("atlas")) {
    const json& a = s.at("atlas");
    if (!a.is_array() || a.empty()) s.fail("atlas", "expected a non-empty list of NIfTI paths");
    for (const auto& e : a) {
      if (!e.is_string()) s.fail("atlas", "expected a non-empty list of NIfTI paths");
      out.atlas.push_back(s.resolve(e.get<std::string>()));
    }
  }
  return out;
}

MetricParams parse_metrics(const json& j, const fs::path& base) {
  const Section s(j, "metrics", {"gamma", "epsilon", "theta", "ta_threshold", "ta_weight", "patience"}, base);
  MetricParams m;
  m.focal_gamma = s.number("gamma", m.focal_gamma);
  m.dice_smooth = s.number("epsilon", m.dice_smooth);
  m.threshold = s.number("theta", m.threshold);
  m.ta_threshold = s.number("ta_threshold", m.ta_threshold);
  m.ta_weight = s.number("ta_weight", m.ta_weight);
  m.patience = s.count("patience", m.patience);
  checked("metrics", [&] { m.validate(); });
  return m;
}

AnatomySection parse_anatomy(const json& j, const fs::path& base) {
  const Section s(j, "anatomy", {"score", "model", "fwhm", "n_perm", "alpha", "mask_m", "covariate", "seed"}, base);
  AnatomySection out;
  auto& g = out.glm;
  g.score_name = s.text("score", g.score_name);
  if (g.score_name != "dice" && g.score_name != "hd95") s.fail("score", "expected \"dice\" or \"hd95\"");
  out.model = s.text("model", "");
  g.fwhm_mm = s.number("fwhm", g.fwhm_mm);
  g.n_perm = s.count("n_perm", g.n_perm);
  g.alpha_fwe = s.number("alpha", g.alpha_fwe);
  g.mask_m = s.count("mask_m", g.mask_m);
  g.include_volume_covariate = s.flag("covariate", g.include_volume_covariate);
  g.seed = s.seed();
  checked("anatomy", [&] { g.validate(); });
  return out;
}

MorphologySection parse_morphology(const json& j, const fs::path& base) {
  const Section s(j, "morphology",
                  {"k", "d_min", "spread", "epochs", "learning_rate", "negative_sample_rate", "downsample", "seed"}, base);
  MorphologySection out;
  auto& e = out.embedding;
  e.n_neighbors = s.count("k", e.n_neighbors);
  e.min_dist = s.number("d_min", e.min_dist);
  e.spread = s.number("spread", e.spread);
  e.n_epochs = s.count("epochs", e.n_epochs);
  e.learning_rate = s.number("learning_rate", e.learning_rate);
  e.negative_sample_rate = s.count("negative_sample_rate", e.negative_sample_rate);
  e.seed = s.seed();
  out.downsample = s.count("downsample", out.downsample);
  if (out.downsample < 1) s.fail("downsample", "must be >= 1");
  checked("morphology", [&] { e.validate(); });
  return out;
}

NoiseSchedule parse_component(const json& j, const std::string& path, const fs::path& base) {
  const Section s(j, path, {"kind", "max", "steps"}, base);
  const std::string kind = s.text("kind", "");
  const auto k = parse_noise_kind(kind);
  if (!k) s.fail("kind", "unknown noise kind '" + kind + "'");
  return schedule(*k, s.number("max", default_max_magnitude(*k)), s.count("steps", 12));
}

NoiseSection parse_noise(const json& j, const fs::path& base) {
  const Section s(j, "noise", {"schedules", "seed", "pairing"}, base);
  NoiseSection out;
  out.seed = s.seed();
  const std::string pairing = s.text("pairing", "increment_means");
  if (pairing == "increment_means")
    out.pairing = Pairing::increment_means;
  else if (pairing == "per_image")
    out.pairing = Pairing::per_image;
  else
    s.fail("pairing", "expected \"increment_means\" or \"per_image\"");
  if (!s.has("schedules") || !s.at("schedules").is_array() || s.at("schedules").empty())
    s.fail("schedules", "expected a non-empty list");
  std::set<std::string> names;
  const json& list = s.at("schedules");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string path = "noise.schedules[" + std::to_string(i) + "]";
    SweepArm arm;
    if (list[i].is_object() && list[i].contains("kind")) {
      arm.components.push_back(parse_component(list[i], path, base));
      arm.name = std::string(to_string(arm.components.front().kind));
    } else {
      const Section a(list[i], path, {"name", "components"}, base);
      arm.name = a.text("name", "");
      if (!a.has("components") || !a.at("components").is_array()) a.fail("components", "expected a list");
      const json& comps = a.at("components");
      for (std::size_t c = 0; c < comps.size(); ++c)
        arm.components.push_back(parse_component(comps[c], path + ".components[" + std::to_string(c) + "]", base));
    }
    if (!names.insert(arm.name).second) throw ConfigError("config key '" + path + "': duplicate schedule name");
    checked(path, [&] { arm.validate(); });
    out.arms.push_back(std::move(arm));
  }
  return out;
}

SegmenterHandle parse_model(const std::string& name, const json& j, const fs::path& base) {
  const std::string path = "harness.models." + name;
  const Section s(j, path, {"builtin", "command", "timeout", "workdir", "predictions", "pattern"}, base);
  const int kinds = s.has("builtin") + s.has("command") + s.has("predictions");
  if (kinds != 1) throw ConfigError("config key '" + path + "': give exactly one of builtin, command, predictions");
  SegmenterHandle h;
  h.name = name;
  if (s.has("builtin")) {
    const Section b(s.at("builtin"), path + ".builtin", {"theta", "tau", "region", "region_theta"}, base);
    BuiltinSegmenter seg;
    seg.theta = b.number("theta", seg.theta);
    seg.tau = b.number("tau", seg.tau);
    seg.region_theta = b.number("region_theta", seg.theta);
    if (b.has("region")) {
      const fs::path p = b.file("region");
      checked(path + ".builtin", [&] { seg.region = BinaryMask(nifti::read_volume(p).volume); });
    }
    h.impl = std::move(seg);
  } else if (s.has("command")) {
    ExternalSegmenter ext;
    ext.command = s.text("command", "");
    ext.timeout_s = s.number("timeout", ext.timeout_s);
    if (s.has("workdir")) ext.workdir = s.file("workdir");
    h.impl = std::move(ext);
  } else {
    PredictionSet set;
    set.dir = s.file("predictions");
    set.pattern = s.text("pattern", set.pattern);
    h.impl = std::move(set);
  }
  checked(path, [&] { h.validate(); });
  return h;
}

HarnessSection parse_harness(const json& j, const fs::path& base) {
  const Section s(j, "harness", {"models", "n_boot", "size", "seed", "workers", "max_processes"}, base);
  HarnessSection out;
  out.n_boot = s.count("n_boot", out.n_boot);
  out.size = s.count("size", out.size);
  out.seed = s.seed();
  out.workers = s.count("workers", out.workers);
  out.max_processes = s.count("max_processes", out.max_processes);
  if (out.n_boot == 0) s.fail("n_boot", "must be > 0");
  if (out.size == 0) s.fail("size", "must be > 0");
  if (out.max_processes == 0) s.fail("max_processes", "must be > 0");
  if (s.has("models")) {
    if (!s.at("models").is_object()) s.fail("models", "expected an object of named models");
    for (const auto& [name, spec] : s.at("models").items()) out.models.push_back(parse_model(name, spec, base));
  }
  return out;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

RunConfig parse_config(const json& j, const fs::path& base_dir) {
  const Section top(j, "",
                    {"data", "synth", "folds", "metrics", "anatomy", "morphology", "noise", "harness", "output"},
                    base_dir);
  RunConfig cfg;
  cfg.raw = j;
  cfg.hash = hex64(stable_hash(j.dump()));
  if (top.has("data")) {
    const Section d(j.at("data"), "data", {"manifest", "foldplan", "metric_rows"}, base_dir);
    if (d.has("manifest")) cfg.data.manifest = d.file("manifest");
    if (d.has("foldplan")) cfg.data.foldplan = d.file("foldplan");
    if (d.has("metric_rows")) cfg.data.metric_rows = d.file("metric_rows");
  }
  if (top.has("synth")) cfg.synth = parse_synth(j.at("synth"), base_dir);
  if (top.has("folds")) cfg.folds = parse_folds(j.at("folds"), base_dir);
  if (top.has("metrics")) cfg.metrics = parse_metrics(j.at("metrics"), base_dir);
  if (top.has("anatomy")) cfg.anatomy = parse_anatomy(j.at("anatomy"), base_dir);
  if (top.has("morphology")) cfg.morphology = parse_morphology(j.at("morphology"), base_dir);
  if (top.has("noise")) cfg.noise = parse_noise(j.at("noise"), base_dir);
  if (top.has("harness")) cfg.harness = parse_harness(j.at("harness"), base_dir);
  if (top.has("output")) cfg.output = top.file("output");
  return cfg;
}

void apply_overrides(json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "': expected key.path=value");
    const std::string key = o.substr(0, eq);
    const std::string text = o.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    if (value.is_object() || value.is_array()) throw ConfigError("override '" + key + "': only scalar values");

    json* node = &j;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) path.push_back(part);
    for (std::size_t i = 0; i < path.size(); ++i) {
      if (path[i].empty()) throw ConfigError("override '" + key + "': empty path component");
      if (!node->is_object()) throw ConfigError("override '" + key + "': '" + path[i] + "' is not inside an object");
      if (i + 1 == path.size()) {
        if (node->contains(path[i]) && ((*node)[path[i]].is_object() || (*node)[path[i]].is_array()))
          throw ConfigError("override '" + key + "': target is not a scalar");
        (*node)[path[i]] = value;
      } else {
        node = &(*node)[path[i]];
        if (node->is_null()) *node = json::object();
      }
    }
  }
}

RunConfig load_config(const fs::path& file, const std::vector<std::string>& overrides) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file " + file.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
  }
  apply_overrides(j, overrides);
  RunConfig cfg = parse_config(j, fs::absolute(file).parent_path());
  cfg.source = fs::absolute(file).lexically_normal();
  return cfg;
}

}  // namespace lesioncal::cli
