#include "lesioncal/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "lesioncal/nifti.hpp"
#include "lesioncal/parallel.hpp"
#include "lesioncal/random.hpp"

namespace lesioncal::synth {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 centre(const Dims& d) {
  return {(static_cast<double>(d.nx) - 1.0) / 2.0, (static_cast<double>(d.ny) - 1.0) / 2.0,
          (static_cast<double>(d.nz) - 1.0) / 2.0};
}

Vec3 semi_axes(const Dims& d) {
  return {0.42 * static_cast<double>(d.nx), 0.42 * static_cast<double>(d.ny), 0.42 * static_cast<double>(d.nz)};
}

double ellipsoid_radius(const Vec3& p, const Vec3& c, const Vec3& a) {
  double r2 = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double u = (p[i] - c[i]) / a[i];
    r2 += u * u;
  }
  return std::sqrt(r2);
}

// Brain weight: 1 inside, linear ramp about 1.5 voxels wide at the edge.
double brain_weight(const Vec3& p, const Dims& d) {
  const Vec3 a = semi_axes(d);
  const double mean_axis = (a[0] + a[1] + a[2]) / 3.0;
  const double r = ellipsoid_radius(p, centre(d), a);
  return std::clamp((1.0 - r) * mean_axis / 1.5 + 0.5, 0.0, 1.0);
}

Vec3 point(const GridVolume& v, std::size_t i) {
  const Index3 c = v.coords(i);
  return {static_cast<double>(c[0]), static_cast<double>(c[1]), static_cast<double>(c[2])};
}

double min_dim(const Dims& d) { return static_cast<double>(std::min({d.nx, d.ny, d.nz})); }

Vec3 archetype_centre(const PhantomSpec& spec, std::size_t k) {
  const Vec3 c = centre(spec.dims);
  const Vec3 a = semi_axes(spec.dims);
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.n_archetypes) +
                       std::numbers::pi / 4.0;
  const double dz = (k % 2 == 0 ? 0.12 : -0.12) * a[2];
  return {c[0] + 0.55 * a[0] * std::cos(angle), c[1] + 0.55 * a[1] * std::sin(angle), c[2] + dz};
}

Vec3 artefact_centre(const PhantomSpec& spec) {
  const Vec3 c = centre(spec.dims);
  const Vec3 a = semi_axes(spec.dims);
  return {c[0], c[1] + 0.65 * a[1], c[2] - 0.5 * a[2]};
}

double artefact_radius(const PhantomSpec& spec) { return std::max(1.5, min_dim(spec.dims) / 20.0); }

// Sum of three low-frequency plane waves scaled to [-amplitude, amplitude].
struct Texture {
  std::array<Vec3, 3> k{};
  std::array<double, 3> phase{};
  double amplitude = 0.0;

  Texture(const PhantomSpec& spec, Rng& rng) : amplitude(spec.texture_amplitude) {
    for (std::size_t w = 0; w < 3; ++w) {
      for (std::size_t ax = 0; ax < 3; ++ax) {
        const double n = static_cast<double>(spec.dims[ax]);
        k[w][ax] = 2.0 * std::numbers::pi * rng.uniform(-2.0, 2.0) / n;
      }
      phase[w] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
  }

  double operator()(const Vec3& p) const {
    double s = 0.0;
    for (std::size_t w = 0; w < 3; ++w) s += std::cos(k[w][0] * p[0] + k[w][1] * p[1] + k[w][2] * p[2] + phase[w]);
    return amplitude * s / 3.0;
  }
};

double sample_age(Rng& rng) { return std::clamp(67.0 + 15.0 * rng.normal(), 18.0, 100.0); }

}  // namespace

void PhantomSpec::validate() const {
  if (dims.count() == 0) throw std::invalid_argument("phantom: empty grid");
  if (dims.count() > 512u * 512u * 512u) throw std::invalid_argument("phantom: grid too large");
  if (min_dim(dims) < 8) throw std::invalid_argument("phantom: each dimension must be >= 8");
  if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0)) throw std::invalid_argument("phantom: spacing must be > 0");
  for (double v : {background, lesion, artefact})
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("phantom: intensities must lie in (0, 1)");
  if (!(texture_amplitude >= 0.0 && texture_amplitude < 0.5 * (lesion - artefact)))
    throw std::invalid_argument("phantom: texture amplitude must be below half the lesion-artefact gap");
  if (!(lesion > artefact && lesion > background)) throw std::invalid_argument("phantom: lesion must be brightest");
  if (!(artefact_probability >= 0.0 && artefact_probability <= 1.0))
    throw std::invalid_argument("phantom: artefact probability must lie in [0, 1]");
  if (n_archetypes == 0) throw std::invalid_argument("phantom: need at least one archetype");
  if (!(radius_min > 0.0 && radius_min <= radius_median && radius_median <= radius_max))
    throw std::invalid_argument("phantom: need 0 < radius_min <= radius_median <= radius_max");
  if (!(radius_log_sd >= 0.0)) throw std::invalid_argument("phantom: radius_log_sd must be >= 0");
}

ArchetypeAtlas make_archetype_atlas(const PhantomSpec& spec) {
  spec.validate();
  const double sigma = min_dim(spec.dims) / 12.0;
  ArchetypeAtlas atlas;
  for (std::size_t k = 0; k < spec.n_archetypes; ++k) {
    const Vec3 c = archetype_centre(spec, k);
    GridVolume map(spec.dims, spec.spacing);
    for (std::size_t i = 0; i < map.size(); ++i) {
      const Vec3 p = point(map, i);
      double r2 = 0.0;
      for (int a = 0; a < 3; ++a) r2 += (p[a] - c[a]) * (p[a] - c[a]);
      map[i] = std::exp(-r2 / (2.0 * sigma * sigma)) * (brain_weight(p, spec.dims) > 0.0 ? 1.0 : 0.0);
    }
    atlas.maps.push_back(std::move(map));
  }
  return atlas;
}

BinaryMask brain_mask(const PhantomSpec& spec) {
  GridVolume m(spec.dims, spec.spacing);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = brain_weight(point(m, i), spec.dims) >= 1.0 ? 1.0 : 0.0;
  return BinaryMask(std::move(m));
}

BinaryMask artefact_region(const PhantomSpec& spec, double radius_scale, const std::array<double, 3>& offset) {
  Vec3 c = artefact_centre(spec);
  for (int a = 0; a < 3; ++a) c[a] += offset[a];
  const double r = artefact_radius(spec) * radius_scale;
  GridVolume m(spec.dims, spec.spacing);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Vec3 p = point(m, i);
    double r2 = 0.0;
    for (int a = 0; a < 3; ++a) r2 += (p[a] - c[a]) * (p[a] - c[a]);
    m[i] = r2 <= r * r ? 1.0 : 0.0;
  }
  return BinaryMask(std::move(m));
}

Phantom make_phantom(const PhantomSpec& spec, const ArchetypeAtlas& atlas, bool with_lesion,
                     std::size_t archetype_index, std::uint64_t seed, const std::string& id) {
  spec.validate();
  if (with_lesion && archetype_index >= atlas.maps.size())
    throw std::invalid_argument("phantom: archetype index " + std::to_string(archetype_index) + " out of range");

  Rng rng(seed);
  const Texture texture(spec, rng);
  Phantom out;
  out.record.id = id;
  out.record.age = sample_age(rng);
  out.record.sex = rng.uniform() < 0.5 ? Sex::female : Sex::male;
  out.record.is_control = !with_lesion;
  out.has_artefact = !with_lesion && rng.uniform() < spec.artefact_probability;
  double artefact_scale = 1.0;
  std::array<double, 3> artefact_offset{};
  if (out.has_artefact) {
    // Per-study size and position jitter so artefact burden varies.
    artefact_scale = std::clamp(std::exp(0.25 * rng.normal()), 0.6, 1.6);
    for (double& o : artefact_offset) o = rng.uniform(-1.0, 1.0);
  }

  GridVolume image(spec.dims, spec.spacing);
  GridVolume lesion(spec.dims, spec.spacing);

  if (with_lesion) {
    // Centre drawn from the archetype core (map >= 0.5) inside the brain.
    const GridVolume& map = atlas.maps[archetype_index];
    std::vector<std::size_t> core;
    for (std::size_t i = 0; i < map.size(); ++i)
      if (map[i] >= 0.5 && brain_weight(point(map, i), spec.dims) >= 1.0) core.push_back(i);
    if (core.empty()) throw std::invalid_argument("phantom: archetype core lies outside the brain");
    const Vec3 c = point(map, core[rng.below(core.size())]);
    const double base = std::clamp(spec.radius_median * std::exp(spec.radius_log_sd * rng.normal()), spec.radius_min,
                                   spec.radius_max);
    Vec3 r{};
    for (double& ri : r) ri = std::max(1.0, base * std::exp(0.15 * rng.normal()));

    // Thresholded anisotropic Gaussian: the level set q <= 1, kept inside the brain.
    for (std::size_t i = 0; i < lesion.size(); ++i) {
      const Vec3 p = point(lesion, i);
      double q = 0.0;
      for (int a = 0; a < 3; ++a) q += (p[a] - c[a]) * (p[a] - c[a]) / (r[a] * r[a]);
      if (q <= 1.0 && brain_weight(p, spec.dims) >= 1.0) lesion[i] = 1.0;
    }
  }

  const BinaryMask artefact =
      out.has_artefact ? artefact_region(spec, artefact_scale, artefact_offset) : BinaryMask::empty_like(image);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const Vec3 p = point(image, i);
    const double w = brain_weight(p, spec.dims);
    if (w <= 0.0) continue;
    const double t = texture(p);
    double v = spec.background;
    if (artefact.contains(i)) v = spec.artefact;
    if (lesion[i] != 0.0) v = spec.lesion;
    image[i] = w * (v + t);
  }

  out.image = std::move(image);
  out.mask = BinaryMask(std::move(lesion));
  if (with_lesion) {
    out.record.lesion_volume = static_cast<double>(out.mask.count());
    out.record.phenotype = assign_phenotype(out.mask, atlas);
  }
  return out;
}

Phantom make_phantom(const PhantomSpec& spec, bool with_lesion, std::size_t archetype_index, std::uint64_t seed) {
  return make_phantom(spec, make_archetype_atlas(spec), with_lesion, archetype_index, seed);
}

std::string lesion_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "lesion_%04zu", i);
  return buf;
}

std::string control_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "control_%04zu", i);
  return buf;
}

std::vector<Phantom> make_phantoms(std::size_t n_pos, std::size_t n_ctrl, const PhantomSpec& spec,
                                   std::size_t workers) {
  spec.validate();
  const ArchetypeAtlas atlas = make_archetype_atlas(spec);
  std::vector<Phantom> out(n_pos + n_ctrl);
  parallel_for(out.size(), workers, [&](std::size_t i) {
    const bool lesion = i < n_pos;
    const std::string id = lesion ? lesion_id(i) : control_id(i - n_pos);
    out[i] = make_phantom(spec, atlas, lesion, lesion ? i % spec.n_archetypes : 0, study_seed(spec.seed, id), id);
  });
  return out;
}

std::vector<StudyRecord> make_dataset(std::size_t n_pos, std::size_t n_ctrl, const PhantomSpec& spec,
                                      const std::filesystem::path& out_dir, std::size_t workers) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");
  if (n_pos > 0) fs::create_directories(out_dir / "labels");

  const std::vector<Phantom> phantoms = make_phantoms(n_pos, n_ctrl, spec, workers);
  std::vector<StudyRecord> records(phantoms.size());
  parallel_for(phantoms.size(), workers, [&](std::size_t i) {
    const Phantom& ph = phantoms[i];
    StudyRecord rec = ph.record;
    rec.image_path = "images/" + rec.id + ".nii.gz";
    nifti::write_volume(ph.image, out_dir / rec.image_path, nifti::DataType::float32);
    if (!rec.is_control) {
      rec.label_path = "labels/" + rec.id + ".nii.gz";
      nifti::write_volume(ph.mask.volume(), out_dir / *rec.label_path, nifti::DataType::uint8);
    }
    records[i] = std::move(rec);
  });
  write_manifest(records, out_dir / "manifest.json");
  return records;
}

nlohmann::ordered_json manifest_json(const std::vector<StudyRecord>& records) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["image_path"] = r.image_path;
    if (r.label_path) j["label_path"] = *r.label_path;
    j["volume"] = r.lesion_volume;
    j["age"] = r.age;
    j["sex"] = to_string(r.sex);
    if (r.phenotype)
      j["phenotype"] = *r.phenotype;
    else
      j["phenotype"] = nullptr;
    j["is_control"] = r.is_control;
    arr.push_back(std::move(j));
  }
  return arr;
}

void write_manifest(const std::vector<StudyRecord>& records, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << manifest_json(records).dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<StudyRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("manifest " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw std::invalid_argument("manifest " + path.string() + ": expected an array");

  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return (fp.is_absolute() ? fp : base / fp).lexically_normal().string();
  };
  static const std::array<const char*, 8> known{"id", "image_path", "label_path", "volume",
                                                "age", "sex", "phenotype", "is_control"};

  std::vector<StudyRecord> out;
  for (const auto& e : j) {
    if (!e.is_object()) throw std::invalid_argument("manifest entries must be objects");
    for (const auto& [key, _] : e.items())
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw std::invalid_argument("manifest: unknown key '" + key + "'");
    StudyRecord r;
    try {
      r.id = e.at("id").get<std::string>();
      r.image_path = resolve(e.at("image_path").get<std::string>());
      if (e.contains("label_path") && !e["label_path"].is_null())
        r.label_path = resolve(e["label_path"].get<std::string>());
      r.lesion_volume = e.value("volume", 0.0);
      r.age = e.value("age", 0.0);
      r.sex = parse_sex(e.value("sex", std::string("unknown")));
      if (e.contains("phenotype") && !e["phenotype"].is_null()) r.phenotype = e["phenotype"].get<std::size_t>();
      r.is_control = e.value("is_control", false);
    } catch (const nlohmann::json::exception& ex) {
      throw std::invalid_argument("manifest entry " + r.id + ": " + ex.what());
    }
    r.validate();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace lesioncal::synth
