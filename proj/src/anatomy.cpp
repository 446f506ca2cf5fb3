#include "lesioncal/anatomy.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "lesioncal/parallel.hpp"
#include "lesioncal/preprocess.hpp"
#include "lesioncal/random.hpp"
#include "lesioncal/special_functions.hpp"

namespace lesioncal {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Relative residual variance below which a voxel counts as a perfect fit.
constexpr double kDegenerateTol = 1e-20;

struct Design {
  MatrixXd x;       ///< n x p, columns [1, score(, volume)]
  MatrixXd q;       ///< orthonormal basis of col(x)
  VectorXd a;       ///< score row of (X'X)^-1 X'
  double c_ss = 0;  ///< (X'X)^-1 at the score position
  MatrixXd qz;      ///< orthonormal basis of the nuisance columns
  double df = 0;
};

MatrixXd orthonormal_basis(const MatrixXd& m) {
  Eigen::HouseholderQR<MatrixXd> qr(m);
  return qr.householderQ() * MatrixXd::Identity(m.rows(), m.cols());
}

Design make_design(std::span<const double> scores, std::span<const double> covariate, const GlmSpec& spec,
                   std::size_t n) {
  if (scores.size() != n) throw std::invalid_argument("glm: score count does not match subject count");
  if (spec.include_volume_covariate && covariate.size() != n)
    throw std::invalid_argument("glm: covariate count does not match subject count");
  const Eigen::Index p = spec.include_volume_covariate ? 3 : 2;
  if (static_cast<Eigen::Index>(n) <= p) throw std::invalid_argument("glm: need more subjects than regressors");
  Design d;
  d.x.resize(static_cast<Eigen::Index>(n), p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    d.x(r, 0) = 1.0;
    d.x(r, 1) = scores[i];
    if (p == 3) d.x(r, 2) = covariate[i];
  }
  // Rank check on column-standardised design so scale does not matter.
  MatrixXd scaled = d.x;
  for (Eigen::Index c = 0; c < p; ++c) {
    const double norm = scaled.col(c).norm();
    if (norm == 0.0) throw std::invalid_argument("glm: design column is identically zero");
    scaled.col(c) /= norm;
  }
  Eigen::JacobiSVD<MatrixXd> svd(scaled);
  const auto& sv = svd.singularValues();
  if (sv(p - 1) <= 1e-10 * sv(0))
    throw std::invalid_argument(p == 3 ? "glm: rank-deficient design (score or volume collinear with intercept)"
                                       : "glm: rank-deficient design (constant scores)");
  const MatrixXd xtx_inv = (d.x.transpose() * d.x).inverse();
  d.a = (xtx_inv * d.x.transpose()).row(1).transpose();
  d.c_ss = xtx_inv(1, 1);
  d.q = orthonormal_basis(d.x);
  MatrixXd z(d.x.rows(), p - 1);
  z.col(0) = d.x.col(0);
  if (p == 3) z.col(1) = d.x.col(2);
  d.qz = orthonormal_basis(z);
  d.df = static_cast<double>(n) - static_cast<double>(p);
  return d;
}

/// Subjects x tested-voxel matrix of densities plus the voxel indices.
struct VoxelData {
  std::vector<std::size_t> voxels;
  MatrixXd y;
};

VoxelData gather(const DensityStack& stack) {
  if (stack.densities.empty()) throw std::invalid_argument("glm: empty density stack");
  const GridVolume& ref = stack.densities.front();
  require_same_grid(ref, stack.analysis_mask.volume(), "glm analysis mask");
  for (const auto& v : stack.densities) require_same_grid(ref, v, "glm density stack");
  VoxelData out;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (stack.analysis_mask.contains(i)) out.voxels.push_back(i);
  }
  const auto n = static_cast<Eigen::Index>(stack.densities.size());
  out.y.resize(n, static_cast<Eigen::Index>(out.voxels.size()));
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto& v = stack.densities[static_cast<std::size_t>(s)];
    for (std::size_t c = 0; c < out.voxels.size(); ++c) out.y(s, static_cast<Eigen::Index>(c)) = v[out.voxels[c]];
  }
  return out;
}

struct Fitted {
  TMap tmap;
  std::vector<std::size_t> tested;  ///< voxel indices with a defined t
  std::vector<Eigen::Index> columns;  ///< their columns in VoxelData::y
  MatrixXd residual_z;              ///< nuisance-model residuals, subjects x tested voxels
  VectorXd t_obs;
};

Fitted fit(const DensityStack& stack, std::span<const double> scores, std::span<const double> covariate,
           const GlmSpec& spec) {
  const auto data = gather(stack);
  const Design d = make_design(scores, covariate, spec, stack.subjects());
  const GridVolume& ref = stack.densities.front();

  const MatrixXd beta_all = d.a.transpose() * data.y;
  const MatrixXd resid = data.y - d.q * (d.q.transpose() * data.y);

  Fitted f;
  f.tmap.t = GridVolume(ref.dims(), ref.spacing(), 0.0);
  f.tmap.beta = GridVolume(ref.dims(), ref.spacing(), 0.0);
  f.tmap.se = GridVolume(ref.dims(), ref.spacing(), 0.0);
  f.tmap.p_parametric = GridVolume(ref.dims(), ref.spacing(), 1.0);
  GridVolume tested(ref.dims(), ref.spacing(), 0.0);
  GridVolume degenerate(ref.dims(), ref.spacing(), 0.0);
  f.tmap.df = d.df;

  std::vector<double> t_values;
  for (Eigen::Index c = 0; c < data.y.cols(); ++c) {
    const std::size_t v = data.voxels[static_cast<std::size_t>(c)];
    const double rss = resid.col(c).squaredNorm();
    const double scale = data.y.col(c).squaredNorm();
    f.tmap.beta[v] = beta_all(0, c);
    if (!(rss > kDegenerateTol * scale)) {
      degenerate[v] = 1.0;
      continue;
    }
    const double se = std::sqrt(rss / d.df * d.c_ss);
    const double t = beta_all(0, c) / se;
    f.tmap.se[v] = se;
    f.tmap.t[v] = t;
    f.tmap.p_parametric[v] = special::student_t_two_sided(t, d.df);
    tested[v] = 1.0;
    f.tested.push_back(v);
    f.columns.push_back(c);
    t_values.push_back(t);
  }
  f.tmap.tested = BinaryMask(std::move(tested));
  f.tmap.degenerate = BinaryMask(std::move(degenerate));

  MatrixXd y_tested(data.y.rows(), static_cast<Eigen::Index>(f.columns.size()));
  for (std::size_t c = 0; c < f.columns.size(); ++c) y_tested.col(static_cast<Eigen::Index>(c)) = data.y.col(f.columns[c]);
  f.residual_z = y_tested - d.qz * (d.qz.transpose() * y_tested);
  f.t_obs = Eigen::Map<VectorXd>(t_values.data(), static_cast<Eigen::Index>(t_values.size()));
  return f;
}

}  // namespace

void GlmSpec::validate() const {
  if (score_name != "dice" && score_name != "hd95") throw std::invalid_argument("glm: score must be dice or hd95");
  if (!(fwhm_mm >= 0.0)) throw std::invalid_argument("glm: fwhm must be >= 0");
  if (n_perm < 100) throw std::invalid_argument("glm: n_perm must be >= 100");
  if (!(alpha_fwe > 0.0 && alpha_fwe < 1.0)) throw std::invalid_argument("glm: alpha must lie in (0, 1)");
  if (mask_m < 1) throw std::invalid_argument("glm: mask_m must be >= 1");
}

GridVolume overlap_map(std::span<const BinaryMask> masks, bool normalize) {
  if (masks.empty()) throw std::invalid_argument("overlap_map: no masks");
  GridVolume out(masks.front().volume().dims(), masks.front().volume().spacing(), 0.0);
  for (const auto& m : masks) {
    require_same_grid(out, m.volume(), "overlap_map");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += m.volume()[i];
  }
  if (normalize) {
    const double n = static_cast<double>(masks.size());
    for (auto& x : out.data()) x /= n;
  }
  return out;
}

DensityStack density_stack(std::span<const BinaryMask> masks, const GlmSpec& spec, std::vector<std::string> ids) {
  if (masks.empty()) throw std::invalid_argument("density_stack: no masks");
  if (!ids.empty() && ids.size() != masks.size()) throw std::invalid_argument("density_stack: id count mismatch");
  if (!(spec.fwhm_mm >= 0.0)) throw std::invalid_argument("density_stack: fwhm must be >= 0");
  if (spec.mask_m < 1) throw std::invalid_argument("density_stack: mask_m must be >= 1");
  const GridVolume counts = overlap_map(masks);
  DensityStack s;
  s.fwhm_mm = spec.fwhm_mm;
  s.ids = std::move(ids);
  for (const auto& m : masks) s.densities.push_back(gaussian_smooth(m.volume(), spec.fwhm_mm));
  GridVolume analysis(counts.dims(), counts.spacing(), 0.0);
  for (std::size_t i = 0; i < counts.size(); ++i) analysis[i] = counts[i] >= static_cast<double>(spec.mask_m) ? 1.0 : 0.0;
  s.analysis_mask = BinaryMask(std::move(analysis));
  return s;
}

TMap fit_voxelwise_glm(const DensityStack& stack, std::span<const double> scores, std::span<const double> covariate,
                       const GlmSpec& spec) {
  return fit(stack, scores, covariate, spec).tmap;
}

FweResult permutation_fwe(const DensityStack& stack, std::span<const double> scores,
                          std::span<const double> covariate, const GlmSpec& spec) {
  spec.validate();
  Fitted f = fit(stack, scores, covariate, spec);
  const Design d = make_design(scores, covariate, spec, stack.subjects());
  const auto n = static_cast<std::size_t>(d.x.rows());
  const auto p = d.q.cols();
  const auto n_vox = static_cast<Eigen::Index>(f.tested.size());
  const VectorXd rz_norm = f.residual_z.colwise().squaredNorm().transpose();
  const VectorXd abs_obs = f.t_obs.cwiseAbs();

  // Permutations are processed in blocks: the permuted score row and basis
  // vectors are stacked so one matrix product serves the whole block.
  const std::size_t block = 64;
  const std::size_t n_blocks = (spec.n_perm + block - 1) / block;
  std::vector<double> null_max(spec.n_perm, 0.0);
  std::vector<std::vector<std::uint32_t>> exceed(n_blocks, std::vector<std::uint32_t>(f.tested.size(), 0));

  parallel_for(n_blocks, spec.workers, [&](std::size_t b) {
    const std::size_t first = b * block;
    const std::size_t count = std::min(block, spec.n_perm - first);
    const auto rows_per = 1 + p;
    MatrixXd w(static_cast<Eigen::Index>(count) * rows_per, static_cast<Eigen::Index>(n));
    std::vector<std::size_t> perm(n);
    for (std::size_t j = 0; j < count; ++j) {
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(derive_seed(spec.seed, first + j));
      rng.shuffle(perm);
      // Row i of the permuted residuals is residual row perm[i]; moving the
      // permutation onto the weights gives w[perm[i]] = a[i].
      const auto r0 = static_cast<Eigen::Index>(j) * rows_per;
      for (std::size_t i = 0; i < n; ++i) {
        const auto src = static_cast<Eigen::Index>(i);
        const auto dst = static_cast<Eigen::Index>(perm[i]);
        w(r0, dst) = d.a(src);
        for (Eigen::Index c = 0; c < p; ++c) w(r0 + 1 + c, dst) = d.q(src, c);
      }
    }
    const MatrixXd proj = w * f.residual_z;
    auto& ex = exceed[b];
    for (std::size_t j = 0; j < count; ++j) {
      const auto r0 = static_cast<Eigen::Index>(j) * rows_per;
      double mx = 0.0;
      for (Eigen::Index v = 0; v < n_vox; ++v) {
        double fitted = 0.0;
        for (Eigen::Index c = 0; c < p; ++c) fitted += proj(r0 + 1 + c, v) * proj(r0 + 1 + c, v);
        const double rss = rz_norm(v) - fitted;
        if (!(rss > kDegenerateTol * rz_norm(v))) continue;
        const double t = std::fabs(proj(r0, v) / std::sqrt(rss / d.df * d.c_ss));
        mx = std::max(mx, t);
        if (t >= abs_obs(v)) ++ex[static_cast<std::size_t>(v)];
      }
      null_max[first + j] = mx;
    }
  });

  FweResult out;
  const GridVolume& ref = f.tmap.t;
  out.corrected_p = GridVolume(ref.dims(), ref.spacing(), 1.0);
  out.uncorrected_p = GridVolume(ref.dims(), ref.spacing(), 1.0);
  std::vector<double> sorted = null_max;
  std::sort(sorted.begin(), sorted.end());
  const double denom = static_cast<double>(spec.n_perm) + 1.0;
  for (std::size_t k = 0; k < f.tested.size(); ++k) {
    const double t = abs_obs(static_cast<Eigen::Index>(k));
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    const auto at_least = static_cast<double>(sorted.size()) - static_cast<double>(below);
    out.corrected_p[f.tested[k]] = (1.0 + at_least) / denom;
    std::uint32_t own = 0;
    for (const auto& ex : exceed) own += ex[k];
    out.uncorrected_p[f.tested[k]] = (1.0 + own) / denom;
  }

  // Largest number of null exceedances that still gives corrected p < alpha.
  const double allowed = std::ceil(spec.alpha_fwe * denom) - 2.0;
  if (allowed < 0.0) {
    out.t_threshold = std::numeric_limits<double>::infinity();
  } else {
    const auto k = static_cast<std::size_t>(allowed);
    out.t_threshold = k < sorted.size() ? sorted[sorted.size() - 1 - k] : 0.0;
  }
  out.null_max = std::move(null_max);
  out.tmap = std::move(f.tmap);
  if (std::isfinite(out.t_threshold)) {
    out.clusters = clusters(out.tmap.t, out.t_threshold);
    for (auto& c : out.clusters) {
      const std::size_t peak = out.tmap.t.index(c.peak[0], c.peak[1], c.peak[2]);
      c.corrected_p = out.corrected_p[peak];
    }
  }
  return out;
}

std::vector<Cluster> clusters(const GridVolume& t, double threshold) {
  const Dims& d = t.dims();
  std::vector<int> label(t.size(), -1);
  std::vector<Cluster> out;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < t.size(); ++seed) {
    if (label[seed] >= 0 || !(std::fabs(t[seed]) > threshold)) continue;
    const bool positive = t[seed] > 0.0;
    const int id = static_cast<int>(out.size());
    Cluster c;
    label[seed] = id;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      c.voxels.push_back(cur);
      const auto p = t.coords(cur);
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const long x = static_cast<long>(p[0]) + dx;
            const long y = static_cast<long>(p[1]) + dy;
            const long z = static_cast<long>(p[2]) + dz;
            if (x < 0 || y < 0 || z < 0 || x >= static_cast<long>(d.nx) || y >= static_cast<long>(d.ny) ||
                z >= static_cast<long>(d.nz))
              continue;
            const std::size_t nb = t.index(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z));
            if (label[nb] >= 0 || !(std::fabs(t[nb]) > threshold) || (t[nb] > 0.0) != positive) continue;
            label[nb] = id;
            stack.push_back(nb);
          }
    }
    std::sort(c.voxels.begin(), c.voxels.end());
    c.size = c.voxels.size();
    std::size_t peak = c.voxels.front();
    for (std::size_t v : c.voxels) {
      if (std::fabs(t[v]) > std::fabs(t[peak])) peak = v;
    }
    c.peak_t = t[peak];
    c.peak = t.coords(peak);
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Cluster& a, const Cluster& b) { return std::fabs(a.peak_t) > std::fabs(b.peak_t); });
  return out;
}

}  // namespace lesioncal
