#include "lesioncal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lesioncal {

namespace {

constexpr double kProbClamp = 1e-7;

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// Exact squared Euclidean distance transform along one line (Felzenszwalb &
// Huttenlocher lower envelope of parabolas). `f` holds squared distances so
// far (infinity for unknown); `w2` is the squared sample spacing.
void edt_line(std::vector<double>& f, double w2, std::vector<double>& out, std::vector<std::size_t>& v,
              std::vector<double>& z) {
  const std::size_t n = f.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::size_t k = 0;
  std::size_t first = 0;
  while (first < n && std::isinf(f[first])) ++first;
  if (first == n) {
    out.assign(n, inf);
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (std::isinf(f[q])) continue;
    while (true) {
      const auto p = static_cast<double>(v[k]);
      const auto qd = static_cast<double>(q);
      const double s = ((f[q] + w2 * qd * qd) - (f[v[k]] + w2 * p * p)) / (2.0 * w2 * (qd - p));
      if (s <= z[k]) {
        if (k == 0) {
          v[0] = q;
          z[0] = -inf;
          z[1] = inf;
          break;
        }
        --k;
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
      break;
    }
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q] = w2 * d * d + f[v[k]];
  }
}

// Squared distance from every voxel to the nearest seed voxel.
std::vector<double> squared_distance_to(const Dims& dims, const std::vector<std::size_t>& seeds,
                                        const Spacing& weights) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(dims.count(), inf);
  for (std::size_t s : seeds) dist[s] = 0.0;

  const std::size_t maxlen = std::max({dims.nx, dims.ny, dims.nz});
  std::vector<double> f(maxlen);
  std::vector<double> out(maxlen);
  std::vector<std::size_t> v(maxlen);
  std::vector<double> z(maxlen + 1);

  const std::size_t strides[3] = {1, dims.nx, dims.nx * dims.ny};
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::size_t len = dims[axis];
    const double w2 = weights[axis] * weights[axis];
    f.resize(len);
    out.resize(len);
    const std::size_t stride = strides[axis];
    for (std::size_t start = 0; start < dims.count(); ++start) {
      // Visit each line once, from its first element.
      if ((start / stride) % len != 0) continue;
      for (std::size_t i = 0; i < len; ++i) f[i] = dist[start + i * stride];
      edt_line(f, w2, out, v, z);
      for (std::size_t i = 0; i < len; ++i) dist[start + i * stride] = out[i];
    }
  }
  return dist;
}

std::vector<double> directed_distances(const std::vector<std::size_t>& from, const std::vector<double>& dist2) {
  std::vector<double> d;
  d.reserve(from.size());
  for (std::size_t i : from) d.push_back(std::sqrt(dist2[i]));
  return d;
}

}  // namespace

void MetricParams::validate() const {
  if (!(focal_gamma >= 0.0)) throw std::invalid_argument("metrics: gamma must be >= 0");
  if (!(dice_smooth > 0.0)) throw std::invalid_argument("metrics: epsilon must be > 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("metrics: theta must lie in (0,1)");
  if (!(ta_threshold > 0.0 && ta_threshold < 1.0)) throw std::invalid_argument("metrics: tau must lie in (0,1)");
  if (!(ta_weight >= 0.0)) throw std::invalid_argument("metrics: w must be >= 0");
  if (patience < 1) throw std::invalid_argument("metrics: patience must be >= 1");
}

double dice_score(const BinaryMask& a, const BinaryMask& b) {
  require_same_grid(a.volume(), b.volume(), "dice_score");
  std::size_t na = 0;
  std::size_t nb = 0;
  std::size_t both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool ia = a.contains(i);
    const bool ib = b.contains(i);
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double soft_dice_loss(const ProbabilityMap& p, const BinaryMask& g, const MetricParams& params) {
  require_same_grid(p.volume(), g.volume(), "soft_dice_loss");
  double inter = 0.0;
  double sp = 0.0;
  double sg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g.volume()[i];
    inter += p[i] * gi;
    sp += p[i];
    sg += gi;
  }
  const double eps = params.dice_smooth;
  return 1.0 - (2.0 * inter + eps) / (sp + sg + eps);
}

double focal_loss(const ProbabilityMap& p, const BinaryMask& g, const MetricParams& params) {
  require_same_grid(p.volume(), g.volume(), "focal_loss");
  const double gamma = params.focal_gamma;
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = clamp_prob(p[i]);
    if (g.contains(i)) {
      total -= std::pow(1.0 - pi, gamma) * std::log(pi);
    } else {
      total -= std::pow(pi, gamma) * std::log(1.0 - pi);
    }
  }
  return total / static_cast<double>(p.size());
}

double binary_cross_entropy(const ProbabilityMap& p, const BinaryMask& g) {
  require_same_grid(p.volume(), g.volume(), "binary_cross_entropy");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = clamp_prob(p[i]);
    total -= g.contains(i) ? std::log(pi) : std::log(1.0 - pi);
  }
  return total / static_cast<double>(p.size());
}

std::vector<std::size_t> surface_voxels(const BinaryMask& m) {
  const Dims& d = m.dims();
  const GridVolume& v = m.volume();
  std::vector<std::size_t> out;
  for (std::size_t z = 0; z < d.nz; ++z) {
    for (std::size_t y = 0; y < d.ny; ++y) {
      for (std::size_t x = 0; x < d.nx; ++x) {
        const std::size_t i = v.index(x, y, z);
        if (v[i] == 0.0) continue;
        const bool edge = x == 0 || y == 0 || z == 0 || x + 1 == d.nx || y + 1 == d.ny || z + 1 == d.nz;
        if (edge || v.at(x - 1, y, z) == 0.0 || v.at(x + 1, y, z) == 0.0 || v.at(x, y - 1, z) == 0.0 ||
            v.at(x, y + 1, z) == 0.0 || v.at(x, y, z - 1) == 0.0 || v.at(x, y, z + 1) == 0.0) {
          out.push_back(i);
        }
      }
    }
  }
  return out;
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile_linear: empty input");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> hd95(const BinaryMask& a, const BinaryMask& b, const HausdorffOptions& opts) {
  require_same_grid(a.volume(), b.volume(), "hd95");
  const auto sa = surface_voxels(a);
  const auto sb = surface_voxels(b);
  if (sa.empty() || sb.empty()) return std::nullopt;

  const Spacing weights = opts.use_spacing ? a.volume().spacing() : Spacing{1.0, 1.0, 1.0};
  const auto to_b = squared_distance_to(a.dims(), sb, weights);
  const auto to_a = squared_distance_to(a.dims(), sa, weights);
  const double ab = percentile_linear(directed_distances(sa, to_b), opts.percentile);
  const double ba = percentile_linear(directed_distances(sb, to_a), opts.percentile);
  return std::max(ab, ba);
}

double thresholded_average_loss(const ProbabilityMap& p, const MetricParams& params) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > params.ta_threshold) {
      total += p[i];
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

double combined_loss(const ProbabilityMap& p, const BinaryMask& g, bool is_control, const MetricParams& params) {
  require_same_grid(p.volume(), g.volume(), "combined_loss");
  if (is_control) {
    const BinaryMask empty = BinaryMask::empty_like(p.volume());
    return focal_loss(p, empty, params) + params.ta_weight * thresholded_average_loss(p, params);
  }
  return soft_dice_loss(p, g, params) + focal_loss(p, g, params);
}

BinaryMask binarize(const ProbabilityMap& p, double theta) {
  GridVolume out(p.volume().dims(), p.volume().spacing(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = p[i] > theta ? 1.0 : 0.0;
  }
  return BinaryMask(std::move(out));
}

std::size_t fp_voxel_count(const ProbabilityMap& p, double theta) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < p.size(); ++i) n += p[i] > theta;
  return n;
}

EarlyStopDecision early_stop(std::span<const EpochMetrics> trace, const MetricParams& params) {
  if (trace.empty()) throw std::invalid_argument("early_stop: empty trace");
  if (params.patience < 1) throw std::invalid_argument("early_stop: patience must be >= 1");

  EarlyStopDecision out;
  double best_dice = trace[0].dice;
  double best_hd = trace[0].hd;
  out.stop_epoch = trace.size() - 1;
  for (std::size_t e = 1; e < trace.size(); ++e) {
    if (trace[e].dice > best_dice && trace[e].hd < best_hd) {
      out.last_joint = e;
    }
    best_dice = std::max(best_dice, trace[e].dice);
    best_hd = std::min(best_hd, trace[e].hd);
    if (e - out.last_joint > params.patience) {
      out.stop_epoch = e;
      out.stopped = true;
      break;
    }
  }

  const std::size_t window_end = std::min(out.last_joint + params.patience, trace.size() - 1);
  out.best_epoch = out.last_joint;
  for (std::size_t e = out.last_joint + 1; e <= window_end; ++e) {
    if (trace[e].dice > trace[out.best_epoch].dice) out.best_epoch = e;
  }
  return out;
}

}  // namespace lesioncal
