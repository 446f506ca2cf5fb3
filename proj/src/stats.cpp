#include "lesioncal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lesioncal/random.hpp"
#include "lesioncal/special_functions.hpp"

namespace lesioncal::stats {

namespace {

void check_pvalues(std::span<const double> p) {
  for (double x : p) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("p-value outside [0, 1]");
  }
}

std::vector<std::size_t> order_ascending(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  return idx;
}

}  // namespace

std::string_view to_string(Correction c) { return c == Correction::fdr_bh ? "fdr_bh" : "fwer_holm"; }

double mean(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("mean of empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("variance needs at least two values");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

double sample_sd(std::span<const double> x) { return std::sqrt(sample_variance(x)); }

std::vector<double> mid_ranks(std::span<const double> x) {
  const auto order = order_ascending(x);
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

TestResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw std::invalid_argument("kruskal_wallis: need at least two groups");
  std::vector<double> pooled;
  for (const auto& g : groups) {
    if (g.empty()) throw std::invalid_argument("kruskal_wallis: empty group");
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  const auto n = static_cast<double>(pooled.size());
  if (pooled.size() < 3) throw std::invalid_argument("kruskal_wallis: need at least three observations");

  const auto ranks = mid_ranks(pooled);
  double h = 0.0;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    double r = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) r += ranks[offset + i];
    h += r * r / static_cast<double>(g.size());
    offset += g.size();
  }
  h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);

  // Tie correction from tie-group sizes.
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double correction = 1.0 - ties / (n * n * n - n);
  const double df = static_cast<double>(groups.size() - 1);
  if (correction <= 0.0) {
    return {0.0, df, 1.0};
  }
  h = std::max(0.0, h / correction);
  return {h, df, special::chi2_sf(h, df)};
}

TestResult paired_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("paired_t: need at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double m = mean(d);
  const double var = sample_variance(d);
  // Relative guard: differences that are constant up to rounding.
  const double scale = std::max(1.0, m * m);
  if (!(var > 1e-24 * scale)) throw ZeroVarianceError("paired_t: differences have zero variance");
  const double n = static_cast<double>(d.size());
  const double t = m / std::sqrt(var / n);
  const double df = n - 1.0;
  return {t, df, special::student_t_two_sided(t, df)};
}

CorrectionResult bh_fdr(std::span<const double> pvals, double alpha) {
  check_pvalues(pvals);
  const std::size_t m = pvals.size();
  CorrectionResult out{Correction::fdr_bh, std::vector<double>(m), std::vector<bool>(m)};
  if (m == 0) return out;
  const auto order = order_ascending(pvals);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const std::size_t i = order[r];
    const double scaled = pvals[i] * static_cast<double>(m) / static_cast<double>(r + 1);
    running = std::min(running, scaled);
    out.adjusted[i] = std::clamp(running, pvals[i], 1.0);
  }
  for (std::size_t i = 0; i < m; ++i) out.reject[i] = out.adjusted[i] <= alpha;
  return out;
}

CorrectionResult holm_fwer(std::span<const double> pvals, double alpha) {
  check_pvalues(pvals);
  const std::size_t m = pvals.size();
  CorrectionResult out{Correction::fwer_holm, std::vector<double>(m), std::vector<bool>(m)};
  const auto order = order_ascending(pvals);
  double running = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t i = order[r];
    const double scaled = static_cast<double>(m - r) * pvals[i];
    running = std::max(running, scaled);
    out.adjusted[i] = std::min(1.0, running);
  }
  for (std::size_t i = 0; i < m; ++i) out.reject[i] = out.adjusted[i] <= alpha;
  return out;
}

std::vector<std::size_t> bootstrap_indices(std::size_t n_values, std::size_t size, std::uint64_t seed,
                                           std::size_t replicate) {
  if (n_values == 0) throw std::invalid_argument("bootstrap: empty sample");
  Rng rng(derive_seed(seed, replicate));
  std::vector<std::size_t> idx(size);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n_values));
  return idx;
}

std::vector<double> bootstrap_means(std::span<const double> values, std::size_t n_boot, std::size_t size,
                                    std::uint64_t seed) {
  if (values.empty()) throw std::invalid_argument("bootstrap_means: empty sample");
  if (size < 1) throw std::invalid_argument("bootstrap_means: subsample size must be >= 1");
  std::vector<double> means(n_boot);
  for (std::size_t b = 0; b < n_boot; ++b) {
    double total = 0.0;
    for (std::size_t i : bootstrap_indices(values.size(), size, seed, b)) total += values[i];
    means[b] = total / static_cast<double>(size);
  }
  return means;
}

TestResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("spearman: need at least three pairs");
  const auto rx = mid_ranks(x);
  const auto ry = mid_ranks(y);
  const double mx = mean(rx);
  const double my = mean(ry);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ZeroVarianceError("spearman: zero rank variance");
  const double rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(x.size()) - 2.0;
  if (std::fabs(rho) >= 1.0) return {rho, df, 0.0};
  const double t = rho * std::sqrt(df / (1.0 - rho * rho));
  return {rho, df, special::student_t_two_sided(t, df)};
}

Descriptive descriptive(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("descriptive: empty input");
  Descriptive d;
  d.n = values.size();
  d.mean = mean(values);
  if (values.size() >= 2) d.sd = sample_sd(values);
  d.max = *std::max_element(values.begin(), values.end());
  std::vector<double> positive;
  for (double v : values) {
    if (v > 0.0) positive.push_back(v);
  }
  d.count_nonzero = positive.size();
  if (!positive.empty()) d.nonzero_mean = mean(positive);
  if (positive.size() >= 2) d.nonzero_sd = sample_sd(positive);
  return d;
}

}  // namespace lesioncal::stats
