#include "lesioncal/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "lesioncal/fft.hpp"
#include "lesioncal/random.hpp"

namespace lesioncal {

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::rician: return "rician";
    case NoiseKind::gibbs: return "gibbs";
    case NoiseKind::bias: return "bias";
    case NoiseKind::spike: return "spike";
  }
  return "unknown";
}

std::optional<NoiseKind> parse_noise_kind(std::string_view name) {
  for (auto kind : {NoiseKind::rician, NoiseKind::gibbs, NoiseKind::bias, NoiseKind::spike}) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

void NoiseSpec::validate() const {
  if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) {
    throw std::invalid_argument(std::string(to_string(kind)) + ": magnitude must be >= 0");
  }
  if (kind == NoiseKind::gibbs && magnitude > 1.0) {
    throw std::invalid_argument("gibbs: alpha must lie in [0, 1]");
  }
  if (bias_degree < 0) {
    throw std::invalid_argument("bias: degree must be >= 0");
  }
}

GridVolume apply_rician(const GridVolume& v, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("rician: sigma must be >= 0");
  if (sigma == 0.0) return v;
  Rng rng(seed);
  GridVolume out = v;
  for (double& x : out.data()) {
    const double re = x + sigma * rng.normal();
    const double im = sigma * rng.normal();
    x = std::hypot(re, im);
  }
  return out;
}

GridVolume apply_gibbs(const GridVolume& v, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("gibbs: alpha must lie in [0, 1]");
  if (alpha == 0.0) return v;

  const Dims& d = v.dims();
  double half[3];
  int active_axes = 0;
  for (std::size_t a = 0; a < 3; ++a) {
    half[a] = static_cast<double>(d[a] / 2);
    active_axes += half[a] > 0;
  }
  if (active_axes == 0) return v;
  const double corner = std::sqrt(static_cast<double>(active_axes));
  const double cutoff = 1.0 - alpha;

  auto spectrum = fft::forward(v);
  for (std::size_t z = 0; z < d.nz; ++z) {
    for (std::size_t y = 0; y < d.ny; ++y) {
      for (std::size_t x = 0; x < d.nx; ++x) {
        const long c[3] = {fft::centered_frequency(x, d.nx), fft::centered_frequency(y, d.ny),
                           fft::centered_frequency(z, d.nz)};
        double r2 = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
          if (half[a] > 0) {
            const double u = static_cast<double>(c[a]) / half[a];
            r2 += u * u;
          }
        }
        if (std::sqrt(r2) / corner > cutoff) {
          spectrum[v.index(x, y, z)] = 0.0;
        }
      }
    }
  }
  return fft::inverse_real(std::move(spectrum), v);
}

GridVolume bias_field(const GridVolume& like, int degree, double bound, std::uint64_t seed) {
  if (!(bound >= 0.0)) throw std::invalid_argument("bias: coefficient bound must be >= 0");
  if (degree < 0) throw std::invalid_argument("bias: degree must be >= 0");

  // Monomials x^i y^j z^k with i + j + k <= degree, in lexicographic order.
  struct Term {
    int i, j, k;
    double coeff;
  };
  Rng rng(seed);
  std::vector<Term> terms;
  for (int i = 0; i <= degree; ++i) {
    for (int j = 0; i + j <= degree; ++j) {
      for (int k = 0; i + j + k <= degree; ++k) {
        terms.push_back({i, j, k, rng.uniform(-bound, bound)});
      }
    }
  }

  const Dims& d = like.dims();
  auto scaled = [](std::size_t idx, std::size_t n) {
    return n == 1 ? 0.0 : 2.0 * static_cast<double>(idx) / static_cast<double>(n - 1) - 1.0;
  };
  GridVolume field(d, like.spacing(), 1.0);
  for (std::size_t z = 0; z < d.nz; ++z) {
    const double zc = scaled(z, d.nz);
    for (std::size_t y = 0; y < d.ny; ++y) {
      const double yc = scaled(y, d.ny);
      for (std::size_t x = 0; x < d.nx; ++x) {
        const double xc = scaled(x, d.nx);
        double exponent = 0.0;
        for (const Term& t : terms) {
          exponent += t.coeff * std::pow(xc, t.i) * std::pow(yc, t.j) * std::pow(zc, t.k);
        }
        field.at(x, y, z) = std::exp(exponent);
      }
    }
  }
  return field;
}

GridVolume apply_bias_field(const GridVolume& v, int degree, double bound, std::uint64_t seed) {
  if (bound == 0.0 && degree >= 0) return v;
  const GridVolume field = bias_field(v, degree, bound, seed);
  GridVolume out = v;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= field[i];
  return out;
}

GridVolume apply_spike(const GridVolume& v, double kappa, std::size_t count, std::uint64_t seed) {
  if (!(kappa >= 0.0)) throw std::invalid_argument("spike: kappa must be >= 0");
  if (kappa == 0.0 || count == 0 || v.size() < 2) return v;

  auto spectrum = fft::forward(v);
  double peak = 0.0;
  for (const auto& c : spectrum) peak = std::max(peak, std::abs(c));
  const double magnitude = kappa * peak;

  Rng rng(seed);
  for (std::size_t s = 0; s < count; ++s) {
    // Bin 0 is DC; draw from the remaining bins.
    const std::size_t bin = 1 + static_cast<std::size_t>(rng.below(v.size() - 1));
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    spectrum[bin] = std::polar(magnitude, phase);
  }
  return fft::inverse_real(std::move(spectrum), v);
}

GridVolume apply_noise(const GridVolume& v, const NoiseSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case NoiseKind::rician: return apply_rician(v, spec.magnitude, spec.seed);
    case NoiseKind::gibbs: return apply_gibbs(v, spec.magnitude);
    case NoiseKind::bias: return apply_bias_field(v, spec.bias_degree, spec.magnitude, spec.seed);
    case NoiseKind::spike: return apply_spike(v, spec.magnitude, spec.spike_count, spec.seed);
  }
  return v;
}

GridVolume apply_combined(const GridVolume& v, std::span<const NoiseSpec> specs) {
  for (const auto& s : specs) s.validate();
  GridVolume out = v;
  for (auto kind : {NoiseKind::bias, NoiseKind::gibbs, NoiseKind::rician, NoiseKind::spike}) {
    for (const auto& s : specs) {
      if (s.kind == kind) out = apply_noise(out, s);
    }
  }
  return out;
}

std::vector<double> NoiseSchedule::magnitudes() const {
  std::vector<double> out(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i) {
    out[i] = max_magnitude * static_cast<double>(i) / static_cast<double>(n_steps - 1);
  }
  return out;
}

NoiseSchedule schedule(NoiseKind kind, double max_magnitude, std::size_t n_steps) {
  if (n_steps < 2) throw std::invalid_argument("schedule: n_steps must be >= 2");
  if (!(max_magnitude >= 0.0)) throw std::invalid_argument("schedule: max magnitude must be >= 0");
  if (kind == NoiseKind::gibbs && max_magnitude > 1.0) {
    throw std::invalid_argument("schedule: gibbs alpha must not exceed 1");
  }
  return {kind, max_magnitude, n_steps};
}

double default_max_magnitude(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::rician: return 0.3;
    case NoiseKind::gibbs: return 0.8;
    case NoiseKind::bias: return 0.5;
    case NoiseKind::spike: return 0.2;
  }
  return 0.0;
}

}  // namespace lesioncal
