#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lesioncal/volume.hpp"

namespace lesioncal {

enum class NoiseKind { rician, gibbs, bias, spike };

std::string_view to_string(NoiseKind kind);
/// Parses "rician" / "gibbs" / "bias" / "spike"; nullopt otherwise.
std::optional<NoiseKind> parse_noise_kind(std::string_view name);

/// One corruption: the meaning of `magnitude` depends on the kind
/// (rician sigma, gibbs truncation fraction, bias coefficient bound,
/// spike intensity relative to the spectral peak).
struct NoiseSpec {
  NoiseKind kind = NoiseKind::rician;
  double magnitude = 0.0;
  std::uint64_t seed = 0;
  int bias_degree = 3;
  std::size_t spike_count = 1;

  void validate() const;
};

/// Rician magnitude noise: sqrt((v + n1)^2 + n2^2), n1, n2 ~ N(0, sigma^2).
GridVolume apply_rician(const GridVolume& v, double sigma, std::uint64_t seed);

/// Gibbs ringing by k-space truncation. Bins whose normalised centred
/// radius exceeds 1 - alpha are zeroed; the radius is scaled so the
/// spectrum corner sits at 1.
GridVolume apply_gibbs(const GridVolume& v, double alpha);

/// Multiplicative field exp(sum_m c_m B_m) over monomials of total degree
/// <= `degree` in coordinates scaled to [-1, 1]; c_m ~ U(-bound, bound).
GridVolume apply_bias_field(const GridVolume& v, int degree, double bound, std::uint64_t seed);

/// The field itself, for inspection and tests.
GridVolume bias_field(const GridVolume& like, int degree, double bound, std::uint64_t seed);

/// Sets `count` random non-DC k-space bins to kappa * max|K| with random
/// phase, then returns the real part of the inverse transform.
GridVolume apply_spike(const GridVolume& v, double kappa, std::size_t count, std::uint64_t seed);

GridVolume apply_noise(const GridVolume& v, const NoiseSpec& spec);

/// Applies specs in the fixed order bias, gibbs, rician, spike (stable
/// within a kind).
GridVolume apply_combined(const GridVolume& v, std::span<const NoiseSpec> specs);

struct NoiseSchedule {
  NoiseKind kind = NoiseKind::rician;
  double max_magnitude = 0.0;
  std::size_t n_steps = 12;

  /// n_steps values linearly spaced over [0, max_magnitude].
  std::vector<double> magnitudes() const;
};

NoiseSchedule schedule(NoiseKind kind, double max_magnitude, std::size_t n_steps);

/// Default schedule maxima. These are configuration defaults chosen so that
/// the top increment badly degrades a phantom, not measured values.
double default_max_magnitude(NoiseKind kind);

}  // namespace lesioncal
