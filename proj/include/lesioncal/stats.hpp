#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace lesioncal::stats {

struct TestResult {
  double statistic = 0.0;
  double df = 0.0;
  double p_value = 1.0;
};

/// Raised when a test is undefined because the data carry no variance,
/// e.g. paired samples that are identical.
class ZeroVarianceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class Correction { fdr_bh, fwer_holm };
std::string_view to_string(Correction c);

struct CorrectionResult {
  Correction method = Correction::fdr_bh;
  std::vector<double> adjusted;
  std::vector<bool> reject;
};

double mean(std::span<const double> x);
/// Sample standard deviation (n - 1); requires n >= 2.
double sample_sd(std::span<const double> x);
double sample_variance(std::span<const double> x);

/// Mid-ranks (1-based) with ties sharing their average rank.
std::vector<double> mid_ranks(std::span<const double> x);

/// Kruskal-Wallis H with tie correction; chi-square p on k - 1 df. All
/// values tied gives H = 0, p = 1.
TestResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

/// Two-sided paired t-test on a - b. Throws ZeroVarianceError when the
/// differences have zero variance.
TestResult paired_t(std::span<const double> a, std::span<const double> b);

/// Benjamini-Hochberg step-up adjusted p-values.
CorrectionResult bh_fdr(std::span<const double> pvals, double alpha = 0.05);

/// Holm step-down adjusted p-values.
CorrectionResult holm_fwer(std::span<const double> pvals, double alpha = 0.05);

/// Bootstrap subsample indices for replicate `replicate`. Each replicate
/// is seeded from (seed, replicate) so replicates are independent of
/// evaluation order and shared across callers with the same seed.
std::vector<std::size_t> bootstrap_indices(std::size_t n_values, std::size_t size, std::uint64_t seed,
                                           std::size_t replicate);

/// Means of `n_boot` subsamples of `size` values drawn with replacement.
std::vector<double> bootstrap_means(std::span<const double> values, std::size_t n_boot = 10000,
                                    std::size_t size = 100, std::uint64_t seed = 0);

/// Spearman rank correlation; p from the t approximation on n - 2 df.
TestResult spearman(std::span<const double> x, std::span<const double> y);

/// Table-1 style summary. Non-zero variants use strictly positive entries.
struct Descriptive {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> sd;
  std::optional<double> nonzero_mean;
  std::optional<double> nonzero_sd;
  std::size_t count_nonzero = 0;
  double max = 0.0;
};

Descriptive descriptive(std::span<const double> values);

}  // namespace lesioncal::stats
