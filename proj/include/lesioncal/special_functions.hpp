#pragma once

namespace lesioncal::special {

/// Regularised lower incomplete gamma P(a, x).
double gamma_p(double a, double x);
/// Regularised upper incomplete gamma Q(a, x) = 1 - P(a, x).
double gamma_q(double a, double x);

/// Regularised incomplete beta I_x(a, b).
double beta_inc(double a, double b, double x);

/// Survival function of the chi-square distribution.
double chi2_sf(double x, double df);

/// Two-sided tail probability P(|T| >= |t|) for Student's t.
double student_t_two_sided(double t, double df);

/// Upper tail P(T >= t) for Student's t.
double student_t_sf(double t, double df);

}  // namespace lesioncal::special
