#pragma once

namespace tssl::special {

/// ln|Gamma(x)| via the Lanczos approximation (g = 7, 9 terms) with reflection below 0.5.
double log_gamma(double x);

/// psi(x) = d/dx ln Gamma(x): upward recurrence to x >= 10, then the asymptotic series.
double digamma(double x);

/// psi'(x), same scheme as digamma. Needed for the backward pass of digamma.
double trigamma(double x);

}  // namespace tssl::special
