#pragma once

#include <functional>
#include <vector>

namespace nlm::num {

/// Adaptive Gauss-Kronrod (15-point) quadrature of a smooth integrand.
double quad(const std::function<double(double)>& f, double a, double b, double tol = 1e-13);

/// Fixed 10-point Gauss-Legendre rule, for integrands that are smooth between
/// known breakpoints.
double gauss_legendre(const std::function<double(double)>& f, double a, double b);

/// Sum of gauss_legendre over consecutive breakpoint intervals.
double piecewise_gauss(const std::function<double(double)>& f, const std::vector<double>& breaks);

/// Double-exponential quadrature for integrands with endpoint singularities
/// such as 1/sqrt(x - a). The integrand is never evaluated at a or b.
double quad_endpoint(const std::function<double(double)>& f, double a, double b,
                     double tol = 1e-13);

}  // namespace nlm::num
