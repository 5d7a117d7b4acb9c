#include "nlm/numerics/quadrature.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

namespace nlm::num {

double quad(const std::function<double(double)>& f, double a, double b, double tol) {
  return boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 30, tol);
}

double gauss_legendre(const std::function<double(double)>& f, double a, double b) {
  return boost::math::quadrature::gauss<double, 10>::integrate(f, a, b);
}

double piecewise_gauss(const std::function<double(double)>& f, const std::vector<double>& breaks) {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) total += gauss_legendre(f, breaks[i], breaks[i + 1]);
  return total;
}

double quad_endpoint(const std::function<double(double)>& f, double a, double b, double tol) {
  boost::math::quadrature::tanh_sinh<double> integrator;
  return integrator.integrate(f, a, b, tol);
}

}  // namespace nlm::num
