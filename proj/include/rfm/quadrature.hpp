#ifndef RFM_QUADRATURE_HPP_
#define RFM_QUADRATURE_HPP_

#include <vector>

namespace rfm {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }

  template <typename F>
  double integrate(F&& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(nodes[i]);
    return s;
  }
};

/// n-point Gauss-Legendre rule on [a, b].
QuadratureRule gauss_legendre(int n, double a = -1.0, double b = 1.0);

/// Composite rule: `panels` equal panels of n-point Gauss-Legendre on [a, b].
QuadratureRule composite_gauss_legendre(int n, int panels, double a, double b);

/// Volume of the unit sphere S^d (surface measure in R^{d+1}).
double sphere_volume(int d);

}  // namespace rfm

#endif  // RFM_QUADRATURE_HPP_
