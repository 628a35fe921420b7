#ifndef DISCO_TEST_SUPPORT_HPP
#define DISCO_TEST_SUPPORT_HPP

#include <cmath>
#include <functional>

#include "disco/synthbench.hpp"
#include "disco/tensor.hpp"

namespace disco::test {

inline TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Central differences of `f` with respect to every entry of `t`, written
/// independently of the library's own checker.
inline Eigen::VectorXd central_differences(TensorD& t, const std::function<double()>& f,
                                           double h = 1e-4) {
  Eigen::VectorXd g(t.size());
  for (Index i = 0; i < t.size(); ++i) {
    const double keep = t[i];
    t[i] = keep + h;
    const double up = f();
    t[i] = keep - h;
    const double down = f();
    t[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& n) {
  const double scale = std::max(a.cwiseAbs().maxCoeff(), n.cwiseAbs().maxCoeff());
  return scale == 0.0 ? 0.0 : (a - n).cwiseAbs().maxCoeff() / scale;
}

inline double dot(const TensorD& a, const TensorD& b) { return a.vec().dot(b.vec()); }

}  // namespace disco::test

#endif
