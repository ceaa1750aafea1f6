#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace gpdisk {

/// Complex-valued grid function in realified block layout: the first N
/// entries are the real parts, the last N the imaginary parts.
struct ComplexField {
  Eigen::VectorXd data;     // size 2N
  bool normalized = false;  // set iff the discrete mass norm is within 1e-12 of 1

  int num_nodes() const { return static_cast<int>(data.size()) / 2; }

  double re(int p) const { return data[p]; }
  double im(int p) const { return data[num_nodes() + p]; }

  bool all_finite() const { return data.allFinite(); }
};

/// Multiplication by i in realified coordinates: (u, v) -> (-v, u).
inline Eigen::VectorXd times_i(const Eigen::VectorXd& x) {
  const int n = static_cast<int>(x.size()) / 2;
  Eigen::VectorXd y(2 * n);
  y.head(n) = -x.tail(n);
  y.tail(n) = x.head(n);
  return y;
}

/// Global phase rotation e^{i alpha} in realified coordinates.
inline Eigen::VectorXd phase_rotate(const Eigen::VectorXd& x, double alpha) {
  const int n = static_cast<int>(x.size()) / 2;
  const double c = std::cos(alpha), s = std::sin(alpha);
  Eigen::VectorXd y(2 * n);
  y.head(n) = c * x.head(n) - s * x.tail(n);
  y.tail(n) = s * x.head(n) + c * x.tail(n);
  return y;
}

/// Compensated (Kahan) dot product. All inner products go through these so
/// reductions are deterministic and accurate to O(eps) independent of N;
/// summation order is plain index order.
inline double kahan_dot(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw std::invalid_argument("kahan_dot: size mismatch");
  double sum = 0.0, comp = 0.0;
  for (Eigen::Index t = 0; t < x.size(); ++t) {
    const double term = x[t] * y[t] - comp;
    const double next = sum + term;
    comp = (next - sum) - term;
    sum = next;
  }
  return sum;
}

inline double kahan_wdot(const Eigen::VectorXd& w2, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y) {
  if (w2.size() != x.size() || x.size() != y.size())
    throw std::invalid_argument("kahan_wdot: size mismatch");
  double sum = 0.0, comp = 0.0;
  for (Eigen::Index t = 0; t < x.size(); ++t) {
    const double term = w2[t] * x[t] * y[t] - comp;
    const double next = sum + term;
    comp = (next - sum) - term;
    sum = next;
  }
  return sum;
}

}  // namespace gpdisk
