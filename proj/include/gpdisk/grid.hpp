#pragma once

#include "gpdisk/field.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gpdisk {

inline constexpr double kPi = 3.14159265358979323846;

/// Tensor-product polar mesh on the disk of radius R with half-integer
/// radial nodes r_{i+1/2} = (i+1/2) h_r and equispaced periodic angles.
/// Node (i,j) has flat index i*Ntheta + j (row-major, i outer).
struct PolarGrid {
  double R = 0.0;
  int Nr = 0;
  int Ntheta = 0;
  double hr = 0.0;
  double htheta = 0.0;
  Eigen::VectorXd r_nodes;  // Nr
  Eigen::VectorXd weights;  // N, quadrature weight r_{i+1/2} h_r h_theta per node
  Eigen::VectorXd w2;       // 2N, weights repeated on real/imag coordinates

  int num_nodes() const { return Nr * Ntheta; }
  int idx(int i, int j) const { return i * Ntheta + j; }
  double r_of(int i) const { return r_nodes[i]; }
  double theta_of(int j) const { return j * htheta; }

  double mass_dot(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return kahan_wdot(w2, x, y);
  }
  double mass_norm(const Eigen::VectorXd& x) const { return std::sqrt(mass_dot(x, x)); }

  /// Divides by the mass norm and sets the normalized marker.
  ComplexField normalize(const Eigen::VectorXd& x) const {
    const double s = mass_norm(x);
    if (!(s > 0.0)) throw std::runtime_error("normalize: vanishing mass norm");
    ComplexField f;
    f.data = x / s;
    f.normalized = true;
    return f;
  }

  void refresh_marker(ComplexField& f) const {
    f.normalized = std::abs(mass_norm(f.data) - 1.0) <= 1e-12;
  }

  /// Rotates a field by k angular grid indices (exact grid rotation).
  Eigen::VectorXd shift_theta(const Eigen::VectorXd& x, int k) const {
    const int N = num_nodes();
    Eigen::VectorXd y(2 * N);
    const int kk = ((k % Ntheta) + Ntheta) % Ntheta;
    for (int i = 0; i < Nr; ++i)
      for (int j = 0; j < Ntheta; ++j) {
        const int src = idx(i, j);
        const int dst = idx(i, (j + kk) % Ntheta);
        y[dst] = x[src];
        y[N + dst] = x[N + src];
      }
    return y;
  }
};

/// Real symmetric sparse operator on realified coordinates. Assembly mirrors
/// entries from a single computed value so mat == mat^T holds exactly.
struct SparseSymOperator {
  Eigen::SparseMatrix<double> mat;
  bool symmetric = true;
  bool spd_hint = false;
};

// 8th-order central difference coefficients on a periodic equispaced grid.
// First derivative (antisymmetric):
//   f'(x) ~ [ c1 (f1 - f-1) + c2 (f2 - f-2) + c3 (f3 - f-3) + c4 (f4 - f-4) ] / h
// Second derivative (symmetric):
//   f''(x) ~ [ d0 f0 + d1 (f1 + f-1) + d2 (f2 + f-2) + d3 (f3 + f-3) + d4 (f4 + f-4) ] / h^2
inline constexpr double kD1Coef[4] = {4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0};
inline constexpr double kD2Diag = -205.0 / 72.0;
inline constexpr double kD2Coef[4] = {8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0};

/// Fourier symbol of the 8th-order first-difference stencil: applied to
/// sin(k theta) it yields k_eff(k) cos(k theta).
inline double dtheta_symbol(int k, double h) {
  double s = 0.0;
  for (int m = 1; m <= 4; ++m) s += kD1Coef[m - 1] * std::sin(m * k * h);
  return 2.0 * s / h;
}

/// Fourier symbol of the (negated) 8th-order second-difference stencil;
/// nonnegative for all k, equals k^2 + O(h^8 k^10).
inline double dtheta2_symbol(int k, double h) {
  double s = kD2Diag;
  for (int m = 1; m <= 4; ++m) s += 2.0 * kD2Coef[m - 1] * std::cos(m * k * h);
  return -s / (h * h);
}

inline PolarGrid build_grid(double R, int Nr, int Ntheta) {
  if (!(R > 0.0)) throw std::invalid_argument("build_grid: R must be positive");
  if (Nr < 4) throw std::invalid_argument("build_grid: Nr must be >= 4");
  if (Ntheta < 16 || Ntheta % 2 != 0)
    throw std::invalid_argument("build_grid: Ntheta must be even and >= 16");
  PolarGrid g;
  g.R = R;
  g.Nr = Nr;
  g.Ntheta = Ntheta;
  g.hr = R / Nr;
  g.htheta = 2.0 * kPi / Ntheta;
  g.r_nodes.resize(Nr);
  for (int i = 0; i < Nr; ++i) g.r_nodes[i] = (i + 0.5) * g.hr;
  const int N = g.num_nodes();
  g.weights.resize(N);
  for (int i = 0; i < Nr; ++i)
    for (int j = 0; j < Ntheta; ++j) g.weights[g.idx(i, j)] = g.r_nodes[i] * g.hr * g.htheta;
  g.w2.resize(2 * N);
  g.w2.head(N) = g.weights;
  g.w2.tail(N) = g.weights;
  return g;
}

namespace detail {

/// Single-component (N x N) kinetic form: x^T K1 x = (1/4) of the discrete
/// integral of |grad x|^2. Radial part in conservative flux form with zero
/// flux at r=0 and a zero-valued Dirichlet ghost at r=R; angular part the
/// symmetric 8th-order second difference scaled by the node weight / r^2.
inline Eigen::SparseMatrix<double> kinetic_single_block(const PolarGrid& g) {
  const int N = g.num_nodes();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(N) * 12);
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(N);

  // Radial flux terms at integer radii r_f = f*hr, f = 1..Nr. Face f couples
  // nodes f-1 and f; the face at r=0 has zero coefficient; the face at r=R
  // sees the ghost value 0.
  for (int j = 0; j < g.Ntheta; ++j) {
    for (int f = 1; f <= g.Nr; ++f) {
      const double rf = f * g.hr;
      const double c = 0.25 * g.htheta * rf / g.hr;  // (1/4) * r_f * htheta / hr
      const int lo = g.idx(f - 1, j);
      diag[lo] += c;
      if (f < g.Nr) {
        const int hi = g.idx(f, j);
        diag[hi] += c;
        trip.emplace_back(lo, hi, -c);
        trip.emplace_back(hi, lo, -c);
      }
    }
  }

  // Angular second-difference terms, periodic in j.
  for (int i = 0; i < g.Nr; ++i) {
    const double scale = 0.25 * g.weights[g.idx(i, 0)] /
                         (g.r_nodes[i] * g.r_nodes[i] * g.htheta * g.htheta);
    const double cdiag = -kD2Diag * scale;
    for (int j = 0; j < g.Ntheta; ++j) {
      const int p = g.idx(i, j);
      diag[p] += cdiag;
      for (int m = 1; m <= 4; ++m) {
        const double v = -kD2Coef[m - 1] * scale;
        const int q = g.idx(i, (j + m) % g.Ntheta);
        trip.emplace_back(p, q, v);
        trip.emplace_back(q, p, v);
      }
    }
  }

  for (int p = 0; p < N; ++p) trip.emplace_back(p, p, diag[p]);
  Eigen::SparseMatrix<double> K(N, N);
  K.setFromTriplets(trip.begin(), trip.end());
  K.makeCompressed();
  return K;
}

/// Duplicates an N x N block onto both realified components.
inline Eigen::SparseMatrix<double> duplicate_blocks(const Eigen::SparseMatrix<double>& B) {
  const int N = static_cast<int>(B.rows());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(B.nonZeros()) * 2);
  for (int k = 0; k < B.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(B, k); it; ++it) {
      trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      trip.emplace_back(N + static_cast<int>(it.row()), N + static_cast<int>(it.col()),
                        it.value());
    }
  Eigen::SparseMatrix<double> M(2 * N, 2 * N);
  M.setFromTriplets(trip.begin(), trip.end());
  M.makeCompressed();
  return M;
}

}  // namespace detail

/// Weighted discrete form of v -> (1/4) integral |grad v|^2, identical blocks
/// on real and imaginary coordinates (2N x 2N).
inline SparseSymOperator assemble_kinetic(const PolarGrid& g) {
  SparseSymOperator op;
  op.mat = detail::duplicate_blocks(detail::kinetic_single_block(g));
  op.spd_hint = true;  // Dirichlet ghost makes the form strictly positive
  return op;
}

/// Nodal 8th-order antisymmetric first angular derivative (N x N, unweighted,
/// periodic). The rotation term realifies to [[0, -Omega W D], [Omega W D, 0]].
inline Eigen::SparseMatrix<double> assemble_dtheta(const PolarGrid& g) {
  const int N = g.num_nodes();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(N) * 8);
  for (int i = 0; i < g.Nr; ++i)
    for (int j = 0; j < g.Ntheta; ++j) {
      const int p = g.idx(i, j);
      for (int m = 1; m <= 4; ++m) {
        const double v = kD1Coef[m - 1] / g.htheta;
        const int q = g.idx(i, (j + m) % g.Ntheta);
        trip.emplace_back(p, q, v);
        trip.emplace_back(q, p, -v);
      }
    }
  Eigen::SparseMatrix<double> D(N, N);
  D.setFromTriplets(trip.begin(), trip.end());
  D.makeCompressed();
  return D;
}

/// Diagonal mass operator: quadrature weights on both components.
inline SparseSymOperator assemble_mass(const PolarGrid& g) {
  const int N = g.num_nodes();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(2 * N);
  for (int t = 0; t < 2 * N; ++t) trip.emplace_back(t, t, g.w2[t]);
  SparseSymOperator op;
  op.mat.resize(2 * N, 2 * N);
  op.mat.setFromTriplets(trip.begin(), trip.end());
  op.mat.makeCompressed();
  op.spd_hint = true;
  return op;
}

/// Realified symmetric rotation block [[0, -W D], [W D, 0]] built from the
/// angular derivative; multiply by Omega when forming the energy.
inline SparseSymOperator assemble_rotation_block(const PolarGrid& g,
                                                 const Eigen::SparseMatrix<double>& dtheta) {
  const int N = g.num_nodes();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(dtheta.nonZeros()) * 2);
  for (int k = 0; k < dtheta.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(dtheta, k); it; ++it) {
      const int p = static_cast<int>(it.row());
      const int q = static_cast<int>(it.col());
      const double v = g.weights[p] * it.value();  // w constant along a ring
      trip.emplace_back(N + p, q, v);
      trip.emplace_back(q, N + p, v);
    }
  SparseSymOperator op;
  op.mat.resize(2 * N, 2 * N);
  op.mat.setFromTriplets(trip.begin(), trip.end());
  op.mat.makeCompressed();
  op.spd_hint = false;
  return op;
}

/// Trapping potential description.
struct PotentialSpec {
  enum class Kind { zero, harmonic, radial_table } kind = Kind::harmonic;
  // radial_table: sorted (r, V) pairs, piecewise-linear, clamped at the ends.
  std::vector<std::pair<double, double>> table;
};

struct PotentialSample {
  Eigen::VectorXd values;    // N
  bool dominance_ok = true;  // (A2): V - (1+K)/2 Omega^2 r^2 >= 0 on nodes
  double worst_margin = 0.0;
};

/// Samples V at the nodes and checks the (A2) dominance condition for the
/// given rotation speed and margin constant K. Failure is reported, not fatal.
inline PotentialSample sample_potential(const PolarGrid& g, const PotentialSpec& spec,
                                        double omega, double K) {
  const int N = g.num_nodes();
  PotentialSample out;
  out.values.resize(N);
  for (int i = 0; i < g.Nr; ++i) {
    const double r = g.r_nodes[i];
    double v = 0.0;
    switch (spec.kind) {
      case PotentialSpec::Kind::zero: v = 0.0; break;
      case PotentialSpec::Kind::harmonic: v = 0.5 * r * r; break;
      case PotentialSpec::Kind::radial_table: {
        if (spec.table.empty())
          throw std::invalid_argument("sample_potential: empty radial table");
        if (r <= spec.table.front().first) {
          v = spec.table.front().second;
        } else if (r >= spec.table.back().first) {
          v = spec.table.back().second;
        } else {
          size_t hi = 1;
          while (spec.table[hi].first < r) ++hi;
          const auto& a = spec.table[hi - 1];
          const auto& b = spec.table[hi];
          const double t = (r - a.first) / (b.first - a.first);
          v = (1.0 - t) * a.second + t * b.second;
        }
        break;
      }
    }
    for (int j = 0; j < g.Ntheta; ++j) out.values[g.idx(i, j)] = v;
  }
  out.worst_margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < g.Nr; ++i) {
    const double r = g.r_nodes[i];
    const double margin = out.values[g.idx(i, 0)] - 0.5 * (1.0 + K) * omega * omega * r * r;
    out.worst_margin = std::min(out.worst_margin, margin);
  }
  out.dominance_ok = out.worst_margin >= 0.0;
  return out;
}

}  // namespace gpdisk
