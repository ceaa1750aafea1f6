#pragma once

#include "gpdisk/field.hpp"
#include "gpdisk/grid.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace gpdisk {

/// Interaction term f and its antiderivative F(rho) = int_0^rho f(s) ds.
struct Nonlinearity {
  enum class Kind { none, cubic, logarithmic, lhy } kind = Kind::none;
  double eta = 0.0;
  double eta_lhy = 0.0;

  // s*log(s) evaluates to 0 at s=0; log is clamped below 1e-300 so the limit
  // survives in floating point.
  static double safe_log(double s) { return std::log(std::max(s, 1e-300)); }

  double f(double s) const {
    switch (kind) {
      case Kind::none: return 0.0;
      case Kind::cubic: return eta * s;
      case Kind::logarithmic: return s <= 0.0 ? 0.0 : eta * s * safe_log(s);
      case Kind::lhy: return eta * s + eta_lhy * s * std::sqrt(s);
    }
    return 0.0;
  }

  double F(double rho) const {
    switch (kind) {
      case Kind::none: return 0.0;
      case Kind::cubic: return 0.5 * eta * rho * rho;
      case Kind::logarithmic:
        return rho <= 0.0 ? 0.0 : eta * (0.5 * rho * rho * safe_log(rho) - 0.25 * rho * rho);
      case Kind::lhy: return 0.5 * eta * rho * rho + 0.4 * eta_lhy * rho * rho * std::sqrt(rho);
    }
    return 0.0;
  }

  double fprime(double s) const {
    switch (kind) {
      case Kind::none: return 0.0;
      case Kind::cubic: return eta;
      case Kind::logarithmic: return eta * (safe_log(s) + 1.0);
      case Kind::lhy: return eta + 1.5 * eta_lhy * std::sqrt(s);
    }
    return 0.0;
  }
};

/// A discretized instance of the constrained minimization problem: grid,
/// sampled potential, rotation speed, nonlinearity, and the assembled
/// realified operators.
struct ModelInstance {
  PolarGrid grid;
  Eigen::VectorXd V;  // N, potential samples
  double omega = 0.0;
  Nonlinearity nonlin;
  bool dominance_ok = true;

  SparseSymOperator kinetic;             // 2N, the (1/4)|grad|^2 form
  SparseSymOperator mass;                // 2N diagonal
  Eigen::SparseMatrix<double> dtheta;    // N, antisymmetric d/dtheta
  SparseSymOperator rotation;            // 2N, [[0,-WD],[WD,0]] (no Omega factor)
  Eigen::SparseMatrix<double> h_static;  // 2N: 2K + W diag(V) + Omega * rotation

  int num_nodes() const { return grid.num_nodes(); }
  int dim() const { return 2 * grid.num_nodes(); }
};

inline ModelInstance make_model(const PolarGrid& grid, const PotentialSpec& pot, double omega,
                                const Nonlinearity& nonlin, double dominance_K = 0.2) {
  if (omega < 0.0) throw std::invalid_argument("make_model: Omega must be >= 0");
  ModelInstance m;
  m.grid = grid;
  m.omega = omega;
  m.nonlin = nonlin;
  const PotentialSample vs = sample_potential(grid, pot, omega, dominance_K);
  m.V = vs.values;
  m.dominance_ok = vs.dominance_ok;

  m.kinetic = assemble_kinetic(grid);
  m.mass = assemble_mass(grid);
  m.dtheta = assemble_dtheta(grid);
  m.rotation = assemble_rotation_block(grid, m.dtheta);

  const int N = grid.num_nodes();
  Eigen::VectorXd wv(2 * N);
  for (int p = 0; p < N; ++p) {
    wv[p] = grid.weights[p] * m.V[p];
    wv[N + p] = wv[p];
  }
  Eigen::SparseMatrix<double> WV(2 * N, 2 * N);
  {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(2 * N);
    for (int t = 0; t < 2 * N; ++t)
      if (wv[t] != 0.0) trip.emplace_back(t, t, wv[t]);
    WV.setFromTriplets(trip.begin(), trip.end());
  }
  m.h_static = 2.0 * m.kinetic.mat + WV;
  if (omega != 0.0) m.h_static += omega * m.rotation.mat;
  m.h_static.makeCompressed();
  return m;
}

/// Pointwise density rho = re^2 + im^2 (length N).
inline Eigen::VectorXd density(const ModelInstance& m, const Eigen::VectorXd& x) {
  const int N = m.num_nodes();
  return x.head(N).array().square() + x.tail(N).array().square();
}

/// Difference-first application of the static operator 2K + W V + Omega R.
/// Algebraically identical to h_static * x, but stencil combinations are
/// grouped as differences of neighboring values before scaling, so the
/// rounding floor is O(eps * |operator output|) instead of
/// O(eps * coefficient scale * |x|). The iteration and the residual use this
/// path; assembled matrices serve the pencils and factorizations.
inline Eigen::VectorXd apply_static(const ModelInstance& m, const Eigen::VectorXd& x) {
  const PolarGrid& g = m.grid;
  const int N = g.num_nodes();
  const int Nt = g.Ntheta;
  Eigen::VectorXd out(2 * N);

  for (int comp = 0; comp < 2; ++comp) {
    const int off = comp * N;
    // radial conservative flux: (2K x)_i = 2 [c_i (x_i - x_{i-1}) - c_{i+1} (x_{i+1} - x_i)],
    // c_f = (1/4) htheta r_f / hr, ghost value 0 beyond r=R
    for (int j = 0; j < Nt; ++j) {
      double d_lo = 0.0;  // c_f * (x_f - x_{f-1}) at the inner face of node i
      for (int i = 0; i < g.Nr; ++i) {
        const int p = off + g.idx(i, j);
        const double cf_hi = 0.25 * g.htheta * ((i + 1) * g.hr) / g.hr;
        const double x_hi = (i + 1 < g.Nr) ? x[off + g.idx(i + 1, j)] : 0.0;
        const double d_hi = cf_hi * (x_hi - x[p]);
        out[p] = 2.0 * (d_lo - d_hi);
        d_lo = d_hi;
      }
    }
    // angular: -(2 K_ang x)_p = 2 s_i (D2 x)_p with
    // (D2 x)_p = (1/htheta^2) sum_m d_m ((x_{j+m}-x_p) + (x_{j-m}-x_p))
    for (int i = 0; i < g.Nr; ++i) {
      const double s = 0.5 * g.weights[g.idx(i, 0)] /
                       (g.r_nodes[i] * g.r_nodes[i] * g.htheta * g.htheta);
      for (int j = 0; j < Nt; ++j) {
        const int p = off + g.idx(i, j);
        const double xp = x[p];
        double acc = 0.0;
        for (int mm = 1; mm <= 4; ++mm) {
          const double xf = x[off + g.idx(i, (j + mm) % Nt)];
          const double xb = x[off + g.idx(i, (j - mm + Nt) % Nt)];
          acc += kD2Coef[mm - 1] * ((xf - xp) + (xb - xp));
        }
        out[p] -= s * acc;
      }
    }
  }

  // potential
  for (int p = 0; p < N; ++p) {
    const double wv = g.weights[p] * m.V[p];
    out[p] += wv * x[p];
    out[N + p] += wv * x[N + p];
  }

  // rotation: re += -Omega w (Dtheta x_im), im += Omega w (Dtheta x_re)
  if (m.omega != 0.0) {
    for (int i = 0; i < g.Nr; ++i) {
      const double ow = m.omega * g.weights[g.idx(i, 0)] / g.htheta;
      for (int j = 0; j < Nt; ++j) {
        const int p = g.idx(i, j);
        double dre = 0.0, dim = 0.0;
        for (int mm = 1; mm <= 4; ++mm) {
          const int jf = g.idx(i, (j + mm) % Nt);
          const int jb = g.idx(i, (j - mm + Nt) % Nt);
          dre += kD1Coef[mm - 1] * (x[jf] - x[jb]);
          dim += kD1Coef[mm - 1] * (x[N + jf] - x[N + jb]);
        }
        out[p] -= ow * dim;
        out[N + p] += ow * dre;
      }
    }
  }
  return out;
}

/// Applies H_phi = -Delta/2 + V - Omega L_z + f(rho_phi) in weighted (dual)
/// coordinates; rho is the density of the base state phi.
inline Eigen::VectorXd apply_h(const ModelInstance& m, const Eigen::VectorXd& rho,
                               const Eigen::VectorXd& v) {
  const int N = m.num_nodes();
  Eigen::VectorXd out = apply_static(m, v);
  for (int p = 0; p < N; ++p) {
    const double wf = m.grid.weights[p] * m.nonlin.f(rho[p]);
    out[p] += wf * v[p];
    out[N + p] += wf * v[N + p];
  }
  return out;
}

/// Gross-Pitaevskii energy of a field. The bilinear part reuses one static
/// matvec: E = 1/2 x^T (2K + WV + Omega R) x + 1/2 sum w F(rho).
inline double energy(const ModelInstance& m, const ComplexField& phi) {
  if (!phi.all_finite()) throw std::invalid_argument("energy: field has non-finite entries");
  const Eigen::VectorXd& x = phi.data;
  const Eigen::VectorXd hx = apply_static(m, x);
  const double quad = kahan_dot(x, hx);
  const int N = m.num_nodes();
  double nl = 0.0, comp2 = 0.0;
  for (int p = 0; p < N; ++p) {
    const double rho = x[p] * x[p] + x[N + p] * x[N + p];
    const double term = m.grid.weights[p] * m.nonlin.F(rho) - comp2;
    const double next = nl + term;
    comp2 = (next - nl) - term;
    nl = next;
  }
  return 0.5 * quad + 0.5 * nl;
}

/// Euclidean gradient E'(phi) = H_phi phi in dual coordinates.
inline Eigen::VectorXd euclid_grad(const ModelInstance& m, const ComplexField& phi) {
  if (!phi.all_finite()) throw std::invalid_argument("euclid_grad: non-finite field");
  return apply_h(m, density(m, phi.data), phi.data);
}

/// lambda_tilde = <H_phi phi, phi>, the nonlinear eigenvalue at phi.
inline double lambda_tilde(const ModelInstance& m, const ComplexField& phi) {
  if (!phi.normalized) throw std::invalid_argument("lambda_tilde: field not normalized");
  return kahan_dot(phi.data, euclid_grad(m, phi));
}

/// Nodal residual H phi - lambda phi given the precomputed dual-coordinate
/// H phi; the weight inverse converts dual values back to nodal ones.
inline Eigen::VectorXd nodal_residual(const ModelInstance& m, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& hphi, double lambda) {
  const int N = m.num_nodes();
  Eigen::VectorXd res(2 * N);
  for (int p = 0; p < N; ++p) {
    const double iw = 1.0 / m.grid.weights[p];
    res[p] = hphi[p] * iw - lambda * x[p];
    res[N + p] = hphi[N + p] * iw - lambda * x[N + p];
  }
  return res;
}

inline double residual_inf_from(const ModelInstance& m, const Eigen::VectorXd& res) {
  const int N = m.num_nodes();
  double worst = 0.0;
  for (int p = 0; p < N; ++p)
    worst = std::max(worst, std::hypot(res[p], res[N + p]));
  return worst;
}

/// r = || H phi - <H phi, phi> phi ||_inf over nodes (complex modulus).
inline double residual_inf(const ModelInstance& m, const ComplexField& phi) {
  if (!phi.normalized) throw std::invalid_argument("residual_inf: field not normalized");
  const Eigen::VectorXd hphi = euclid_grad(m, phi);
  const double lam = kahan_dot(phi.data, hphi);
  return residual_inf_from(m, nodal_residual(m, phi.data, hphi, lam));
}

/// Hessian action E''(phi) v = H_phi v + f'(rho)(|phi|^2 v + phi^2 conj v) in
/// dual coordinates. The realified second term is, per node, the rank-one
/// block 2 f'(rho) (a,b)(a,b)^T with (a,b) = (Re phi, Im phi).
inline Eigen::VectorXd hessian_apply(const ModelInstance& m, const ComplexField& phi,
                                     const Eigen::VectorXd& v) {
  const int N = m.num_nodes();
  const Eigen::VectorXd rho = density(m, phi.data);
  Eigen::VectorXd out = apply_h(m, rho, v);
  for (int p = 0; p < N; ++p) {
    const double a = phi.data[p], b = phi.data[N + p];
    const double c = 2.0 * m.nonlin.fprime(rho[p]) * m.grid.weights[p];
    if (c != 0.0) {
      const double dot = a * v[p] + b * v[N + p];
      out[p] += c * a * dot;
      out[N + p] += c * b * dot;
    }
  }
  return out;
}

/// Assembles E''(phi) as a sparse symmetric 2N x 2N matrix (dual coordinates):
/// h_static + W diag(f(rho)) + per-node rank-one nonlinear blocks.
inline SparseSymOperator assemble_hessian(const ModelInstance& m, const ComplexField& phi) {
  const int N = m.num_nodes();
  const Eigen::VectorXd rho = density(m, phi.data);
  Eigen::SparseMatrix<double> extra(2 * N, 2 * N);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(N) * 4);
  for (int p = 0; p < N; ++p) {
    const double w = m.grid.weights[p];
    const double fd = w * m.nonlin.f(rho[p]);
    const double a = phi.data[p], b = phi.data[N + p];
    const double c = 2.0 * m.nonlin.fprime(rho[p]) * w;
    const double daa = fd + c * a * a;
    const double dbb = fd + c * b * b;
    const double dab = c * a * b;
    if (daa != 0.0) trip.emplace_back(p, p, daa);
    if (dbb != 0.0) trip.emplace_back(N + p, N + p, dbb);
    if (dab != 0.0) {
      trip.emplace_back(p, N + p, dab);
      trip.emplace_back(N + p, p, dab);
    }
  }
  extra.setFromTriplets(trip.begin(), trip.end());
  SparseSymOperator op;
  op.mat = m.h_static + extra;
  op.mat.makeCompressed();
  return op;
}

/// E''(phi) - lambda * mass, the shifted Hessian pencil numerator.
inline Eigen::SparseMatrix<double> assemble_shifted_hessian(const ModelInstance& m,
                                                            const ComplexField& phi,
                                                            double lambda) {
  Eigen::SparseMatrix<double> A = assemble_hessian(m, phi).mat;
  A -= lambda * assemble_mass(m.grid).mat;
  A.makeCompressed();
  return A;
}

}  // namespace gpdisk
