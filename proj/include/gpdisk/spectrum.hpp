#pragma once

#include "gpdisk/model.hpp"
#include "gpdisk/precond.hpp"
#include "gpdisk/riemann.hpp"

#include <Eigen/Core>
#include <Eigen/Dense>

#include <lapacke.h>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpdisk {

/// Basis of the symmetry (kernel) directions at a converged state:
/// k1 = i phi always, k2 = i L_z phi = d/dtheta phi when it survives
/// projection. Orthonormal in the factor-product metric.
struct KernelBasis {
  std::vector<Eigen::VectorXd> vecs;
  bool k2_dropped = false;
  int size() const { return static_cast<int>(vecs.size()); }
};

inline KernelBasis kernel_basis(const ModelInstance& m, const ComplexField& phi_g,
                                const FactorizedMetric& metric, bool use_k2) {
  if (!phi_g.normalized) throw std::invalid_argument("kernel_basis: phi_g not normalized");
  KernelBasis out;

  Eigen::VectorXd k1 = times_i(phi_g.data);
  k1 = tangent_project_l2(m.grid, phi_g, k1);
  const double n1 = std::sqrt(product_inner(metric, k1, k1));
  if (!(n1 > 1e-14))
    throw std::runtime_error("kernel_basis: degenerate phase generator");
  k1 /= n1;
  out.vecs.push_back(k1);

  if (use_k2) {
    const int N = m.num_nodes();
    Eigen::VectorXd k2(2 * N);
    k2.head(N) = m.dtheta * phi_g.data.head(N);
    k2.tail(N) = m.dtheta * phi_g.data.tail(N);
    const double pre = std::sqrt(product_inner(metric, k2, k2));
    k2 = tangent_project_l2(m.grid, phi_g, k2);
    // modified Gram-Schmidt against k1 in the product metric
    k2 -= product_inner(metric, k1, k2) * k1;
    k2 -= product_inner(metric, k1, k2) * k1;
    const double post = std::sqrt(std::max(0.0, product_inner(metric, k2, k2)));
    if (post <= 1e-8 * std::max(1.0, pre)) {
      out.k2_dropped = true;
    } else {
      out.vecs.push_back(k2 / post);
    }
  }
  return out;
}

struct RateConstants {
  double mu = 0.0;
  double L = 0.0;
  double L_nodeflate = 0.0;
  double kappa = 0.0;
  double lambda_used = 0.0;
  double lambda_p_discrepancy = 0.0;
  int deflation_dim = 0;
  std::string solver;  // "dense" or "iterative"
  bool morse_bott_ok = true;
};

inline double rho_tau(const RateConstants& c, double tau) {
  return std::max(std::abs(1.0 - tau * c.mu), std::abs(1.0 - tau * c.L));
}

inline double tau_opt(const RateConstants& c) { return 2.0 / (c.L + c.mu); }

inline double rho_opt(const RateConstants& c) { return (c.L - c.mu) / (c.L + c.mu); }

struct MorseBottReport {
  std::vector<double> lowest;  // lowest q pencil eigenvalues (tangency only)
  double L = 0.0;
  double theta0 = 0.0;  // zero-mode threshold 1e-6 * L (config factor)
  int near_zero_count = 0;
  int expected_kernel_dim = 0;
  double next_eigenvalue = 0.0;
  bool consistent = false;
  std::string solver;
};

namespace detail {

inline void csc_forward_solve_vec(const IctFactor& L, double* t) {
  for (int k = 0; k < L.n; ++k) {
    const int c0 = L.colptr[k], c1 = L.colptr[k + 1];
    const double xk = t[k] / L.vals[c0];
    t[k] = xk;
    for (int idx = c0 + 1; idx < c1; ++idx) t[L.rowind[idx]] -= L.vals[idx] * xk;
  }
}

inline void csc_backward_solve_vec(const IctFactor& L, double* t) {
  for (int k = L.n - 1; k >= 0; --k) {
    const int c0 = L.colptr[k], c1 = L.colptr[k + 1];
    double acc = t[k];
    for (int idx = c0 + 1; idx < c1; ++idx) acc -= L.vals[idx] * t[L.rowind[idx]];
    t[k] = acc / L.vals[c0];
  }
}

/// Standard-form reduction of the pencil (A, L L^T): M = L^{-1} A L^{-T} in
/// the factor's permuted coordinates, computed once and shared by all
/// constraint variants. A constraint c^T v = 0 maps to (L^{-1} Pi c)^T y = 0
/// with y = L^T Pi v.
struct DenseStdPencil {
  int n = 0;
  Eigen::MatrixXd M;
  const IctFactor* factor = nullptr;

  Eigen::VectorXd map_constraint(const Eigen::VectorXd& c) const {
    Eigen::VectorXd t(n);
    for (int k = 0; k < n; ++k) t[k] = c[factor->order[k]];
    csc_forward_solve_vec(*factor, t.data());
    return t;
  }
  /// y (reduced standard-form vector) -> v in original coordinates
  Eigen::VectorXd map_back(const Eigen::VectorXd& y) const {
    Eigen::VectorXd t = y;
    csc_backward_solve_vec(*factor, t.data());
    Eigen::VectorXd v(n);
    for (int k = 0; k < n; ++k) v[factor->order[k]] = t[k];
    return v;
  }
};

inline DenseStdPencil build_std_pencil(const Eigen::SparseMatrix<double>& A,
                                       const IctFactor& L) {
  DenseStdPencil P;
  P.n = L.n;
  P.factor = &L;
  const int n = L.n;
  Eigen::MatrixXd Ap = Eigen::MatrixXd::Zero(n, n);
  for (int c = 0; c < A.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, c); it; ++it)
      Ap(L.rank[it.row()], L.rank[it.col()]) = it.value();
  // T = L^{-1} Ap, then M = L^{-1} T^T
  for (int j = 0; j < n; ++j) csc_forward_solve_vec(L, Ap.col(j).data());
  Eigen::MatrixXd T = Ap.transpose();
  for (int j = 0; j < n; ++j) csc_forward_solve_vec(L, T.col(j).data());
  P.M = 0.5 * (T + T.transpose());
  return P;
}

struct DenseEigResult {
  std::vector<double> values;   // all eigenvalues of the constrained pencil
  Eigen::MatrixXd vectors;      // optional selected vectors (original coords)
  std::vector<int> vector_ids;  // indices (into values) of returned vectors
};

/// All eigenvalues of M restricted to the orthogonal complement of the
/// constraint columns (standard-form coordinates); optionally a few
/// eigenvectors selected by 1-based ascending indices.
inline DenseEigResult dense_constrained_all(const DenseStdPencil& P,
                                            const std::vector<Eigen::VectorXd>& constraints,
                                            const std::vector<int>& want_vecs = {}) {
  const lapack_int n = P.n;
  const lapack_int c = static_cast<lapack_int>(constraints.size());
  Eigen::MatrixXd M = P.M;
  Eigen::MatrixXd Cq(n, std::max<lapack_int>(1, c));
  std::vector<double> tau_qr(std::max<lapack_int>(1, c));
  if (c > 0) {
    for (lapack_int j = 0; j < c; ++j) Cq.col(j) = constraints[j];
    if (LAPACKE_dgeqrf(LAPACK_COL_MAJOR, n, c, Cq.data(), n, tau_qr.data()) != 0)
      throw std::runtime_error("dense_constrained_all: dgeqrf failed");
    if (LAPACKE_dormqr(LAPACK_COL_MAJOR, 'L', 'T', n, n, c, Cq.data(), n, tau_qr.data(),
                       M.data(), n) != 0)
      throw std::runtime_error("dense_constrained_all: dormqr L failed");
    if (LAPACKE_dormqr(LAPACK_COL_MAJOR, 'R', 'N', n, n, c, Cq.data(), n, tau_qr.data(),
                       M.data(), n) != 0)
      throw std::runtime_error("dense_constrained_all: dormqr R failed");
  }
  const lapack_int nr = n - c;
  Eigen::MatrixXd Mr = M.bottomRightCorner(nr, nr);

  DenseEigResult out;
  out.values.resize(nr);
  if (want_vecs.empty()) {
    if (LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'N', 'L', nr, Mr.data(), nr, out.values.data()) != 0)
      throw std::runtime_error("dense_constrained_all: dsyevd failed");
  } else {
    if (LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', nr, Mr.data(), nr, out.values.data()) != 0)
      throw std::runtime_error("dense_constrained_all: dsyevd (vectors) failed");
    out.vectors.resize(n, static_cast<int>(want_vecs.size()));
    out.vector_ids = want_vecs;
    int col = 0;
    for (int id : want_vecs) {
      Eigen::VectorXd full = Eigen::VectorXd::Zero(n);
      full.tail(nr) = Mr.col(id - 1);
      if (c > 0) {
        if (LAPACKE_dormqr(LAPACK_COL_MAJOR, 'L', 'N', n, 1, c, Cq.data(), n, tau_qr.data(),
                           full.data(), n) != 0)
          throw std::runtime_error("dense_constrained_all: dormqr back-map failed");
      }
      out.vectors.col(col++) = P.map_back(full);
    }
  }
  return out;
}

/// Euclidean-orthonormal basis of the constraint columns (thin QR), used to
/// keep iterative blocks in the constrained subspace.
struct ConstraintProjector {
  Eigen::MatrixXd Q;  // n x c, orthonormal
  void project(Eigen::Ref<Eigen::MatrixXd> X) const {
    if (Q.cols() == 0) return;
    X -= Q * (Q.transpose() * X);
  }
  void project_vec(Eigen::VectorXd& x) const {
    if (Q.cols() == 0) return;
    x -= Q * (Q.transpose() * x);
  }
};

inline ConstraintProjector make_projector(const Eigen::MatrixXd& C) {
  ConstraintProjector p;
  if (C.cols() == 0) {
    p.Q.resize(C.rows(), 0);
    return p;
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(C);
  p.Q = qr.householderQ() * Eigen::MatrixXd::Identity(C.rows(), C.cols());
  return p;
}

inline Eigen::MatrixXd random_block(int n, int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto gauss = [&rng]() {
    const double u1 = (rng() >> 11) * 0x1.0p-53 + 0x1.0p-54;
    const double u2 = (rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  };
  Eigen::MatrixXd X(n, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i) X(i, j) = gauss();
  return X;
}

/// B-orthonormalizes X in place (Cholesky of the small Gram matrix, with a
/// re-orthonormalization pass). Returns false when the block is degenerate.
template <class BOp>
inline bool b_orthonormalize(Eigen::MatrixXd& X, Eigen::MatrixXd& BX, const BOp& applyB) {
  for (int pass = 0; pass < 2; ++pass) {
    BX.resize(X.rows(), X.cols());
    for (int j = 0; j < X.cols(); ++j) BX.col(j) = applyB(X.col(j));
    Eigen::MatrixXd G = X.transpose() * BX;
    G = 0.5 * (G + G.transpose()).eval();
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) return false;
    Eigen::MatrixXd Rinv =
        llt.matrixU().solve(Eigen::MatrixXd::Identity(X.cols(), X.cols()));
    X = (X * Rinv).eval();
    BX = (BX * Rinv).eval();
  }
  return true;
}

struct IterativeEigResult {
  std::vector<double> values;
  Eigen::MatrixXd vectors;
  int iterations = 0;
  bool converged = false;
};

/// Locally optimal block preconditioned eigeniteration for the smallest
/// eigenvalues of the pencil (A, B), with Euclidean constraints re-enforced
/// every step. T is the preconditioner applied to residuals.
template <class AOp, class BOp, class TOp>
inline IterativeEigResult lobpcg_smallest(int n, const AOp& applyA, const BOp& applyB,
                                          const TOp& applyT, const ConstraintProjector& cons,
                                          int nev, int block, double tol, int maxit,
                                          std::uint64_t seed) {
  block = std::max(block, nev + 2);
  Eigen::MatrixXd X = random_block(n, block, seed);
  cons.project(X);
  Eigen::MatrixXd BX;
  if (!b_orthonormalize(X, BX, applyB))
    throw std::runtime_error("lobpcg: degenerate start block");
  Eigen::MatrixXd P(n, 0);

  IterativeEigResult out;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(block);
  for (int it = 0; it < maxit; ++it) {
    out.iterations = it + 1;
    Eigen::MatrixXd AX(n, block);
    for (int j = 0; j < block; ++j) AX.col(j) = applyA(X.col(j));

    // Rayleigh-Ritz on X alone gives current estimates
    Eigen::MatrixXd Ax = X.transpose() * AX;
    Ax = 0.5 * (Ax + Ax.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Ax);
    theta = es.eigenvalues();
    X = (X * es.eigenvectors()).eval();
    AX = (AX * es.eigenvectors()).eval();
    BX = (BX * es.eigenvectors()).eval();

    // residuals and convergence on the nev wanted pairs
    Eigen::MatrixXd R(n, block);
    double worst = 0.0;
    for (int j = 0; j < block; ++j) {
      R.col(j) = AX.col(j) - theta[j] * BX.col(j);
      if (j < nev) {
        const double denom = AX.col(j).norm() + std::abs(theta[j]) * BX.col(j).norm();
        worst = std::max(worst, R.col(j).norm() / std::max(denom, 1e-300));
      }
    }
    if (worst < tol) {
      out.converged = true;
      break;
    }

    Eigen::MatrixXd W(n, block);
    for (int j = 0; j < block; ++j) W.col(j) = applyT(R.col(j));
    cons.project(W);

    Eigen::MatrixXd S(n, block + W.cols() + P.cols());
    S.leftCols(block) = X;
    S.middleCols(block, W.cols()) = W;
    if (P.cols() > 0) S.rightCols(P.cols()) = P;

    Eigen::MatrixXd BS;
    if (!b_orthonormalize(S, BS, applyB)) {
      // drop the history block and retry once
      S = Eigen::MatrixXd(n, 2 * block);
      S.leftCols(block) = X;
      S.rightCols(block) = W;
      if (!b_orthonormalize(S, BS, applyB)) break;
    }
    Eigen::MatrixXd AS(n, S.cols());
    for (int j = 0; j < S.cols(); ++j) AS.col(j) = applyA(S.col(j));
    Eigen::MatrixXd GA = S.transpose() * AS;
    GA = 0.5 * (GA + GA.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> rr(GA);
    Eigen::MatrixXd Y = rr.eigenvectors().leftCols(block);

    Eigen::MatrixXd Xnew = S * Y;
    // implicit P: the part of the new block outside span(X)
    Eigen::MatrixXd Ydefl = Y;
    Ydefl.topRows(block).setZero();
    P = S * Ydefl;
    X = Xnew;
    cons.project(X);
    if (!b_orthonormalize(X, BX, applyB)) break;
  }
  out.values.assign(theta.data(), theta.data() + nev);
  out.vectors = X.leftCols(nev);
  return out;
}

/// Power-type (block orthogonal) iteration on B^{-1} A for the largest
/// pencil eigenvalue, constraints re-enforced every step.
template <class AOp, class TOp, class BOp>
inline IterativeEigResult subspace_largest(int n, const AOp& applyA, const BOp& applyB,
                                           const TOp& applyT, const ConstraintProjector& cons,
                                           int block, double tol, int maxit,
                                           std::uint64_t seed) {
  Eigen::MatrixXd X = random_block(n, block, seed);
  cons.project(X);
  Eigen::MatrixXd BX;
  if (!b_orthonormalize(X, BX, applyB))
    throw std::runtime_error("subspace_largest: degenerate start block");

  IterativeEigResult out;
  double prev = 0.0;
  int stable = 0;
  for (int it = 0; it < maxit; ++it) {
    out.iterations = it + 1;
    Eigen::MatrixXd Y(n, block);
    for (int j = 0; j < block; ++j) Y.col(j) = applyT(applyA(X.col(j)));
    cons.project(Y);
    Eigen::MatrixXd BY;
    if (!b_orthonormalize(Y, BY, applyB)) break;
    Eigen::MatrixXd AY(n, block);
    for (int j = 0; j < block; ++j) AY.col(j) = applyA(Y.col(j));
    Eigen::MatrixXd G = Y.transpose() * AY;
    G = 0.5 * (G + G.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    X = (Y * es.eigenvectors()).eval();
    BX = (BY * es.eigenvectors()).eval();
    const double cur = es.eigenvalues().maxCoeff();
    if (it > 0 && std::abs(cur - prev) <= tol * std::max(1.0, std::abs(cur))) {
      if (++stable >= 5) {
        out.converged = true;
        prev = cur;
        break;
      }
    } else {
      stable = 0;
    }
    prev = cur;
  }
  out.values = {prev};
  out.vectors = X.rightCols(1);
  return out;
}

}  // namespace detail

struct SpectrumOptions {
  int dense_cap = 8192;    // use the dense path when 2N <= dense_cap
  int q = 6;               // Morse-Bott: number of lowest eigenvalues
  double theta0_factor = 1e-6;
  int block = 8;
  double tol = 1e-9;
  int maxit = 20000;
  std::uint64_t seed = 1;
};

namespace detail {

struct PencilSetup {
  Eigen::SparseMatrix<double> A;
  Eigen::VectorXd t0;              // tangency constraint vector W phi
  std::vector<Eigen::VectorXd> defl;  // deflation constraints B k_i
  double lambda = 0.0;
};

inline PencilSetup pencil_setup(const ModelInstance& m, const ComplexField& phi_g,
                                const FactorizedMetric& metric, const KernelBasis* kernel) {
  PencilSetup s;
  s.lambda = lambda_tilde(m, phi_g);
  s.A = assemble_shifted_hessian(m, phi_g, s.lambda);
  s.t0 = m.grid.w2.cwiseProduct(phi_g.data);
  if (kernel)
    for (const auto& k : kernel->vecs) s.defl.push_back(product_apply(metric, k));
  return s;
}

inline Eigen::MatrixXd constraint_matrix(const PencilSetup& s, bool with_deflation) {
  const int n = static_cast<int>(s.t0.size());
  const int c = 1 + (with_deflation ? static_cast<int>(s.defl.size()) : 0);
  Eigen::MatrixXd C(n, c);
  C.col(0) = s.t0;
  if (with_deflation)
    for (size_t i = 0; i < s.defl.size(); ++i) C.col(1 + static_cast<int>(i)) = s.defl[i];
  return C;
}

}  // namespace detail

/// Shared evaluation state for the spectral diagnostics at one
/// (model, phi_g, metric) triple; the dense standard-form reduction is
/// computed once and reused across constraint variants.
class SpectrumEngine {
 public:
  SpectrumEngine(const ModelInstance& m, const ComplexField& phi_g,
                 const FactorizedMetric& metric, const KernelBasis& kernel,
                 const SpectrumOptions& opts = {})
      : m_(m), phi_(phi_g), metric_(metric), kernel_(kernel), opts_(opts) {
    setup_ = detail::pencil_setup(m, phi_g, metric, &kernel);
    dense_ = m.dim() <= opts.dense_cap;
    if (dense_) std_ = detail::build_std_pencil(setup_.A, metric.factor);
  }

  bool dense() const { return dense_; }
  double lambda() const { return setup_.lambda; }

  /// All constrained pencil eigenvalues (dense path only), cached.
  const std::vector<double>& dense_values(bool with_deflation) {
    auto& slot = with_deflation ? vals_defl_ : vals_tan_;
    if (!slot) {
      auto r = detail::dense_constrained_all(std_, std_constraints(with_deflation));
      slot = std::move(r.values);
    }
    return *slot;
  }

  /// Selected eigenvectors by ascending 1-based index (dense path; tests).
  detail::DenseEigResult dense_vectors(bool with_deflation, const std::vector<int>& ids) {
    return detail::dense_constrained_all(std_, std_constraints(with_deflation), ids);
  }

  RateConstants rate_constants() {
    RateConstants rc;
    rc.lambda_used = setup_.lambda;
    rc.deflation_dim = kernel_.size();
    if (dense_) {
      rc.solver = "dense";
      const auto& wd = dense_values(true);
      const auto& wn = dense_values(false);
      rc.mu = wd.front();
      rc.L = wd.back();
      rc.L_nodeflate = wn.back();
    } else {
      rc.solver = "iterative";
      auto consD = detail::make_projector(detail::constraint_matrix(setup_, true));
      auto consN = detail::make_projector(detail::constraint_matrix(setup_, false));
      auto lo = detail::lobpcg_smallest(m_.dim(), applyA(), applyB(), applyT(), consD, 1,
                                        opts_.block, opts_.tol, opts_.maxit, opts_.seed);
      auto hi = detail::subspace_largest(m_.dim(), applyA(), applyB(), applyT(), consD,
                                         opts_.block, opts_.tol, opts_.maxit, opts_.seed + 1);
      auto hiN = detail::subspace_largest(m_.dim(), applyA(), applyB(), applyT(), consN,
                                          opts_.block, opts_.tol, opts_.maxit, opts_.seed + 2);
      rc.mu = lo.values.front();
      rc.L = hi.values.front();
      rc.L_nodeflate = hiN.values.front();
    }
    if (rc.mu <= -1e-8) rc.morse_bott_ok = false;
    rc.kappa = rc.L / rc.mu;
    RiemannianGrad rg = riemannian_grad(m_, phi_, metric_);
    rc.lambda_p_discrepancy = std::abs(rg.lambda_p - setup_.lambda);
    return rc;
  }

  MorseBottReport morse_bott(int expected_kernel_dim) {
    MorseBottReport rep;
    rep.expected_kernel_dim = expected_kernel_dim;
    const int q = std::min(opts_.q, m_.dim() - 2);
    if (dense_) {
      rep.solver = "dense";
      const auto& w = dense_values(false);
      rep.lowest.assign(w.begin(), w.begin() + std::min<size_t>(q, w.size()));
      rep.L = w.back();
    } else {
      rep.solver = "iterative";
      auto cons = detail::make_projector(detail::constraint_matrix(setup_, false));
      auto lo = detail::lobpcg_smallest(m_.dim(), applyA(), applyB(), applyT(), cons, q,
                                        std::max(opts_.block, q + 2), opts_.tol, opts_.maxit,
                                        opts_.seed);
      auto hi = detail::subspace_largest(m_.dim(), applyA(), applyB(), applyT(), cons,
                                         opts_.block, opts_.tol, opts_.maxit, opts_.seed + 1);
      rep.lowest = lo.values;
      rep.L = hi.values.front();
    }
    rep.theta0 = opts_.theta0_factor * rep.L;
    rep.near_zero_count = 0;
    for (double v : rep.lowest)
      if (v < rep.theta0) ++rep.near_zero_count;
    rep.next_eigenvalue = rep.near_zero_count < static_cast<int>(rep.lowest.size())
                              ? rep.lowest[rep.near_zero_count]
                              : std::numeric_limits<double>::quiet_NaN();
    rep.consistent = rep.near_zero_count == rep.expected_kernel_dim &&
                     std::isfinite(rep.next_eigenvalue) &&
                     rep.next_eigenvalue > 10.0 * rep.theta0;
    return rep;
  }

 private:
  std::vector<Eigen::VectorXd> std_constraints(bool with_deflation) {
    std::vector<Eigen::VectorXd> cs;
    cs.push_back(std_.map_constraint(setup_.t0));
    if (with_deflation)
      for (const auto& d : setup_.defl) cs.push_back(std_.map_constraint(d));
    return cs;
  }
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> applyA() {
    return [this](const Eigen::VectorXd& v) -> Eigen::VectorXd { return setup_.A * v; };
  }
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> applyB() {
    return [this](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      return product_apply(metric_, v);
    };
  }
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> applyT() {
    return [this](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      return apply_inverse(metric_, v);
    };
  }

  const ModelInstance& m_;
  const ComplexField& phi_;
  const FactorizedMetric& metric_;
  const KernelBasis& kernel_;
  SpectrumOptions opts_;
  detail::PencilSetup setup_;
  bool dense_ = false;
  detail::DenseStdPencil std_;
  std::optional<std::vector<double>> vals_defl_, vals_tan_;
};

/// Extremal generalized Rayleigh quotients of E''(phi_g) - lambda~ mass
/// against the factor-product metric on the kernel-deflated tangent space
/// (mu, L), plus L recomputed without deflation (equal for any metric).
/// Dense path on small problems, deflated LOBPCG + power-type iteration
/// otherwise.
inline RateConstants rate_constants(const ModelInstance& m, const ComplexField& phi_g,
                                    const FactorizedMetric& metric, const KernelBasis& kernel,
                                    const SpectrumOptions& opts = {}) {
  SpectrumEngine eng(m, phi_g, metric, kernel, opts);
  return eng.rate_constants();
}

/// Lowest q eigenvalues of the pencil with only the tangency constraint
/// (no kernel deflation); counts near-zero modes against
/// theta0 = theta0_factor * L and reports Morse-Bott consistency.
inline MorseBottReport morse_bott_check(const ModelInstance& m, const ComplexField& phi_g,
                                        const FactorizedMetric& metric,
                                        const KernelBasis& kernel,
                                        const SpectrumOptions& opts = {}) {
  SpectrumEngine eng(m, phi_g, metric, kernel, opts);
  return eng.morse_bott(kernel.size());
}

}  // namespace gpdisk
