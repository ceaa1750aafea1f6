#pragma once

#include "gpdisk/model.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpdisk {

enum class MetricKind { identity_mass, kinetic_plus_potential, hessian, optimal_shifted };
enum class Ordering { amd, natural };

struct PrecondSpec {
  MetricKind kind = MetricKind::optimal_shifted;
  double sigma0 = 0.1;      // > 0, optimal_shifted only
  double droptol = 0.0;     // delta >= 0; 0 means exact factorization
  Ordering ordering = Ordering::amd;
  int refresh_interval = 100;  // m >= 1, iterations between rebuilds

  void validate() const {
    if (kind == MetricKind::optimal_shifted && !(sigma0 > 0.0))
      throw std::invalid_argument("PrecondSpec: sigma0 must be > 0");
    if (!(droptol >= 0.0)) throw std::invalid_argument("PrecondSpec: droptol must be >= 0");
    if (refresh_interval < 1)
      throw std::invalid_argument("PrecondSpec: refresh interval must be >= 1");
  }
};

/// Fill-reducing approximate-minimum-degree permutation of a symmetric
/// pattern; order[k] is the original index eliminated k-th. Deterministic.
inline std::vector<int> amd_ordering(const Eigen::SparseMatrix<double>& pattern) {
  Eigen::AMDOrdering<int> amd;
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm;
  Eigen::SparseMatrix<double> lower = pattern.triangularView<Eigen::Lower>();
  amd(lower.selfadjointView<Eigen::Lower>(), perm);
  const int n = static_cast<int>(pattern.rows());
  std::vector<int> order(n);
  for (int k = 0; k < n; ++k) order[k] = perm.indices()[k];
  return order;
}

inline std::vector<int> natural_ordering(int n) {
  std::vector<int> order(n);
  for (int k = 0; k < n; ++k) order[k] = k;
  return order;
}

/// Lower-triangular incomplete Cholesky factor in CSC storage, indexed in the
/// permuted space. The diagonal entry of each column is stored first.
struct IctFactor {
  int n = 0;
  std::vector<int> colptr;
  std::vector<int> rowind;
  std::vector<double> vals;
  std::vector<int> order;  // order[k] = original index at permuted position k
  std::vector<int> rank;   // rank[original] = permuted position
  double shift = 0.0;      // diagonal shift alpha actually applied (times mass)
  int shift_doublings = 0;

  std::int64_t nonzeros() const { return static_cast<std::int64_t>(vals.size()); }
};

namespace detail {

struct PermutedLower {
  int n = 0;
  std::vector<int> colptr, rowind;
  std::vector<double> vals;
  std::vector<double> colnorm;    // 2-norm of the full symmetric column
  std::vector<double> diag_mass;  // permuted mass diagonal (for shifts)
  double max_diag = 0.0;
};

inline PermutedLower permute_lower(const Eigen::SparseMatrix<double>& A,
                                   const Eigen::VectorXd& w2, const std::vector<int>& order) {
  const int n = static_cast<int>(A.rows());
  PermutedLower P;
  P.n = n;
  std::vector<int> rank(n);
  for (int k = 0; k < n; ++k) rank[order[k]] = k;

  std::vector<int> count(n, 0);
  for (int c = 0; c < A.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, c); it; ++it) {
      const int pr = rank[it.row()], pc = rank[it.col()];
      if (pr >= pc) ++count[pc];
    }
  P.colptr.assign(n + 1, 0);
  for (int j = 0; j < n; ++j) P.colptr[j + 1] = P.colptr[j] + count[j];
  P.rowind.resize(P.colptr[n]);
  P.vals.resize(P.colptr[n]);
  std::vector<int> fill = P.colptr;
  for (int c = 0; c < A.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, c); it; ++it) {
      const int pr = rank[it.row()], pc = rank[it.col()];
      if (pr >= pc) {
        P.rowind[fill[pc]] = pr;
        P.vals[fill[pc]] = it.value();
        ++fill[pc];
      }
    }
  // sort rows within each column (diagonal ends up first)
  for (int j = 0; j < n; ++j) {
    std::vector<std::pair<int, double>> col;
    col.reserve(P.colptr[j + 1] - P.colptr[j]);
    for (int t = P.colptr[j]; t < P.colptr[j + 1]; ++t) col.emplace_back(P.rowind[t], P.vals[t]);
    std::sort(col.begin(), col.end());
    for (int t = P.colptr[j]; t < P.colptr[j + 1]; ++t) {
      P.rowind[t] = col[t - P.colptr[j]].first;
      P.vals[t] = col[t - P.colptr[j]].second;
    }
  }
  P.colnorm.assign(n, 0.0);
  P.diag_mass.resize(n);
  P.max_diag = 0.0;
  for (int j = 0; j < n; ++j) {
    P.diag_mass[j] = w2[order[j]];
    for (int t = P.colptr[j]; t < P.colptr[j + 1]; ++t) {
      const double v2 = P.vals[t] * P.vals[t];
      P.colnorm[j] += v2;
      if (P.rowind[t] != j)
        P.colnorm[P.rowind[t]] += v2;  // mirrored upper entry
      else
        P.max_diag = std::max(P.max_diag, std::abs(P.vals[t]));
    }
  }
  for (int j = 0; j < n; ++j) P.colnorm[j] = std::sqrt(P.colnorm[j]);
  return P;
}

/// One factorization attempt at fixed shift; returns false on a nonpositive
/// (or non-finite) pivot. Left-looking column IC with linked row lists and
/// threshold dropping: a computed entry is dropped when
/// |value| < droptol * ||A(:,j)||_2.
inline bool ict_attempt(const PermutedLower& A, double droptol, double alpha, IctFactor& L) {
  const int n = A.n;
  L.n = n;
  L.colptr.assign(1, 0);
  L.rowind.clear();
  L.vals.clear();
  L.rowind.reserve(A.rowind.size() * 2);
  L.vals.reserve(A.vals.size() * 2);

  std::vector<int> llist(n, -1), lnext(n, -1), lptr(n, 0);
  std::vector<double> work(n, 0.0);
  std::vector<int> pattern;
  std::vector<char> inpat(n, 0);

  for (int j = 0; j < n; ++j) {
    pattern.clear();
    for (int t = A.colptr[j]; t < A.colptr[j + 1]; ++t) {
      const int r = A.rowind[t];
      work[r] = A.vals[t];
      inpat[r] = 1;
      pattern.push_back(r);
    }
    if (!inpat[j]) {
      work[j] = 0.0;
      inpat[j] = 1;
      pattern.push_back(j);
    }
    work[j] += alpha * A.diag_mass[j];

    // apply updates from all columns k with L(j,k) != 0
    int k = llist[j];
    while (k != -1) {
      const int knext = lnext[k];
      const double ljk = L.vals[lptr[k]];
      for (int t = lptr[k]; t < L.colptr[k + 1]; ++t) {
        const int r = L.rowind[t];
        if (!inpat[r]) {
          work[r] = 0.0;
          inpat[r] = 1;
          pattern.push_back(r);
        }
        work[r] -= ljk * L.vals[t];
      }
      ++lptr[k];
      if (lptr[k] < L.colptr[k + 1]) {
        const int nr = L.rowind[lptr[k]];
        lnext[k] = llist[nr];
        llist[nr] = k;
      }
      k = knext;
    }

    const double d = work[j];
    if (!(d > 0.0) || !std::isfinite(d)) {
      for (int r : pattern) inpat[r] = 0;
      return false;
    }
    const double ljj = std::sqrt(d);
    const double thresh = droptol * A.colnorm[j];

    std::sort(pattern.begin(), pattern.end());
    L.rowind.push_back(j);
    L.vals.push_back(ljj);
    for (int r : pattern) {
      if (r <= j) {
        inpat[r] = 0;
        continue;
      }
      inpat[r] = 0;
      const double v = work[r] / ljj;
      if (v != 0.0 && std::abs(v) >= thresh) {
        L.rowind.push_back(r);
        L.vals.push_back(v);
      }
    }
    L.colptr.push_back(static_cast<int>(L.rowind.size()));

    if (L.colptr[j + 1] - L.colptr[j] > 1) {
      lptr[j] = L.colptr[j] + 1;
      const int nr = L.rowind[lptr[j]];
      lnext[j] = llist[nr];
      llist[nr] = j;
    }
  }
  return true;
}

}  // namespace detail

/// Incomplete Cholesky with threshold dropping and shift restart: on a
/// nonpositive pivot the factorization restarts with a diagonal shift
/// alpha * mass, doubling alpha from 1e-8 * max(diag) until it succeeds.
/// alpha_hint (from a previous build of the same operator family) is tried
/// right after the unshifted attempt.
inline IctFactor ict_factorize(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& w2,
                               double droptol, const std::vector<int>& order,
                               double alpha_hint = 0.0) {
  for (int c = 0; c < A.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, c); it; ++it)
      if (!std::isfinite(it.value()))
        throw std::runtime_error("ict_factorize: matrix has non-finite entries");

  detail::PermutedLower P = detail::permute_lower(A, w2, order);
  IctFactor L;
  L.order = order;
  L.rank.resize(P.n);
  for (int k = 0; k < P.n; ++k) L.rank[order[k]] = k;

  const double alpha0 = 1e-8 * P.max_diag;
  double alpha = 0.0;
  int doublings = 0;
  while (true) {
    if (detail::ict_attempt(P, droptol, alpha, L)) {
      L.shift = alpha;
      L.shift_doublings = doublings;
      return L;
    }
    if (alpha == 0.0) {
      alpha = alpha_hint > alpha0 ? alpha_hint : alpha0;
    } else {
      alpha *= 2.0;
      ++doublings;
      if (doublings > 60) throw std::runtime_error("ict_factorize: shift limit exceeded");
    }
  }
}

/// Solves (L L^T) x = b with permutation bookkeeping: forward then backward
/// substitution in the permuted space. Deterministic.
inline Eigen::VectorXd ict_solve(const IctFactor& L, const Eigen::VectorXd& b) {
  const int n = L.n;
  Eigen::VectorXd t(n);
  for (int k = 0; k < n; ++k) t[k] = b[L.order[k]];
  for (int k = 0; k < n; ++k) {
    const int c0 = L.colptr[k], c1 = L.colptr[k + 1];
    const double xk = t[k] / L.vals[c0];
    t[k] = xk;
    for (int idx = c0 + 1; idx < c1; ++idx) t[L.rowind[idx]] -= L.vals[idx] * xk;
  }
  for (int k = n - 1; k >= 0; --k) {
    const int c0 = L.colptr[k], c1 = L.colptr[k + 1];
    double acc = t[k];
    for (int idx = c0 + 1; idx < c1; ++idx) acc -= L.vals[idx] * t[L.rowind[idx]];
    t[k] = acc / L.vals[c0];
  }
  Eigen::VectorXd x(n);
  for (int k = 0; k < n; ++k) x[L.order[k]] = t[k];
  return x;
}

/// Applies the factor product L L^T (the operator the solver actually
/// preconditions with).
inline Eigen::VectorXd ict_product_apply(const IctFactor& L, const Eigen::VectorXd& v) {
  const int n = L.n;
  Eigen::VectorXd t(n), y(n);
  for (int k = 0; k < n; ++k) t[k] = v[L.order[k]];
  for (int k = 0; k < n; ++k) {
    double acc = 0.0;
    for (int idx = L.colptr[k]; idx < L.colptr[k + 1]; ++idx)
      acc += L.vals[idx] * t[L.rowind[idx]];
    y[k] = acc;  // y = L^T t
  }
  t.setZero();
  for (int k = 0; k < n; ++k) {
    const double yk = y[k];
    for (int idx = L.colptr[k]; idx < L.colptr[k + 1]; ++idx)
      t[L.rowind[idx]] += L.vals[idx] * yk;
  }
  Eigen::VectorXd out(n);
  for (int k = 0; k < n; ++k) out[L.order[k]] = t[k];
  return out;
}

struct MetricBuildStats {
  std::int64_t nnz_factor = 0;
  std::int64_t nnz_matrix_lower = 0;
  double fill_ratio = 0.0;
  double shift = 0.0;
  int shift_doublings = 0;
  double build_ms = 0.0;
};

/// The metric P_phi: exact assembled matrix plus its incomplete factor.
/// metric_inner uses the exact P; apply_inverse and the factor product use
/// the incomplete factor, so with droptol > 0 the norm and the solve are not
/// exactly mutually inverse.
struct FactorizedMetric {
  PrecondSpec spec;
  Eigen::SparseMatrix<double> P;  // exact assembled metric
  IctFactor factor;
  MetricBuildStats stats;
  double lambda_at_build = 0.0;  // optimal_shifted only

  bool phi_dependent() const {
    return spec.kind == MetricKind::hessian || spec.kind == MetricKind::optimal_shifted;
  }
};

inline Eigen::SparseMatrix<double> assemble_metric_matrix(const ModelInstance& m,
                                                          const ComplexField& phi,
                                                          const PrecondSpec& spec,
                                                          double* lambda_out = nullptr) {
  const int N = m.num_nodes();
  switch (spec.kind) {
    case MetricKind::identity_mass:
      return assemble_mass(m.grid).mat;
    case MetricKind::kinetic_plus_potential: {
      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(2 * N);
      for (int p = 0; p < N; ++p) {
        const double wv = m.grid.weights[p] * m.V[p];
        if (wv != 0.0) {
          trip.emplace_back(p, p, wv);
          trip.emplace_back(N + p, N + p, wv);
        }
      }
      Eigen::SparseMatrix<double> WV(2 * N, 2 * N);
      WV.setFromTriplets(trip.begin(), trip.end());
      Eigen::SparseMatrix<double> P = 2.0 * m.kinetic.mat + WV;
      P.makeCompressed();
      return P;
    }
    case MetricKind::hessian: {
      if (!phi.normalized)
        throw std::invalid_argument("build_metric: hessian kind needs a normalized state");
      return assemble_hessian(m, phi).mat;
    }
    case MetricKind::optimal_shifted: {
      if (!phi.normalized)
        throw std::invalid_argument("build_metric: optimal-shifted kind needs a normalized state");
      const double lam = lambda_tilde(m, phi);
      if (lambda_out) *lambda_out = lam;
      Eigen::SparseMatrix<double> P = assemble_hessian(m, phi).mat;
      P -= (lam - spec.sigma0) * assemble_mass(m.grid).mat;
      P.makeCompressed();
      return P;
    }
  }
  throw std::invalid_argument("build_metric: unknown kind");
}

inline FactorizedMetric build_metric(const ModelInstance& m, const ComplexField& phi,
                                     const PrecondSpec& spec, double alpha_hint = 0.0) {
  spec.validate();
  const auto t0 = std::chrono::steady_clock::now();
  FactorizedMetric fm;
  fm.spec = spec;
  fm.P = assemble_metric_matrix(m, phi, spec, &fm.lambda_at_build);
  const std::vector<int> order = spec.ordering == Ordering::amd
                                     ? amd_ordering(fm.P)
                                     : natural_ordering(static_cast<int>(fm.P.rows()));
  fm.factor = ict_factorize(fm.P, m.grid.w2, spec.droptol, order, alpha_hint);
  fm.stats.nnz_factor = fm.factor.nonzeros();
  std::int64_t lower = 0;
  for (int c = 0; c < fm.P.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(fm.P, c); it; ++it)
      if (it.row() >= it.col()) ++lower;
  fm.stats.nnz_matrix_lower = lower;
  fm.stats.fill_ratio = lower > 0 ? static_cast<double>(fm.stats.nnz_factor) / lower : 0.0;
  fm.stats.shift = fm.factor.shift;
  fm.stats.shift_doublings = fm.factor.shift_doublings;
  fm.stats.build_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return fm;
}

/// x with (L L^T) x = b, dual -> nodal coordinates.
inline Eigen::VectorXd apply_inverse(const FactorizedMetric& fm, const Eigen::VectorXd& b) {
  return ict_solve(fm.factor, b);
}

/// u^T P v with the exact assembled metric.
inline double metric_inner(const FactorizedMetric& fm, const Eigen::VectorXd& u,
                           const Eigen::VectorXd& v) {
  return kahan_dot(u, fm.P * v);
}

inline double metric_norm(const FactorizedMetric& fm, const Eigen::VectorXd& u) {
  return std::sqrt(std::max(0.0, metric_inner(fm, u, u)));
}

/// u^T (L L^T) v — the inner product of the operator actually applied by the
/// solver; this is the metric used by the spectral pencil.
inline double product_inner(const FactorizedMetric& fm, const Eigen::VectorXd& u,
                            const Eigen::VectorXd& v) {
  return kahan_dot(u, ict_product_apply(fm.factor, v));
}

inline Eigen::VectorXd product_apply(const FactorizedMetric& fm, const Eigen::VectorXd& v) {
  return ict_product_apply(fm.factor, v);
}

}  // namespace gpdisk
