#pragma once

#include "gpdisk/model.hpp"
#include "gpdisk/precond.hpp"

#include <Eigen/Core>

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpdisk {

struct StageConfig {
  PrecondSpec precond;
  std::int64_t max_iters = 100000;
};

struct PRGConfig {
  double tau = 1.0;
  std::vector<StageConfig> stages;
  double tol_inf = 1e-12;               // stopping tolerance on residual_inf
  std::int64_t max_total_iters = 500000;
  int snapshot_stride = 0;              // 0 disables snapshots
  int snapshot_keep_last = 0;           // 0 keeps all recorded snapshots
  bool record_grad_pnorm = true;

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("PRGConfig: tau must be > 0");
    if (stages.empty()) throw std::invalid_argument("PRGConfig: at least one stage required");
    if (!(tol_inf > 0.0)) throw std::invalid_argument("PRGConfig: tol_inf must be > 0");
    for (const auto& s : stages) s.precond.validate();
  }
};

struct IterRecord {
  std::int64_t n = 0;
  double energy = 0.0;
  double lambda_tilde = 0.0;
  double lambda_p = 0.0;
  double residual_inf = 0.0;
  double tau = 0.0;
  double grad_pnorm = 0.0;
  double wall_ms = 0.0;
};

struct IterTrace {
  std::vector<IterRecord> rows;
  std::vector<std::pair<std::int64_t, Eigen::VectorXd>> snapshots;
  std::vector<std::string> warnings;
  bool converged = false;
};

/// L2 tangent-space projection v - (phi, v)_{L2} phi.
inline Eigen::VectorXd tangent_project_l2(const PolarGrid& g, const ComplexField& phi,
                                          const Eigen::VectorXd& v) {
  if (!phi.normalized) throw std::invalid_argument("tangent_project_l2: phi not normalized");
  return v - g.mass_dot(phi.data, v) * phi.data;
}

struct RiemannianGrad {
  Eigen::VectorXd g;   // nodal tangent field
  double lambda_p = 0.0;
};

/// Riemannian gradient in the P metric,
///   g = P^{-1} H phi - lambda_p P^{-1} (mass phi),
///   lambda_p = (phi, P^{-1} H phi)_{L2} / (phi, P^{-1} mass phi)_{L2},
/// given the dual-coordinate H phi (one static matvec upstream). Evaluated in
/// the equivalent shifted form
///   u = P^{-1}(H phi - lambda~ mass phi),  v = P^{-1}(mass phi),
///   c = (phi,u)/(phi,v),  g = u - c v,  lambda_p = lambda~ + c,
/// so near a critical point the two solves combine small quantities instead
/// of cancelling large ones.
inline RiemannianGrad riemannian_grad_from(const ModelInstance& m, const ComplexField& phi,
                                           const FactorizedMetric& metric,
                                           const Eigen::VectorXd& hphi) {
  const double lam = kahan_dot(phi.data, hphi);
  const Eigen::VectorXd mphi = m.grid.w2.cwiseProduct(phi.data);
  const Eigen::VectorXd u = apply_inverse(metric, hphi - lam * mphi);
  const Eigen::VectorXd v = apply_inverse(metric, mphi);
  const double den = m.grid.mass_dot(phi.data, v);
  if (!(den > 0.0))
    throw std::runtime_error("riemannian_grad: nonpositive (phi, P^-1 mass phi) -- broken metric");
  const double c = m.grid.mass_dot(phi.data, u) / den;
  RiemannianGrad out;
  out.lambda_p = lam + c;
  out.g = u - c * v;
  return out;
}

inline RiemannianGrad riemannian_grad(const ModelInstance& m, const ComplexField& phi,
                                      const FactorizedMetric& metric) {
  if (!phi.normalized) throw std::invalid_argument("riemannian_grad: phi not normalized");
  return riemannian_grad_from(m, phi, metric, euclid_grad(m, phi));
}

/// Retraction: normalized phi + tau*d.
inline ComplexField retract(const PolarGrid& g, const ComplexField& phi, const Eigen::VectorXd& d,
                            double tau) {
  Eigen::VectorXd y = phi.data + tau * d;
  const double s = g.mass_norm(y);
  if (!(s > 0.0)) throw std::runtime_error("retract: vanishing mass norm");
  ComplexField out;
  out.data = y / s;
  out.normalized = true;
  return out;
}

enum class GuessKind { gaussian, vortex, perturbed };

/// Normalized initial state: exp(-r^2/2), optionally times (x+iy)^m,
/// optionally plus seeded noise of the given relative amplitude.
/// Deterministic for a fixed seed (explicit Box-Muller).
inline ComplexField initial_guess(const PolarGrid& g, GuessKind kind, int vortex_m,
                                  std::uint64_t seed, double noise_amp = 0.1) {
  const int N = g.num_nodes();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2 * N);
  const int m = kind == GuessKind::vortex ? vortex_m : 0;
  for (int i = 0; i < g.Nr; ++i) {
    const double r = g.r_nodes[i];
    const double env = std::exp(-0.5 * r * r) * std::pow(r, m);
    for (int j = 0; j < g.Ntheta; ++j) {
      const int p = g.idx(i, j);
      const double th = m * g.theta_of(j);
      x[p] = env * std::cos(th);
      x[N + p] = env * std::sin(th);
    }
  }
  if (kind == GuessKind::perturbed) {
    std::mt19937_64 rng(seed);
    const double base = std::sqrt(x.squaredNorm() / (2 * N));
    auto gauss = [&rng]() {
      // Box-Muller on explicit uniforms; keeps the stream implementation-free
      const double u1 = (rng() >> 11) * 0x1.0p-53 + 0x1.0p-54;
      const double u2 = (rng() >> 11) * 0x1.0p-53;
      return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    };
    for (int t = 0; t < 2 * N; ++t) x[t] += noise_amp * base * gauss();
  }
  return g.normalize(x);
}

/// Adds seeded relative noise to an existing field and renormalizes.
inline ComplexField perturb(const PolarGrid& g, const ComplexField& phi, double rel_amp,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int n = static_cast<int>(phi.data.size());
  Eigen::VectorXd x = phi.data;
  const double base = std::sqrt(x.squaredNorm() / n);
  auto gauss = [&rng]() {
    const double u1 = (rng() >> 11) * 0x1.0p-53 + 0x1.0p-54;
    const double u2 = (rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  };
  for (int t = 0; t < n; ++t) x[t] += rel_amp * base * gauss();
  return g.normalize(x);
}

struct PRGResult {
  IterTrace trace;
  ComplexField phi;
  FactorizedMetric last_metric;  // metric in effect at termination
};

/// Runs the preconditioned Riemannian gradient iteration through the stage
/// schedule. Within a stage the metric is held fixed for refresh_interval
/// iterations and rebuilt at the then-current iterate. Stops when
/// residual_inf <= tol_inf or the iteration caps are hit.
inline PRGResult prg_run(const ModelInstance& m, const ComplexField& phi0, const PRGConfig& cfg,
                         const std::function<void(const IterRecord&)>& on_record = {}) {
  cfg.validate();
  if (!phi0.normalized) throw std::invalid_argument("prg_run: phi0 not normalized");

  PRGResult out;
  ComplexField phi = phi0;
  std::int64_t n = 0;
  const auto t_start = std::chrono::steady_clock::now();
  double prev_energy = std::numeric_limits<double>::infinity();
  bool have_metric = false;
  double alpha_hint = 0.0;
  bool stop = false;

  for (size_t stage = 0; stage < cfg.stages.size() && !stop; ++stage) {
    const StageConfig& sc = cfg.stages[stage];
    std::int64_t iters_in_stage = 0;
    while (iters_in_stage < sc.max_iters) {
      if (n >= cfg.max_total_iters) {
        stop = true;
        break;
      }
      if (iters_in_stage % sc.precond.refresh_interval == 0) {
        out.last_metric = build_metric(m, phi, sc.precond, alpha_hint);
        alpha_hint = out.last_metric.factor.shift;
        have_metric = true;
      }

      // One H application per iteration feeds the residual, lambda~, the
      // energy (E = 1/2 <H phi, phi> + 1/2 sum w (F(rho) - f(rho) rho)), and
      // the gradient solves.
      const Eigen::VectorXd hphi = apply_h(m, density(m, phi.data), phi.data);
      const double lam = kahan_dot(phi.data, hphi);
      const double res = residual_inf_from(m, nodal_residual(m, phi.data, hphi, lam));
      double nl = 0.0, comp = 0.0;
      const int N = m.num_nodes();
      for (int p = 0; p < N; ++p) {
        const double rho = phi.data[p] * phi.data[p] + phi.data[N + p] * phi.data[N + p];
        const double term =
            m.grid.weights[p] * (m.nonlin.F(rho) - m.nonlin.f(rho) * rho) - comp;
        const double next = nl + term;
        comp = (next - nl) - term;
        nl = next;
      }
      const double en = 0.5 * lam + 0.5 * nl;

      RiemannianGrad rg = riemannian_grad_from(m, phi, out.last_metric, hphi);

      IterRecord rec;
      rec.n = n;
      rec.energy = en;
      rec.lambda_tilde = lam;
      rec.lambda_p = rg.lambda_p;
      rec.residual_inf = res;
      rec.tau = cfg.tau;
      rec.grad_pnorm = cfg.record_grad_pnorm ? metric_norm(out.last_metric, rg.g) : 0.0;
      rec.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
              .count();
      out.trace.rows.push_back(rec);
      if (on_record) on_record(rec);

      if (cfg.snapshot_stride > 0 && n % cfg.snapshot_stride == 0) {
        out.trace.snapshots.emplace_back(n, phi.data);
        if (cfg.snapshot_keep_last > 0 &&
            static_cast<int>(out.trace.snapshots.size()) > cfg.snapshot_keep_last)
          out.trace.snapshots.erase(out.trace.snapshots.begin());
      }

      if (std::isfinite(prev_energy) &&
          en > prev_energy + 1e-13 * std::max(1.0, std::abs(prev_energy))) {
        out.trace.warnings.push_back("non-monotone energy at n=" + std::to_string(n));
      }
      prev_energy = en;

      if (res <= cfg.tol_inf) {
        out.trace.converged = true;
        stop = true;
        break;
      }

      phi = retract(m.grid, phi, -rg.g, cfg.tau);
      ++n;
      ++iters_in_stage;
    }
  }

  if (!have_metric && !cfg.stages.empty())
    out.last_metric = build_metric(m, phi, cfg.stages.back().precond, 0.0);
  out.phi = phi;
  return out;
}

}  // namespace gpdisk
