#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace pandakit {

using VectorX = Eigen::VectorXd;
using MatrixX = Eigen::MatrixXd;

// minimize 1/2 x'Qx + c'x  subject to  A_eq x = b_eq,  lb <= x <= ub
struct QPProblem {
  MatrixX Q;
  VectorX c;
  MatrixX A_eq;
  VectorX b_eq;
  VectorX lb;
  VectorX ub;

  int n() const { return static_cast<int>(c.size()); }
  int m() const { return static_cast<int>(b_eq.size()); }

  void validate() const {
    const int nn = n();
    if (Q.rows() != nn || Q.cols() != nn || lb.size() != nn || ub.size() != nn)
      throw std::invalid_argument("qp: inconsistent dimensions");
    if (A_eq.rows() != m() || (m() > 0 && A_eq.cols() != nn)) throw std::invalid_argument("qp: inconsistent A_eq");
    if (m() > nn) throw std::invalid_argument("qp: more equalities than variables");
    if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-10) throw std::invalid_argument("qp: Q is not symmetric");
    if ((lb.array() > ub.array()).any()) throw std::invalid_argument("qp: lb > ub");
    if (!Q.allFinite() || !c.allFinite() || !A_eq.allFinite() || !b_eq.allFinite() || !lb.allFinite() ||
        !ub.allFinite())
      throw std::invalid_argument("qp: non-finite data");
  }

  double objective(const VectorX& x) const { return 0.5 * x.dot(Q * x) + c.dot(x); }
};

enum class QPStatus { optimal, infeasible, max_iters };

struct KktResiduals {
  double stationarity = 0.0;
  double primal_eq = 0.0;
  double bounds = 0.0;
  double complementarity = 0.0;

  double max() const { return std::max({stationarity, primal_eq, bounds, complementarity}); }
};

struct QPSolution {
  VectorX x;
  VectorX y_eq;      // equality multipliers
  VectorX y_bounds;  // > 0 on an active upper bound, < 0 on an active lower bound
  double objective = 0.0;
  QPStatus status = QPStatus::max_iters;
  KktResiduals kkt;
  int iterations = 0;
  bool polished = false;
};

struct QPSettings {
  int max_iters = 10000;
  double eps_abs = 1e-8;
  double eps_rel = 1e-8;
  double eps_infeasible = 1e-7;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  int rho_update_interval = 25;
  double kkt_tol = 1e-6;
  int polish_passes = 25;
};

// Residuals of a candidate primal/dual pair, with stationarity Qx + c + A_eq'y + y_bounds = 0.
inline KktResiduals kkt_residuals(const QPProblem& p, const VectorX& x, const VectorX& y_eq,
                                  const VectorX& y_bounds) {
  KktResiduals r;
  VectorX grad = p.Q * x + p.c + y_bounds;
  if (p.m() > 0) {
    grad += p.A_eq.transpose() * y_eq;
    r.primal_eq = (p.A_eq * x - p.b_eq).cwiseAbs().maxCoeff();
  }
  r.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  for (int i = 0; i < p.n(); ++i) {
    r.bounds = std::max({r.bounds, p.lb[i] - x[i], x[i] - p.ub[i]});
    const double yu = std::max(y_bounds[i], 0.0), yl = std::max(-y_bounds[i], 0.0);
    r.complementarity = std::max({r.complementarity, yu * std::abs(p.ub[i] - x[i]), yl * std::abs(x[i] - p.lb[i])});
  }
  return r;
}

namespace detail {

enum class Activity : signed char { lower = -1, free = 0, upper = 1 };

struct ActiveSetResult {
  VectorX x, y_eq, y_bounds;
  bool consistent = false;  // primal feasible and multipliers of the right sign
};

// Solves the equality-constrained QP obtained by pinning the active variables to their bounds.
inline ActiveSetResult solve_active_set(const QPProblem& p, const std::vector<Activity>& act) {
  const int n = p.n(), m = p.m();
  std::vector<int> free;
  VectorX x = VectorX::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (act[i] == Activity::lower) x[i] = p.lb[i];
    else if (act[i] == Activity::upper) x[i] = p.ub[i];
    else free.push_back(i);
  }
  const int nf = static_cast<int>(free.size());
  MatrixX kkt = MatrixX::Zero(nf + m, nf + m);
  VectorX rhs(nf + m);
  const VectorX g_fixed = p.Q * x + p.c;
  for (int a = 0; a < nf; ++a) {
    for (int b = 0; b < nf; ++b) kkt(a, b) = p.Q(free[a], free[b]);
    for (int k = 0; k < m; ++k) {
      kkt(a, nf + k) = p.A_eq(k, free[a]);
      kkt(nf + k, a) = p.A_eq(k, free[a]);
    }
    rhs[a] = -g_fixed[free[a]];
  }
  if (m > 0) rhs.tail(m) = p.b_eq - p.A_eq * x;
  const VectorX sol = nf + m > 0 ? VectorX(kkt.completeOrthogonalDecomposition().solve(rhs)) : VectorX();
  for (int a = 0; a < nf; ++a) x[free[a]] = sol[a];

  ActiveSetResult r;
  r.x = x;
  r.y_eq = m > 0 ? VectorX(sol.tail(m)) : VectorX();
  VectorX grad = p.Q * x + p.c;
  if (m > 0) grad += p.A_eq.transpose() * r.y_eq;
  r.y_bounds = VectorX::Zero(n);
  constexpr double tol = 1e-10;
  bool ok = m == 0 || (p.A_eq * x - p.b_eq).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + p.b_eq.cwiseAbs().maxCoeff());
  for (int i = 0; i < n; ++i) {
    if (act[i] == Activity::free) {
      ok = ok && x[i] >= p.lb[i] - tol && x[i] <= p.ub[i] + tol;
    } else {
      r.y_bounds[i] = -grad[i];
      ok = ok && (act[i] == Activity::upper ? r.y_bounds[i] >= -tol : r.y_bounds[i] <= tol);
    }
  }
  r.consistent = ok;
  return r;
}

}  // namespace detail

// Operator-splitting (ADMM) solver on the constraint set {A_eq x = b_eq} x box, followed by an
// active-set polish that recovers the exact solution from the ADMM active-set guess.
inline QPSolution solve_qp(const QPProblem& p, const QPSettings& s = {}) {
  p.validate();
  const int n = p.n(), m = p.m(), mc = m + n;

  MatrixX a(mc, n);
  if (m > 0) a.topRows(m) = p.A_eq;
  a.bottomRows(n).setIdentity();
  VectorX l(mc), u(mc);
  if (m > 0) {
    l.head(m) = p.b_eq;
    u.head(m) = p.b_eq;
  }
  l.tail(n) = p.lb;
  u.tail(n) = p.ub;
  auto is_eq = [&](int i) { return u[i] - l[i] <= 1e-12; };

  double rho = s.rho;
  VectorX rho_vec(mc);
  auto set_rho = [&] {
    for (int i = 0; i < mc; ++i) rho_vec[i] = is_eq(i) ? 1e3 * rho : rho;
  };
  set_rho();
  Eigen::LLT<MatrixX> factor;
  auto refactor = [&] {
    const MatrixX k = p.Q + s.sigma * MatrixX::Identity(n, n) + a.transpose() * rho_vec.asDiagonal() * a;
    factor.compute(k);
  };
  refactor();

  VectorX x = VectorX::Zero(n), z = (a * x).cwiseMax(l).cwiseMin(u), y = VectorX::Zero(mc);
  QPSolution sol;
  bool converged = false;
  for (int it = 1; it <= s.max_iters; ++it) {
    sol.iterations = it;
    const VectorX x_tilde = factor.solve(s.sigma * x - p.c + a.transpose() * (rho_vec.cwiseProduct(z) - y));
    const VectorX z_tilde = a * x_tilde;
    const VectorX x_new = s.alpha * x_tilde + (1.0 - s.alpha) * x;
    const VectorX z_relaxed = s.alpha * z_tilde + (1.0 - s.alpha) * z;
    const VectorX z_new = (z_relaxed + y.cwiseQuotient(rho_vec)).cwiseMax(l).cwiseMin(u);
    const VectorX y_new = y + rho_vec.cwiseProduct(z_relaxed - z_new);
    const VectorX dy = y_new - y;
    x = x_new;
    z = z_new;
    y = y_new;

    const VectorX ax = a * x, qx = p.Q * x, aty = a.transpose() * y;
    const double r_prim = (ax - z).cwiseAbs().maxCoeff();
    const double r_dual = (qx + p.c + aty).cwiseAbs().maxCoeff();
    const double eps_prim = s.eps_abs + s.eps_rel * std::max(ax.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff());
    const double eps_dual =
        s.eps_abs + s.eps_rel * std::max({qx.cwiseAbs().maxCoeff(), aty.cwiseAbs().maxCoeff(), p.c.cwiseAbs().maxCoeff()});
    if (r_prim <= eps_prim && r_dual <= eps_dual) {
      converged = true;
      break;
    }

    const double dy_norm = dy.cwiseAbs().maxCoeff();
    if (dy_norm > 0.0) {
      const double support = u.dot(dy.cwiseMax(0.0)) + l.dot(dy.cwiseMin(0.0));
      if ((a.transpose() * dy).cwiseAbs().maxCoeff() <= s.eps_infeasible * dy_norm &&
          support <= -s.eps_infeasible * dy_norm) {
        sol.status = QPStatus::infeasible;
        sol.x = x;
        sol.objective = p.objective(x);
        return sol;
      }
    }

    if (it % s.rho_update_interval == 0) {
      const double prim_scale = std::max({ax.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff(), 1e-12});
      const double dual_scale =
          std::max({qx.cwiseAbs().maxCoeff(), aty.cwiseAbs().maxCoeff(), p.c.cwiseAbs().maxCoeff(), 1e-12});
      const double ratio = std::sqrt((r_prim / prim_scale) / std::max(r_dual / dual_scale, 1e-30));
      const double rho_new = std::clamp(rho * ratio, 1e-6, 1e6);
      if (rho_new > 5.0 * rho || rho_new < 0.2 * rho) {
        rho = rho_new;
        set_rho();
        refactor();
      }
    }
  }

  // Active-set guess from the ADMM iterate, refined by primal-dual active-set passes.
  std::vector<detail::Activity> act(n, detail::Activity::free);
  for (int i = 0; i < n; ++i) {
    const int r = m + i;
    if (z[r] - l[r] < -y[r] / rho_vec[r]) act[i] = detail::Activity::lower;
    else if (u[r] - z[r] < y[r] / rho_vec[r]) act[i] = detail::Activity::upper;
  }
  for (int pass = 0; pass < s.polish_passes; ++pass) {
    const detail::ActiveSetResult r = detail::solve_active_set(p, act);
    if (r.consistent) {
      const KktResiduals kkt = kkt_residuals(p, r.x, r.y_eq, r.y_bounds);
      if (kkt.max() <= s.kkt_tol) {
        sol.x = r.x;
        sol.y_eq = r.y_eq;
        sol.y_bounds = r.y_bounds;
        sol.kkt = kkt;
        sol.objective = p.objective(r.x);
        sol.status = QPStatus::optimal;
        sol.polished = true;
        return sol;
      }
      break;
    }
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      detail::Activity next = act[i];
      if (act[i] == detail::Activity::free) {
        if (r.x[i] < p.lb[i]) next = detail::Activity::lower;
        else if (r.x[i] > p.ub[i]) next = detail::Activity::upper;
      } else if ((act[i] == detail::Activity::upper && r.y_bounds[i] < 0.0) ||
                 (act[i] == detail::Activity::lower && r.y_bounds[i] > 0.0)) {
        next = detail::Activity::free;
      }
      changed = changed || next != act[i];
      act[i] = next;
    }
    if (!changed) break;
  }

  // Polish failed: report the ADMM iterate with its own multipliers.
  sol.x = x;
  sol.y_eq = m > 0 ? VectorX(y.head(m)) : VectorX();
  sol.y_bounds = y.tail(n);
  sol.kkt = kkt_residuals(p, x, sol.y_eq, sol.y_bounds);
  sol.objective = p.objective(x);
  sol.status = converged && sol.kkt.max() <= s.kkt_tol ? QPStatus::optimal : QPStatus::max_iters;
  return sol;
}

}  // namespace pandakit
