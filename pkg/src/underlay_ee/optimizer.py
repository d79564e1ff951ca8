"""Energy-efficiency maximizing downlink power allocation.

The sum spectral efficiency splits into a difference of two concave functions
of the power grid, f_total - f_interference (both are logs of positive
weighted sums of geometric means).  Replacing f_interference by its tangent
plane at an expansion point gives a concave lower bound on the sum SE; the
ratio of that bound to the throughput-independent power model is maximized by
Dinkelbach iterations, each solving one concave problem over the power
polytope with a log-barrier interior-point method.  An outer loop re-expands
the tangent plane at the new iterate until the bound value converges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .estimation import SinrCoefficients, compute_coefficients
from .metrics import MetricsReport, metrics_report, validate_allocation

LN2 = math.log(2.0)

# square roots inside the solver are smoothed as sqrt(p + SMOOTH_EPS_W) so
# that derivatives stay finite on the boundary of the positive orthant
SMOOTH_EPS_W = 1e-12
# barrier parameter grows by x10 per stage until (#constraints)/t <= this
BARRIER_GAP = 1e-8
_NEWTON_TOL = 1e-3        # stage tolerance on the Newton decrement^2 / 2
_NEWTON_MAX_ITERS = 60


class NumericalError(RuntimeError):
    """An iterative solve failed to converge within its iteration budget."""


@dataclass(frozen=True)
class PowerControlProblem:
    """Coefficients plus constants that define one allocation problem."""

    mean_gain: np.ndarray        # (K, K, L)
    power_gain: np.ndarray       # (K, K, L)
    leakage: np.ndarray          # (K, K_p, L)
    primary_noise_w: np.ndarray  # (K,)
    se_weight: float             # pilot-overhead prefactor on every log term
    zeta: float
    circuit_power_w: float
    p_max_w: float
    i_th_w: float
    bandwidth_hz: float

    @property
    def K(self):
        return self.mean_gain.shape[0]

    @property
    def L(self):
        return self.mean_gain.shape[2]

    def active_users(self):
        # a user with no coherent gain anywhere has zero SE for any allocation
        return self.mean_gain[np.arange(self.K), np.arange(self.K), :].max(axis=1) > 0

    def reduced_power(self, p):
        return self.zeta * float(np.sum(p)) + self.circuit_power_w


def build_problem(scenario, coeffs: SinrCoefficients = None) -> PowerControlProblem:
    if coeffs is None:
        coeffs = compute_coefficients(scenario)
    cfg = scenario.config
    return PowerControlProblem(
        coeffs.mean_gain, coeffs.power_gain, coeffs.leakage,
        coeffs.primary_noise_w, 1.0 - cfg.tau_p / cfg.tau_c, cfg.zeta,
        cfg.circuit_power_w, cfg.p_max_w, cfg.i_th_w, cfg.bandwidth_hz)


def _log_arguments(p, prob, smooth_eps):
    """Per-user arguments of the two concave logs.

    Returns (g_total, g_interf, s, coh) where coh[i, k] is the coherent sum of
    user i's precoders at user k and s is the (possibly smoothed) sqrt grid.
    """
    s = np.sqrt(p + smooth_eps) if smooth_eps else np.sqrt(p)
    coh = np.einsum("il,ikl->ik", s, prob.mean_gain)
    base = prob.primary_noise_w + np.einsum("il,ikl->k", p, prob.power_gain)
    g_interf = base + (coh ** 2).sum(axis=0) - np.diag(coh) ** 2
    g_total = g_interf + np.diag(coh) ** 2
    return g_total, g_interf, s, coh


def f_total(p, prob: PowerControlProblem) -> float:
    """Concave part containing every coherent term (own signal included)."""
    p = validate_allocation(p, prob.K, prob.L)
    g_total, _, _, _ = _log_arguments(p, prob, 0.0)
    return prob.se_weight * float(np.log2(g_total).sum())


def f_interference(p, prob: PowerControlProblem) -> float:
    """Concave part containing only cross-user coherent terms; the difference
    f_total - f_interference equals the sum spectral efficiency exactly."""
    p = validate_allocation(p, prob.K, prob.L)
    _, g_interf, _, _ = _log_arguments(p, prob, 0.0)
    return prob.se_weight * float(np.log2(g_interf).sum())


def grad_f_interference(p, prob: PowerControlProblem,
                        smooth_eps=SMOOTH_EPS_W) -> np.ndarray:
    """Analytic gradient of f_interference over the (K, L) power grid.

    Geometric-mean terms contribute 1/(2 sqrt(p)) factors; entries at zero
    power use the smoothed surrogate sqrt(p + smooth_eps).
    """
    p = validate_allocation(p, prob.K, prob.L)
    _, g_interf, s, coh = _log_arguments(p, prob, smooth_eps)
    # d g_interf[k] / d p[j, m]; the j == k slice has no coherent term
    dg = np.einsum("jk,jkm->jkm", coh, prob.mean_gain) / s[:, None, :]
    idx = np.arange(prob.K)
    dg[idx, idx, :] = 0.0
    dg += prob.power_gain
    return prob.se_weight / LN2 * np.einsum("jkm,k->jm", dg, 1.0 / g_interf)


@dataclass(frozen=True)
class TaylorBound:
    """Tangent plane of f_interference at a feasible expansion point; an upper
    bound of the concave function, tight at the expansion point."""

    expansion: np.ndarray
    value: float
    gradient: np.ndarray

    def __call__(self, p) -> float:
        diff = np.asarray(p, dtype=float) - self.expansion
        return self.value + float(np.sum(self.gradient * diff))


def linearize_interference(p0, prob: PowerControlProblem) -> TaylorBound:
    p0 = validate_allocation(p0, prob.K, prob.L).copy()
    p0.flags.writeable = False
    return TaylorBound(p0, f_interference(p0, prob),
                       grad_f_interference(p0, prob))


def _f_total_derivatives(p, prob, order):
    """Value, gradient, and Hessian of the smoothed-sqrt surrogate of f_total
    on the full (K, L) grid; order in {0, 1, 2}.

    The solver works entirely on this surrogate (consistent line searches);
    reported ratios are re-evaluated with exact square roots by the callers.
    """
    w = prob.se_weight
    g_total, _, s, coh = _log_arguments(p, prob, SMOOTH_EPS_W)
    value = w * float(np.log2(g_total).sum())
    if order == 0:
        return value, None, None
    inv_g = 1.0 / g_total
    dg = np.einsum("jk,jkm->jkm", coh, prob.mean_gain) / s[:, None, :]
    dg += prob.power_gain
    grad = w / LN2 * np.einsum("jkm,k->jm", dg, inv_g)
    if order == 1:
        return value, grad, None
    K, L = prob.K, prob.L
    n = K * L
    # rank-one -outer(dg_k)/g_k^2 part couples every pair of variables
    dg_flat = dg.transpose(1, 0, 2).reshape(K, n)  # row k: d g_k / d p
    hess = -np.einsum("ka,kb,k->ab", dg_flat, dg_flat, inv_g ** 2)
    hess = hess.reshape(K, L, K, L)
    # curvature of the coherent sums is block diagonal over the owning user j
    u = prob.mean_gain / s[:, None, :]                    # (j, k, m)
    blocks = 0.5 * np.einsum("jkm,jkn,k->jmn", u, u, inv_g)
    diag = 0.5 * np.einsum("jk,jkm,k->jm", coh, prob.mean_gain, inv_g) / s ** 3
    ll = np.arange(L)
    for j in range(K):
        hess[j, :, j, :] += blocks[j]
        hess[j, ll, j, ll] -= diag[j]
    return value, grad, (w / LN2) * hess.reshape(n, n)


@dataclass
class _Subproblem:
    """F(x) = f_total(x) - tangent(x) - lam * reduced_power(x) on the active
    variables, plus the constraint rows of the power polytope."""

    prob: PowerControlProblem
    bound: TaylorBound
    lam: float
    active_idx: np.ndarray    # flat indices of free variables
    a_rows: np.ndarray        # (n_rows, n_active) constraint coefficients
    a_rhs: np.ndarray         # (n_rows,)

    def full_grid(self, x):
        p = np.zeros(self.prob.K * self.prob.L)
        p[self.active_idx] = x
        return p.reshape(self.prob.K, self.prob.L)

    def derivatives(self, x, order):
        p = self.full_grid(x)
        val, grad, hess = _f_total_derivatives(p, self.prob, order)
        val = val - self.bound(p) - self.lam * self.prob.reduced_power(p)
        if order == 0:
            return val, None, None
        lin = self.bound.gradient.ravel() + self.lam * self.prob.zeta
        grad = grad.ravel()[self.active_idx] - lin[self.active_idx]
        if order == 1:
            return val, grad, None
        hess = hess[np.ix_(self.active_idx, self.active_idx)]
        return val, grad, hess


def _build_subproblem(lam, bound, prob):
    active_idx = np.flatnonzero(np.repeat(prob.active_users(), prob.L))
    K, L = prob.K, prob.L
    ap_rows = np.zeros((L, K * L))
    for l in range(L):
        ap_rows[l, l::L] = 1.0  # selects p[i, l] for every user i
    kp = prob.leakage.shape[1]
    int_rows = prob.leakage.transpose(1, 0, 2).reshape(kp, K * L)
    a_rows = np.vstack([ap_rows, int_rows])[:, active_idx]
    a_rhs = np.concatenate([np.full(L, prob.p_max_w), np.full(kp, prob.i_th_w)])
    return _Subproblem(prob, bound, lam, active_idx, a_rows, a_rhs)


def _newton_barrier_stage(sub, x, t):
    """Damped Newton ascent on t*F(x) + log barrier from strictly feasible x.

    Returns (x, decrement) with the last Newton decrement^2 / 2; values at or
    below _NEWTON_TOL mean the stage is centered.
    """
    decrement = np.inf
    for _ in range(_NEWTON_MAX_ITERS):
        val, grad_f, hess_f = sub.derivatives(x, order=2)
        slack = sub.a_rhs - sub.a_rows @ x
        grad = t * grad_f - sub.a_rows.T @ (1.0 / slack) + 1.0 / x
        neg_hess = (-t * hess_f
                    + (sub.a_rows / slack[:, None] ** 2).T @ sub.a_rows
                    + np.diag(1.0 / x ** 2))
        try:
            step = cho_solve(cho_factor(neg_hess), grad)
        except np.linalg.LinAlgError:
            ridge = 1e-10 * abs(np.trace(neg_hess)) / len(x) + 1e-30
            step = np.linalg.solve(neg_hess + ridge * np.eye(len(x)), grad)
        decrement = 0.5 * float(grad @ step)
        if decrement <= _NEWTON_TOL:
            return x, decrement
        # largest step keeping the iterate strictly inside the polytope
        smax = 1.0
        a_step = sub.a_rows @ step
        pos = a_step > 0
        if np.any(pos):
            smax = min(smax, 0.99 * float((slack[pos] / a_step[pos]).min()))
        neg = step < 0
        if np.any(neg):
            smax = min(smax, 0.99 * float((x[neg] / -step[neg]).min()))
        phi0 = t * val + float(np.log(slack).sum() + np.log(x).sum())
        s = smax
        for _ in range(60):
            x_new = x + s * step
            slack_new = sub.a_rhs - sub.a_rows @ x_new
            if slack_new.min() > 0 and x_new.min() > 0:
                phi = (t * sub.derivatives(x_new, order=0)[0]
                       + float(np.log(slack_new).sum() + np.log(x_new).sum()))
                if phi >= phi0 + 0.25 * s * (2.0 * decrement):
                    break
            s *= 0.5
        else:
            return x, decrement  # no further progress at this stage
        x = x_new
    return x, decrement


def solve_subproblem(lam, bound: TaylorBound, prob: PowerControlProblem,
                     start=None) -> np.ndarray:
    """Maximize f_total - tangent - lam * reduced_power over the polytope
    {p >= 0, per-AP sums <= P_max, leakage sums <= I_th}.

    Returns a strictly feasible (K, L) allocation; rows of users that cannot
    receive (no coherent gain anywhere) are pinned to exactly zero.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    sub = _build_subproblem(lam, bound, prob)
    if len(sub.active_idx) == 0:
        return np.zeros((prob.K, prob.L))
    if start is None:
        start = 0.5 * equal_power_grid(prob)
    x = np.asarray(start, dtype=float).ravel()[sub.active_idx].copy()
    if (sub.a_rhs - sub.a_rows @ x).min() <= 0 or x.min() <= 0:
        raise NumericalError("subproblem start point is not strictly feasible")
    n_constraints = len(sub.a_rhs) + len(x)
    t = 1.0
    rough_stages = 0
    while True:
        x, decrement = _newton_barrier_stage(sub, x, t)
        rough_stages = rough_stages + 1 if decrement > 1e3 * _NEWTON_TOL else 0
        if rough_stages >= 3:
            raise NumericalError(
                f"barrier stages stopped converging at t={t:.1e} "
                f"(lam={lam:.6g}, decrement={decrement:.3e})")
        if n_constraints / t <= BARRIER_GAP:
            return sub.full_grid(x)
        t *= 10.0


def equal_power_grid(prob: PowerControlProblem) -> np.ndarray:
    """Uniform allocation: the largest common power level feasible under both
    the per-AP cap and every primary user's interference cap."""
    level = prob.p_max_w / prob.K
    totals = prob.leakage.sum(axis=(0, 2))  # interference per unit common power
    for v in totals:
        if v > 0:
            level = min(level, prob.i_th_w / v)
    return np.full((prob.K, prob.L), level)


def equal_power_allocation(scenario, coeffs=None) -> np.ndarray:
    """Equal-power baseline on a scenario (uniform over users and APs)."""
    return equal_power_grid(build_problem(scenario, coeffs))


@dataclass
class DinkelbachResult:
    allocation: np.ndarray
    ratio: float                  # achieved (f_total - tangent) / reduced_power
    lam_trajectory: list
    f_trajectory: list
    iterations: int


def dinkelbach_maximize(bound: TaylorBound, prob: PowerControlProblem,
                        eps, start, lam0, max_iters=50, trace=None):
    """Parametric (Dinkelbach) maximization of the concave/linear ratio
    (f_total - tangent) / reduced_power over the power polytope.

    `lam0` must be a ratio achieved by some feasible point (the expansion
    point qualifies); the lambda sequence is then nondecreasing and the loop
    stops once the parametric objective F(lam) falls to `eps` or below.
    Returns the best allocation encountered together with its exact ratio.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    lam = float(lam0)
    lam_traj = [lam]
    f_traj = []
    best_p, best_ratio = None, -np.inf
    x_start = start
    for n in range(1, max_iters + 1):
        p = solve_subproblem(lam, bound, prob, start=x_start)
        x_start = p  # strictly feasible on the active rows
        numer = f_total(p, prob) - bound(p)
        denom = prob.reduced_power(p)
        f_val = numer - lam * denom
        ratio = numer / denom
        f_traj.append(f_val)
        if trace is not None:
            trace(n, lam, f_val, ratio)
        if ratio > best_ratio:
            best_p, best_ratio = p, ratio
        if f_val <= eps:
            lam = max(lam, best_ratio)
            lam_traj.append(lam)
            return DinkelbachResult(best_p, best_ratio, lam_traj, f_traj, n)
        lam = ratio  # strictly larger than the previous lam since f_val > eps
        lam_traj.append(lam)
    raise NumericalError(
        f"Dinkelbach loop did not reach F <= {eps} in {max_iters} iterations "
        f"(last F={f_traj[-1]:.3e}, lam={lam:.6g})")


@dataclass
class OptimizerResult:
    allocation: np.ndarray
    lambda_trajectories: list          # one nondecreasing list per outer round
    f_trajectories: list               # parametric objective values per round
    ee_lb_trajectory: list             # bit/Joule, nondecreasing over rounds
    inner_iterations: int
    outer_iterations: int
    report: MetricsReport              # full-model metrics at the solution
    ap_slack_w: np.ndarray
    interference_slack_w: np.ndarray
    termination: str


def maximize_energy_efficiency(scenario, coeffs=None, trace=None) -> OptimizerResult:
    """Full solve: outer tangent-plane updates around inner Dinkelbach loops.

    The first expansion point is the equal-power baseline (rows of dead users
    zeroed), which guarantees the returned energy efficiency is at least the
    baseline's; the barrier solver itself starts from strictly interior
    points.  The bound-value trajectory is nondecreasing across outer rounds
    and the loop ends when its relative change falls below the configured
    tolerance.  `trace`, when given, is called as
    trace(outer, inner, lam, f_value, ee_lb_bit_per_joule) per inner step.
    """
    cfg = scenario.config
    if coeffs is None:
        coeffs = compute_coefficients(scenario)
    prob = build_problem(scenario, coeffs)
    active = prob.active_users()

    if not active.any():
        p_zero = np.zeros((prob.K, prob.L))
        report = metrics_report(p_zero, coeffs, cfg)
        return OptimizerResult(p_zero, [], [], [0.0], 0, 0, report,
                               np.full(prob.L, cfg.p_max_w),
                               np.full(prob.leakage.shape[1], cfg.i_th_w),
                               "no_active_users")

    p_expansion = equal_power_grid(prob)
    p_expansion[~active, :] = 0.0
    interior_ref = 0.5 * p_expansion
    interior = interior_ref.copy()
    lam_trajs, f_trajs, ee_traj = [], [], []
    ee_prev = None
    inner_total = 0
    termination = "outer_iteration_cap"
    for outer in range(1, cfg.max_outer_iters + 1):
        bound = linearize_interference(p_expansion, prob)
        lam0 = ((f_total(p_expansion, prob) - f_interference(p_expansion, prob))
                / prob.reduced_power(p_expansion))
        inner_trace = None
        if trace is not None:
            inner_trace = lambda n, lam, f, r: trace(  # noqa: E731
                outer, n, lam, f, r * prob.bandwidth_hz)
        start = 0.95 * interior + 0.05 * interior_ref
        try:
            inner = dinkelbach_maximize(bound, prob, cfg.dinkelbach_eps, start,
                                        lam0, cfg.max_inner_iters, inner_trace)
        except NumericalError as exc:
            raise NumericalError(
                f"outer round {outer} failed: {exc}; bound trajectory so far "
                f"{ee_traj}") from exc
        inner_total += inner.iterations
        interior = inner.allocation
        lam_trajs.append(inner.lam_trajectory)
        f_trajs.append(inner.f_trajectory)
        ee_lb = inner.ratio * prob.bandwidth_hz
        ee_traj.append(ee_lb)
        if ee_prev is not None and ee_lb < ee_prev * (1.0 - 1e-9) - 1e-9:
            raise NumericalError(
                f"bound value decreased across outer rounds: {ee_prev} -> {ee_lb}")
        p_expansion = inner.allocation
        if ee_prev is not None and abs(ee_lb - ee_prev) <= cfg.outer_tol * abs(ee_prev):
            termination = "converged"
            break
        ee_prev = ee_lb

    report = metrics_report(p_expansion, coeffs, cfg)
    return OptimizerResult(
        p_expansion, lam_trajs, f_trajs, ee_traj, inner_total, len(ee_traj), report,
        cfg.p_max_w - report.per_ap_power_w,
        cfg.i_th_w - report.per_pue_interference_w, termination)
