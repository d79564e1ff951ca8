"""Closed-form second-order statistics of pilot-based MMSE channel estimation.

Everything downstream (SINR evaluation, the power optimizer, the interference
constraint) consumes only the coefficient tensors computed here; no
instantaneous channel state appears outside the Monte-Carlo oracle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .scenario import Scenario

# trace products of the Hermitian (Toeplitz) matrices built by the scenario
# module are real; anything beyond round-off indicates a modelling error
_IMAG_TOL = 1e-8


def _real(value, context):
    value = complex(value)
    if abs(value.imag) > _IMAG_TOL * max(abs(value.real), 1e-300):
        warnings.warn(f"discarding non-negligible imaginary part in {context}: "
                      f"{value.imag:.3e}", RuntimeWarning, stacklevel=3)
    return value.real


def _trace_prod(a, b):
    # tr(A @ B) without forming the product
    return np.einsum("ij,ji->", a, b)


def pilot_projection_covariance(k: int, l: int, sc: Scenario) -> np.ndarray:
    """Covariance of the pilot projection seen at AP `l` on the pilot of
    secondary user `k`: pilot-power-weighted sum of the correlation matrices
    of every co-pilot user in either network, plus noise."""
    cfg = sc.config
    tau = cfg.tau_p
    psi = sc.sigma2_w * np.eye(cfg.N, dtype=complex)
    for i in sc.pilots.sue_sharers[k]:
        psi = psi + cfg.eta_s_w * tau * sc.sue_cov[i, l]
    for j in sc.pilots.pue_sharers[k]:
        psi = psi + cfg.eta_p_w * tau * sc.pue_cov[j, l]
    return psi


def estimate_covariance(k: int, l: int, sc: Scenario):
    """Covariance split of the MMSE estimate of link (k, l).

    Returns (est_cov, err_cov): the covariance of the estimate and of the
    estimation error; they sum to the channel covariance.
    """
    cfg = sc.config
    r = sc.sue_cov[k, l]
    psi = pilot_projection_covariance(k, l, sc)
    try:
        factor = cho_factor(psi)
    except np.linalg.LinAlgError as exc:  # cannot happen for sigma2 > 0
        raise ArithmeticError(f"pilot projection covariance ({k},{l}) is "
                              f"singular") from exc
    est = cfg.eta_s_w * cfg.tau_p * (r @ cho_solve(factor, r))
    est = 0.5 * (est + est.conj().T)  # restore Hermitian symmetry lost to round-off
    return est, r - est


@dataclass(frozen=True)
class EstimationStatistics:
    """Per-link pilot and estimate covariances for the secondary network."""

    psi: np.ndarray       # (K_s, L, N, N)
    est_cov: np.ndarray   # (K_s, L, N, N)
    err_cov: np.ndarray   # (K_s, L, N, N)


def estimation_statistics(sc: Scenario) -> EstimationStatistics:
    cfg = sc.config
    shape = (cfg.K_s, cfg.L, cfg.N, cfg.N)
    psi = np.zeros(shape, dtype=complex)
    est = np.zeros(shape, dtype=complex)
    err = np.zeros(shape, dtype=complex)
    for k in range(cfg.K_s):
        for l in range(cfg.L):
            psi[k, l] = pilot_projection_covariance(k, l, sc)
            est[k, l], err[k, l] = estimate_covariance(k, l, sc)
    for arr in (psi, est, err):
        arr.flags.writeable = False
    return EstimationStatistics(psi, est, err)


@dataclass(frozen=True)
class SinrCoefficients:
    """Deterministic coefficients feeding every downstream formula.

    mean_gain[i, k, l]   mean effective gain at user k of the precoder that
                         AP l points at user i; nonzero only when i and k
                         share a pilot (sqrt-Watt normalized, real).
    power_gain[i, k, l]  average power coupling of that precoder into user k.
    leakage[i, m, l]     average power coupling into primary user m.
    primary_noise_w[k]   interference-plus-noise power at secondary user k
                         from the primary downlink and thermal noise (Watts).
    primary_tx_cov       covariance of the primary downlink signal (M x M).
    primary_est_cov      per-primary-user MMSE estimate covariance at the
                         primary base station (K_p, M, M).
    """

    mean_gain: np.ndarray
    power_gain: np.ndarray
    leakage: np.ndarray
    primary_noise_w: np.ndarray
    primary_tx_cov: np.ndarray
    primary_est_cov: np.ndarray


def sinr_coefficients(sc: Scenario, stats: EstimationStatistics):
    """Mean-gain and power-gain tensors of the secondary downlink.

    With the precoder of (i, l) normalized by its mean square norm, the power
    coupling into user k is tr(est_cov[i,l] @ R[k,l]) / tr(est_cov[i,l]); the
    mean gain is nonzero only under pilot sharing and reduces to
    sqrt(tr(est_cov[k,l])) for the user's own precoder.
    """
    cfg = sc.config
    eta_tau = cfg.eta_s_w * cfg.tau_p
    mean_gain = np.zeros((cfg.K_s, cfg.K_s, cfg.L))
    power_gain = np.zeros((cfg.K_s, cfg.K_s, cfg.L))
    for i in range(cfg.K_s):
        for l in range(cfg.L):
            est = stats.est_cov[i, l]
            denom = _real(np.trace(est), f"tr(est_cov[{i},{l}])")
            if denom <= 0:
                warnings.warn(f"estimate covariance of link ({i},{l}) has zero "
                              f"trace; its coefficients are set to 0",
                              RuntimeWarning)
                continue
            for k in range(cfg.K_s):
                power_gain[i, k, l] = max(0.0, _real(
                    _trace_prod(est, sc.sue_cov[k, l]),
                    f"power_gain[{i},{k},{l}]")) / denom
                if i in sc.pilots.sue_sharers[k]:
                    # same pilot => same projection covariance for both users
                    cross = cho_solve(cho_factor(stats.psi[i, l]), sc.sue_cov[k, l])
                    mean_gain[i, k, l] = eta_tau * _real(
                        _trace_prod(sc.sue_cov[i, l], cross),
                        f"mean_gain[{i},{k},{l}]") / np.sqrt(denom)
    return mean_gain, power_gain


def leakage_coefficients(sc: Scenario, stats: EstimationStatistics) -> np.ndarray:
    """Average power coupling of each secondary precoder into each primary
    user: leakage[i, m, l] = tr(est_cov[i,l] @ pue_cov[m,l]) / tr(est_cov[i,l])."""
    cfg = sc.config
    leakage = np.zeros((cfg.K_s, cfg.K_p, cfg.L))
    for i in range(cfg.K_s):
        for l in range(cfg.L):
            est = stats.est_cov[i, l]
            denom = _real(np.trace(est), f"tr(est_cov[{i},{l}])")
            if denom <= 0:
                warnings.warn(f"estimate covariance of link ({i},{l}) has zero "
                              f"trace; leakage set to 0", RuntimeWarning)
                continue
            for m in range(cfg.K_p):
                leakage[i, m, l] = max(0.0, _real(
                    _trace_prod(est, sc.pue_cov[m, l]),
                    f"leakage[{i},{m},{l}]")) / denom
    return leakage


def primary_statistics(sc: Scenario):
    """Downlink statistics of the primary base station.

    The base station runs the mirrored pilot/MMSE chain: its projection
    covariance per primary user sums the correlation matrices of co-pilot
    primary users and of secondary users sharing that pilot.  Its transmit
    covariance is the sum of trace-normalized estimate covariances (one unit
    of power per served user, times the configured scale), and the
    interference-plus-noise power at secondary user k follows by coupling it
    through that user's base-station correlation matrix.

    Returns (primary_tx_cov, primary_noise_w, primary_est_cov).
    """
    cfg = sc.config
    tau = cfg.tau_p
    eye = np.eye(cfg.M, dtype=complex)
    dhat = np.zeros((cfg.K_p, cfg.M, cfg.M), dtype=complex)
    qp = np.zeros((cfg.M, cfg.M), dtype=complex)
    for m in range(cfg.K_p):
        psi_p = sc.sigma2_w * eye.copy()
        for j in sc.pilots.pue_copilot_pue[m]:
            psi_p += cfg.eta_p_w * tau * sc.bs_pue_cov[j]
        for i in sc.pilots.pue_copilot_sue[m]:
            psi_p += cfg.eta_s_w * tau * sc.bs_sue_cov[i]
        g = sc.bs_pue_cov[m]
        est = cfg.eta_p_w * tau * (g @ cho_solve(cho_factor(psi_p), g))
        est = 0.5 * (est + est.conj().T)
        dhat[m] = est
        tr = _real(np.trace(est), f"tr(primary_est_cov[{m}])")
        if tr <= 0:
            warnings.warn(f"primary estimate covariance {m} has zero trace; "
                          f"omitted from the transmit covariance", RuntimeWarning)
            continue
        qp += est / tr
    qp *= cfg.qp_power_scale
    noise = np.empty(cfg.K_s)
    for k in range(cfg.K_s):
        noise[k] = sc.sigma2_w + max(0.0, _real(
            _trace_prod(qp, sc.bs_sue_cov[k]), f"primary_noise_w[{k}]"))
    for arr in (qp, noise, dhat):
        arr.flags.writeable = False
    return qp, noise, dhat


def compute_coefficients(sc: Scenario, stats=None) -> SinrCoefficients:
    """All coefficient tensors of a scenario in one immutable bundle."""
    if stats is None:
        stats = estimation_statistics(sc)
    mean_gain, power_gain = sinr_coefficients(sc, stats)
    leakage = leakage_coefficients(sc, stats)
    qp, noise, dhat = primary_statistics(sc)
    for arr in (mean_gain, power_gain, leakage):
        arr.flags.writeable = False
    return SinrCoefficients(mean_gain, power_gain, leakage, noise, qp, dhat)
