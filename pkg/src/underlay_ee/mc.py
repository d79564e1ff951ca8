"""Monte-Carlo ground truth for every closed-form statistic.

Samples correlated Rayleigh channels, runs the pilot projection, MMSE
estimation, and MR precoding chain per realization, and measures the moments
that the deterministic modules claim in closed form: estimate covariances,
effective gains, desired/interference powers, SINR, leakage into primary
users, and the primary-interference power at secondary users.

Trials are drawn in fixed-size blocks with one RNG stream per (seed, block)
pair, so results are bit-for-bit reproducible for a given (seed, trials) and
aggregation is associative (map-reduce friendly).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import metrics
from .estimation import (compute_coefficients, estimation_statistics,
                         pilot_projection_covariance)
from .scenario import Scenario

TRIAL_BLOCK = 4096


def covariance_factor(cov) -> np.ndarray:
    """Factor A with A @ A^H = cov via Hermitian eigendecomposition; negative
    round-off eigenvalues are clipped at zero."""
    vals, vecs = np.linalg.eigh(np.asarray(cov))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _standard_complex(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of every fading link plus the projected pilot noise.

    h[k, l]           AP l -> secondary user k channel (N,)
    u[m, l]           AP l -> primary user m channel (N,)
    a[k]              primary BS -> secondary user k channel (M,)
    pilot_noise[t, l] noise of the pilot-t projection at AP l (N,)
    """

    h: np.ndarray
    u: np.ndarray
    a: np.ndarray
    pilot_noise: np.ndarray


@dataclass(frozen=True)
class _Factors:
    h: np.ndarray       # (K, L, N, N)
    u: np.ndarray       # (K_p, L, N, N)
    a: np.ndarray       # (K, M, M)
    qp: np.ndarray      # (M, M)


def _factors(sc: Scenario, qp) -> _Factors:
    cfg = sc.config
    fh = np.stack([[covariance_factor(sc.sue_cov[k, l]) for l in range(cfg.L)]
                   for k in range(cfg.K_s)])
    fu = (np.stack([[covariance_factor(sc.pue_cov[m, l]) for l in range(cfg.L)]
                    for m in range(cfg.K_p)])
          if cfg.K_p else np.zeros((0, cfg.L, cfg.N, cfg.N)))
    fa = np.stack([covariance_factor(sc.bs_sue_cov[k]) for k in range(cfg.K_s)])
    return _Factors(fh, fu, fa, covariance_factor(qp))


def _draw_block(sc: Scenario, fac: _Factors, rng, count):
    """One block of channel draws; returns (h, u, a, pilot_noise, xp) with a
    leading trial axis."""
    cfg = sc.config
    h = np.einsum("klnm,cklm->ckln",
                  fac.h, _standard_complex(rng, (count, cfg.K_s, cfg.L, cfg.N)))
    u = np.einsum("mlnr,cmlr->cmln",
                  fac.u, _standard_complex(rng, (count, cfg.K_p, cfg.L, cfg.N)))
    a = np.einsum("knm,ckm->ckn",
                  fac.a, _standard_complex(rng, (count, cfg.K_s, cfg.M)))
    noise = np.sqrt(sc.sigma2_w) * _standard_complex(
        rng, (count, cfg.tau_p, cfg.L, cfg.N))
    xp = np.einsum("nm,cm->cn", fac.qp, _standard_complex(rng, (count, cfg.M)))
    return h, u, a, noise, xp


def sample_channels(sc: Scenario, rng) -> ChannelRealization:
    """Draw a single realization of every link (and pilot noise).

    Draw order is fixed (secondary channels, primary-user channels, BS
    channels, pilot noise), so a fixed generator state reproduces the same
    realization.
    """
    fac = _factors(sc, np.zeros((sc.config.M, sc.config.M)))
    h, u, a, noise, _ = _draw_block(sc, fac, rng, 1)
    return ChannelRealization(h[0], u[0], a[0], noise[0])


def mmse_estimate(real: ChannelRealization, k, l, sc: Scenario) -> np.ndarray:
    """MMSE channel estimate of link (k, l) from this realization's pilots.

    Forms the pilot projection (co-pilot secondary and primary channels plus
    noise) and applies the linear MMSE filter.
    """
    cfg = sc.config
    pil = sc.pilots
    y = real.pilot_noise[pil.sue_pilot[k], l].copy()
    y += np.sqrt(cfg.eta_s_w * cfg.tau_p) * real.h[list(pil.sue_sharers[k]), l].sum(axis=0)
    if pil.pue_sharers[k]:
        y += np.sqrt(cfg.eta_p_w * cfg.tau_p) * real.u[list(pil.pue_sharers[k]), l].sum(axis=0)
    psi = pilot_projection_covariance(k, l, sc)
    return np.sqrt(cfg.eta_s_w * cfg.tau_p) * (sc.sue_cov[k, l] @ np.linalg.solve(psi, y))


def mr_precoder(estimate, mean_norm_sq) -> np.ndarray:
    """Maximum-ratio precoder: the estimate scaled by the square root of its
    mean square norm, so that E{||w||^2} = 1."""
    if mean_norm_sq <= 0:
        warnings.warn("precoder normalization is zero; returning a zero precoder",
                      RuntimeWarning)
        return np.zeros_like(estimate)
    return estimate / np.sqrt(mean_norm_sq)


class _Accumulator:
    """Associative sums over trials of every validated moment."""

    def __init__(self, cfg):
        K, Kp, L, N = cfg.K_s, cfg.K_p, cfg.L, cfg.N
        self.count = 0
        self.v_sum = np.zeros((K, K), dtype=complex)
        self.v_sq = np.zeros((K, K))
        self.v_quad = np.zeros((K, K))
        self.g_self = np.zeros((K, L), dtype=complex)
        self.g_self_re_sq = np.zeros((K, L))
        self.wnorm = np.zeros((K, L))
        self.wnorm_sq = np.zeros((K, L))
        self.d_sq = np.zeros(K)
        self.d_quad = np.zeros(K)
        self.intf = np.zeros(Kp)
        self.intf_sq = np.zeros(Kp)
        self.est_outer = np.zeros((K, L, N, N), dtype=complex)
        self.err_cross = np.zeros((K, L, N, N), dtype=complex)


def _simulate(sc: Scenario, p, trials, seed) -> _Accumulator:
    """Run the full per-realization chain for `trials` draws and accumulate."""
    cfg = sc.config
    pil = sc.pilots
    coeffs = compute_coefficients(sc)
    fac = _factors(sc, coeffs.primary_tx_cov)
    p = metrics.validate_allocation(p, cfg.K_s, cfg.L)
    sqrt_p = np.sqrt(p)

    # per-link MMSE filters and precoder normalizations
    filt = np.zeros((cfg.K_s, cfg.L, cfg.N, cfg.N), dtype=complex)
    norm = np.zeros((cfg.K_s, cfg.L))
    for i in range(cfg.K_s):
        for l in range(cfg.L):
            psi = pilot_projection_covariance(i, l, sc)
            # R @ psi^-1 equals the Hermitian transpose of psi^-1 @ R
            filt[i, l] = np.sqrt(cfg.eta_s_w * cfg.tau_p) * np.linalg.solve(
                psi, sc.sue_cov[i, l]).conj().T
            est_cov = np.sqrt(cfg.eta_s_w * cfg.tau_p) * (filt[i, l] @ sc.sue_cov[i, l])
            norm[i, l] = max(est_cov.trace().real, 0.0)

    acc = _Accumulator(cfg)
    sue_scale = np.sqrt(cfg.eta_s_w * cfg.tau_p)
    pue_scale = np.sqrt(cfg.eta_p_w * cfg.tau_p)
    kk = np.arange(cfg.K_s)
    done = 0
    block_index = 0
    while done < trials:
        count = min(TRIAL_BLOCK, trials - done)
        rng = np.random.default_rng([seed, block_index])
        h, u, a, noise, xp = _draw_block(sc, fac, rng, count)

        # pilot projections per (pilot, AP), then estimates and precoders
        y = noise.copy()
        for i in range(cfg.K_s):
            y[:, pil.sue_pilot[i]] += sue_scale * h[:, i]
        for m in range(cfg.K_p):
            y[:, pil.pue_pilot[m]] += pue_scale * u[:, m]
        hhat = np.empty((count, cfg.K_s, cfg.L, cfg.N), dtype=complex)
        w = np.empty_like(hhat)
        for i in range(cfg.K_s):
            for l in range(cfg.L):
                hhat[:, i, l] = y[:, pil.sue_pilot[i], l] @ filt[i, l].T
                w[:, i, l] = (hhat[:, i, l] / np.sqrt(norm[i, l])
                              if norm[i, l] > 0 else 0.0)

        g = np.einsum("ckln,ciln->ckil", h.conj(), w)
        v = np.einsum("ckil,il->cki", g, sqrt_p)
        acc.v_sum += v.sum(axis=0)
        av2 = np.abs(v) ** 2
        acc.v_sq += av2.sum(axis=0)
        acc.v_quad += (av2 ** 2).sum(axis=0)

        g_self = g[:, kk, kk, :]
        acc.g_self += g_self.sum(axis=0)
        acc.g_self_re_sq += (g_self.real ** 2).sum(axis=0)
        wn = np.einsum("ciln,ciln->cil", w.conj(), w).real
        acc.wnorm += wn.sum(axis=0)
        acc.wnorm_sq += (wn ** 2).sum(axis=0)

        d2 = np.abs(np.einsum("ckm,cm->ck", a.conj(), xp)) ** 2
        acc.d_sq += d2.sum(axis=0)
        acc.d_quad += (d2 ** 2).sum(axis=0)

        if cfg.K_p:
            c_mi = np.einsum("cmln,ciln,il->cmi", u.conj(), w, sqrt_p)
            im = (np.abs(c_mi) ** 2).sum(axis=2)
            acc.intf += im.sum(axis=0)
            acc.intf_sq += (im ** 2).sum(axis=0)

        acc.est_outer += np.einsum("ckln,cklm->klnm", hhat, hhat.conj())
        acc.err_cross += np.einsum("ckln,cklm->klnm", hhat, (h - hhat).conj())

        done += count
        block_index += 1
    acc.count = trials
    return acc


def _mean_stderr(total, total_sq, n):
    mean = total / n
    var = np.maximum(total_sq / n - mean ** 2, 0.0)
    return mean, np.sqrt(var / n)


@dataclass(frozen=True)
class EmpiricalSinr:
    """Sample-average SINR decomposition with first-order standard errors."""

    gamma: np.ndarray
    gamma_stderr: np.ndarray
    desired_sq: np.ndarray          # |coherent desired signal|^2
    desired_sq_stderr: np.ndarray
    self_fluctuation: np.ndarray    # power of the unknown-channel part
    cross_interference: np.ndarray  # power of other users' signals
    varsigma_sq_w: np.ndarray       # primary interference + noise, sampled
    varsigma_stderr: np.ndarray


def empirical_sinr(sc: Scenario, p, trials, seed=0) -> EmpiricalSinr:
    """Measure the SINR of every secondary user by sample averages.

    Estimates the coherent desired power from the empirical mean effective
    gain, the remaining powers from second moments, and the primary
    interference by sampling the primary downlink signal from its covariance.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return _sinr_from_accumulator(_simulate(sc, p, trials, seed), sc)


def _sinr_from_accumulator(acc: _Accumulator, sc: Scenario) -> EmpiricalSinr:
    T = acc.count
    mean_v = acc.v_sum / T
    e2, e2_err = _mean_stderr(acc.v_sq, acc.v_quad, T)
    kk = np.arange(sc.config.K_s)
    desired = np.abs(mean_v[kk, kk]) ** 2
    self_var = np.maximum(e2[kk, kk] - desired, 0.0)
    desired_err = 2.0 * np.sqrt(desired * self_var / T)
    cross = e2.sum(axis=1) - e2[kk, kk]
    cross_err = np.sqrt((e2_err ** 2).sum(axis=1) - e2_err[kk, kk] ** 2)
    d2_mean, d2_err = _mean_stderr(acc.d_sq, acc.d_quad, T)
    varsigma = d2_mean + sc.sigma2_w
    denom = self_var + cross + varsigma
    denom_err = np.sqrt(e2_err[kk, kk] ** 2 + cross_err ** 2 + d2_err ** 2)
    gamma = desired / denom
    gamma_err = gamma * np.sqrt((desired_err / np.maximum(desired, 1e-300)) ** 2
                                + (denom_err / denom) ** 2)
    return EmpiricalSinr(gamma, gamma_err, desired, desired_err, self_var,
                         cross, varsigma, d2_err)


def empirical_interference(sc: Scenario, p, trials, seed=0):
    """Sample-average interference power at each primary user (and stderr).

    The expectation over data symbols is taken analytically per realization,
    which lowers the variance without biasing the estimate.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    acc = _simulate(sc, p, trials, seed)
    return _mean_stderr(acc.intf, acc.intf_sq, acc.count)


def empirical_estimate_covariance(sc: Scenario, trials, seed=0) -> np.ndarray:
    """Sample covariance of the MMSE estimates, per link: (K_s, L, N, N)."""
    acc = _simulate(sc, np.zeros((sc.config.K_s, sc.config.L)), trials, seed)
    return acc.est_outer / acc.count


@dataclass(frozen=True)
class ValidationRow:
    quantity: str
    closed_form: float
    empirical: float
    stderr: float
    rel_err: float
    status: str  # ok | fail | inconclusive

    def csv(self):
        return (f"{self.quantity},{self.closed_form!r},{self.empirical!r},"
                f"{self.stderr!r},{self.rel_err!r},{self.status}")


VALIDATION_CSV_HEADER = "quantity,closed_form,empirical,stderr,rel_err,status"


def _row(name, closed, emp, stderr, tol):
    closed, emp = float(closed), float(emp)
    scale = abs(closed) if closed != 0 else 1.0  # zero targets are pre-normalized
    rel = abs(emp - closed) / scale
    if rel <= tol:
        status = "ok"
    elif abs(emp - closed) <= 3.0 * stderr or 3.0 * stderr > tol * scale:
        # breach within sampling noise, or too few trials to resolve tol
        status = "inconclusive"
    else:
        status = "fail"
    return ValidationRow(name, closed, emp, float(stderr), rel, status)


def validation_report(sc: Scenario, p, trials, seed=0, tol=0.02,
                      corrupt=None) -> list:
    """Compare every closed-form statistic against one Monte-Carlo pass.

    Returns ValidationRow items; `fail` means the discrepancy exceeds `tol`
    relative and is statistically significant (beyond 3 standard errors),
    `inconclusive` means the trial count cannot resolve the tolerance.
    `corrupt`, if given, scales the closed-form mean gains by that factor
    (fault-injection hook for testing the gate itself).
    """
    cfg = sc.config
    coeffs = compute_coefficients(sc)
    mean_gain = coeffs.mean_gain * (corrupt if corrupt is not None else 1.0)
    acc = _simulate(sc, p, trials, seed)
    T = acc.count
    rows = []

    # estimate covariance, Frobenius-relative, Gaussian-rate stderr
    stats = estimation_statistics(sc)
    emp_cov = acc.est_outer / T
    for k in range(cfg.K_s):
        for l in range(cfg.L):
            closed = stats.est_cov[k, l]
            scale = np.linalg.norm(closed)
            if scale == 0:
                continue
            diff = np.linalg.norm(emp_cov[k, l] - closed) / scale
            dd = np.real(np.diag(closed))
            ent_var = np.add.outer(dd, dd) / 2 + np.abs(closed) ** 2
            stderr = np.sqrt(ent_var.sum() / T) / scale
            rows.append(_row(f"est_cov[{k}][{l}]", 0.0, diff, stderr, tol))

    # orthogonality of estimate and error, normalized by the estimate trace
    for k in range(cfg.K_s):
        for l in range(cfg.L):
            tr = stats.est_cov[k, l].trace().real
            if tr <= 0:
                continue
            ratio = np.linalg.norm(acc.err_cross[k, l] / T) / tr
            err_tr = stats.err_cov[k, l].trace().real
            stderr = np.sqrt(tr * max(err_tr, 0.0) / T) / tr
            rows.append(_row(f"est_err_cross[{k}][{l}]", 0.0, ratio, stderr, tol))

    # mean effective gain of each user's own precoders
    g_mean = acc.g_self / T
    _, g_err = _mean_stderr(acc.g_self.real, acc.g_self_re_sq, T)
    for k in range(cfg.K_s):
        for l in range(cfg.L):
            rows.append(_row(f"mean_gain[{k}][{l}]", mean_gain[k, k, l],
                             g_mean[k, l].real, g_err[k, l], tol))

    # precoder normalization
    wn, wn_err = _mean_stderr(acc.wnorm, acc.wnorm_sq, T)
    for k in range(cfg.K_s):
        for l in range(cfg.L):
            rows.append(_row(f"precoder_norm[{k}][{l}]", 1.0, wn[k, l],
                             wn_err[k, l], tol))

    # SINR per user against the closed form
    emp = _sinr_from_accumulator(acc, sc)
    corrupted = coeffs if corrupt is None else type(coeffs)(
        mean_gain, coeffs.power_gain, coeffs.leakage, coeffs.primary_noise_w,
        coeffs.primary_tx_cov, coeffs.primary_est_cov)
    gamma_closed = metrics.sinr(p, corrupted)
    for k in range(cfg.K_s):
        rows.append(_row(f"sinr[{k}]", gamma_closed[k], emp.gamma[k],
                         emp.gamma_stderr[k], tol))

    # primary interference-plus-noise at each secondary user
    for k in range(cfg.K_s):
        rows.append(_row(f"varsigma_sq[{k}]", coeffs.primary_noise_w[k],
                         emp.varsigma_sq_w[k], emp.varsigma_stderr[k], tol))

    # average interference at each primary user
    if cfg.K_p:
        closed_int = np.einsum("il,iml->m", np.asarray(p, dtype=float),
                               coeffs.leakage)
        int_mean, int_err = _mean_stderr(acc.intf, acc.intf_sq, T)
        for m in range(cfg.K_p):
            rows.append(_row(f"interference[{m}]", closed_int[m], int_mean[m],
                             int_err[m], tol))
    return rows
