"""Evaluation of SINR, spectral efficiency, power, energy efficiency, and
constraints for a given downlink power allocation.

A power allocation is a (K_s, L) array of nonnegative Watts: entry (i, l) is
the power AP l spends on user i.  All functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .estimation import SinrCoefficients, compute_coefficients


def validate_allocation(p, K_s, L):
    p = np.asarray(p, dtype=float)
    if p.shape != (K_s, L):
        raise ValueError(f"allocation shape {p.shape} != ({K_s}, {L})")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("allocation entries must be finite and >= 0")
    return p


def sinr(p, coeffs: SinrCoefficients, k=None):
    """Per-user downlink SINR of the allocation (vector, or scalar for `k`).

    Numerator: squared coherent sum of own-precoder mean gains.  Denominator:
    total average power coupling, plus the squared coherent sums of co-pilot
    precoders of other users, plus primary interference and noise.
    """
    a, b = coeffs.mean_gain, coeffs.power_gain
    K = a.shape[0]
    p = validate_allocation(p, K, a.shape[2])
    s = np.sqrt(p)
    coh = np.einsum("il,ikl->ik", s, a)           # coherent gain of user i at user k
    incoherent = np.einsum("il,ikl->k", p, b)
    cross = (coh ** 2).sum(axis=0) - np.diag(coh) ** 2
    desired = np.diag(coh) ** 2
    gamma = desired / (incoherent + cross + coeffs.primary_noise_w)
    return gamma if k is None else float(gamma[k])


def spectral_efficiency(gamma, tau_p, tau_c):
    """Net spectral efficiency in bit/s/Hz: pilot-overhead prefactor times
    log2(1 + SINR)."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("SINR must be >= 0")
    return (1.0 - tau_p / tau_c) * np.log2(1.0 + gamma)


def total_power(p, se, cfg: SystemConfig):
    """(full, reduced) power consumption in Watts.

    Full model: amplifier power plus throughput-proportional fronthaul power
    plus circuit power.  The reduced model drops the fronthaul term.
    """
    p = validate_allocation(p, cfg.K_s, cfg.L)
    amplifier = cfg.zeta * float(p.sum())
    reduced = amplifier + cfg.circuit_power_w
    fronthaul = cfg.xi_w_per_bps * cfg.bandwidth_hz * float(np.sum(se))
    return reduced + fronthaul, reduced


@dataclass(frozen=True)
class ConstraintReport:
    per_ap_power_w: np.ndarray       # (L,) transmit power per AP
    per_pue_interference_w: np.ndarray  # (K_p,) average interference per primary user
    p_max_w: float
    i_th_w: float
    feasible: bool


# closed constraint set: boundary points count as feasible up to round-off
_FEAS_RTOL = 1e-9


def constraint_report(p, coeffs: SinrCoefficients, cfg: SystemConfig) -> ConstraintReport:
    p = validate_allocation(p, cfg.K_s, cfg.L)
    per_ap = p.sum(axis=0)
    per_pue = np.einsum("il,iml->m", p, coeffs.leakage)
    feasible = bool(
        np.all(per_ap <= cfg.p_max_w * (1.0 + _FEAS_RTOL))
        and np.all(per_pue <= cfg.i_th_w * (1.0 + _FEAS_RTOL)))
    return ConstraintReport(per_ap, per_pue, cfg.p_max_w, cfg.i_th_w, feasible)


@dataclass(frozen=True)
class MetricsReport:
    """Everything measurable about one allocation on one scenario."""

    gamma: np.ndarray          # (K_s,) per-user SINR
    se: np.ndarray             # (K_s,) bit/s/Hz
    sum_throughput_bps: float
    power_w: float             # full model
    power_reduced_w: float
    ee_bit_per_joule: float    # full model
    per_ap_power_w: np.ndarray
    per_pue_interference_w: np.ndarray
    feasible: bool


def metrics_report(p, coeffs: SinrCoefficients, cfg: SystemConfig) -> MetricsReport:
    gamma = sinr(p, coeffs)
    se = spectral_efficiency(gamma, cfg.tau_p, cfg.tau_c)
    power, reduced = total_power(p, se, cfg)
    throughput = cfg.bandwidth_hz * float(se.sum())
    cons = constraint_report(p, coeffs, cfg)
    return MetricsReport(gamma, se, throughput, power, reduced,
                         throughput / power, cons.per_ap_power_w,
                         cons.per_pue_interference_w, cons.feasible)


def energy_efficiency(p, scenario, coeffs=None) -> float:
    """Full-model energy efficiency in bit/Joule of allocation `p`."""
    if coeffs is None:
        coeffs = compute_coefficients(scenario)
    return metrics_report(p, coeffs, scenario.config).ee_bit_per_joule


def metrics_csv_header(K_s: int) -> str:
    se_cols = ",".join(f"SE_{k}_bps_Hz" for k in range(K_s))
    return f"seed,P_max_dBm,Ith_over_sigma2_dB,EE_bit_per_J,sumSE_bps_Hz,{se_cols},feasible"


def metrics_csv_row(report: MetricsReport, seed: int, cfg: SystemConfig) -> str:
    se_cols = ",".join(repr(float(v)) for v in report.se)
    return (f"{seed},{cfg.p_max_dbm!r},{cfg.ith_over_sigma2_db!r},"
            f"{report.ee_bit_per_joule!r},{float(report.se.sum())!r},"
            f"{se_cols},{int(report.feasible)}")
