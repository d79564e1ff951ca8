"""Problem-instance construction: geometry, path loss, spatial correlation, pilots.

A Scenario bundles everything downstream code needs: node coordinates, one
spatial correlation matrix per link, the pilot assignment of both networks,
and the noise power.  Construction is deterministic given (config, seed) and
the result is immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import toeplitz

from .config import SystemConfig, noise_power  # noqa: F401  (re-exported op)


def channel_gain_db(distance_m: float) -> float:
    """Average channel gain in dB at a 3-D distance, log-distance model.

    Gain is the negative of the path loss 30.5 + 36.7*log10(d/1m) dB, so it
    decreases with distance.
    """
    if distance_m <= 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    return -(30.5 + 36.7 * math.log10(distance_m))


@lru_cache(maxsize=1)
def _gauss_hermite_nodes(order=50):
    x, w = np.polynomial.hermite.hermgauss(order)
    return x, w / math.sqrt(math.pi)


def local_scattering_covariance(nominal_angle_rad, angular_std_rad, n, gain):
    """Spatial correlation matrix of a half-wavelength ULA under local scattering.

    Multipath azimuth is Gaussian with the given std around the nominal angle;
    entry (r, c) is gain * E{exp(j*pi*(r-c)*sin(phi))}.  The expectation is
    evaluated with 50-node Gauss-Hermite quadrature, which is exact to machine
    precision for these smooth integrands, so the result is Hermitian Toeplitz
    and PSD up to round-off.

    Returns an (n, n) complex array with `gain` on the diagonal.
    """
    if n < 1:
        raise ValueError(f"array size must be >= 1, got {n}")
    if gain <= 0:
        raise ValueError(f"gain must be positive, got {gain}")
    if not 0 < angular_std_rad < math.pi / 2:
        raise ValueError(f"angular std must lie in (0, pi/2), got {angular_std_rad}")
    x, w = _gauss_hermite_nodes()
    phi = nominal_angle_rad + math.sqrt(2.0) * angular_std_rad * x
    m = np.arange(n)
    # first column of the Toeplitz matrix: correlation at antenna lags 0..n-1
    col = gain * (w @ np.exp(1j * np.pi * np.outer(np.sin(phi), m)))
    return toeplitz(col, col.conj())


def check_correlation_matrix(mat, herm_tol=1e-12, eig_tol=-1e-10):
    """Raise ValueError unless `mat` is Hermitian (within herm_tol, relative to
    its scale) with eigenvalues >= eig_tol."""
    mat = np.asarray(mat)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    scale = max(np.abs(mat).max(), 1e-300)
    herm_err = np.abs(mat - mat.conj().T).max()
    if herm_err > herm_tol * scale:
        raise ValueError(f"matrix is not Hermitian: deviation {herm_err:.3e}")
    eigs = np.linalg.eigvalsh(mat)
    if eigs.min() < eig_tol:
        raise ValueError(f"matrix is not PSD: min eigenvalue {eigs.min():.3e}")


@dataclass(frozen=True)
class PilotAssignment:
    """Pilot indices (0-based columns of the common pilot book) for every user.

    `sue_pilot[k]` / `pue_pilot[j]` is the pilot of secondary user k / primary
    user j.  `sue_sharers[k]` lists the secondary users on the same pilot as
    secondary user k (always includes k); `pue_sharers[k]` lists the primary
    users on that pilot.  `pue_copilot_pue` / `pue_copilot_sue` give the same
    sets from the primary side.
    """

    tau_p: int
    sue_pilot: tuple
    pue_pilot: tuple
    sue_sharers: tuple   # per S-UE: tuple of S-UE indices
    pue_sharers: tuple   # per S-UE: tuple of P-UE indices
    pue_copilot_pue: tuple  # per P-UE: tuple of P-UE indices
    pue_copilot_sue: tuple  # per P-UE: tuple of S-UE indices


def assign_pilots(cfg: SystemConfig) -> PilotAssignment:
    """Deterministic round-robin pilot allocation.

    The pilot book splits into tau1 columns shared by both networks, tau2
    reserved for the primary network, and tau3 reserved for the secondary
    network.  Secondary users cycle over the secondary-only columns first and
    then the shared ones; primary users cycle over primary-only then shared.
    """
    if cfg.tau_p < 1:
        raise ValueError("tau_p must be >= 1")
    shared = list(range(cfg.tau1))
    primary_only = list(range(cfg.tau1, cfg.tau1 + cfg.tau2))
    secondary_only = list(range(cfg.tau1 + cfg.tau2, cfg.tau_p))

    sue_candidates = secondary_only + shared
    pue_candidates = primary_only + shared
    if cfg.K_s > 0 and not sue_candidates:
        raise ValueError("no pilots available to secondary users (tau1 + tau3 = 0)")
    if cfg.K_p > 0 and not pue_candidates:
        raise ValueError("no pilots available to primary users (tau1 + tau2 = 0)")

    sue_pilot = tuple(sue_candidates[k % len(sue_candidates)] for k in range(cfg.K_s))
    pue_pilot = tuple(pue_candidates[j % len(pue_candidates)] for j in range(cfg.K_p))

    sue_sharers = tuple(
        tuple(i for i in range(cfg.K_s) if sue_pilot[i] == t) for t in sue_pilot)
    pue_sharers = tuple(
        tuple(j for j in range(cfg.K_p) if pue_pilot[j] == t) for t in sue_pilot)
    pue_copilot_pue = tuple(
        tuple(j for j in range(cfg.K_p) if pue_pilot[j] == t) for t in pue_pilot)
    pue_copilot_sue = tuple(
        tuple(i for i in range(cfg.K_s) if sue_pilot[i] == t) for t in pue_pilot)
    return PilotAssignment(cfg.tau_p, sue_pilot, pue_pilot, sue_sharers,
                           pue_sharers, pue_copilot_pue, pue_copilot_sue)


def perimeter_positions(side_m, count, height_m):
    """Equal arc-length positions on the walls of a square room.

    Point l sits at arc length (l + 0.5) * perimeter / count measured from the
    corner (0, 0) walking counterclockwise.
    """
    perimeter = 4.0 * side_m
    pos = np.zeros((count, 3))
    for l in range(count):
        s = (l + 0.5) * perimeter / count
        edge = int(s // side_m) % 4
        r = s - edge * side_m
        if edge == 0:
            xy = (r, 0.0)
        elif edge == 1:
            xy = (side_m, r)
        elif edge == 2:
            xy = (side_m - r, side_m)
        else:
            xy = (0.0, side_m - r)
        pos[l] = (xy[0], xy[1], height_m)
    return pos


@dataclass(frozen=True)
class Scenario:
    """One immutable problem instance: geometry, statistics, pilots, noise."""

    config: SystemConfig
    ap_pos: np.ndarray       # (L, 3)
    sue_pos: np.ndarray      # (K_s, 3)
    pue_pos: np.ndarray      # (K_p, 3)
    pbs_pos: np.ndarray      # (3,)
    sue_cov: np.ndarray      # (K_s, L, N, N)  AP -> secondary user
    pue_cov: np.ndarray      # (K_p, L, N, N)  AP -> primary user
    bs_sue_cov: np.ndarray   # (K_s, M, M)     primary BS -> secondary user
    bs_pue_cov: np.ndarray   # (K_p, M, M)     primary BS -> primary user
    pilots: PilotAssignment
    sigma2_w: float


def _link_covariance(src, dst, n, angular_std_rad):
    d = float(np.linalg.norm(dst - src))
    gain = 10.0 ** (channel_gain_db(d) / 10.0)
    azimuth = math.atan2(dst[1] - src[1], dst[0] - src[0])
    return local_scattering_covariance(azimuth, angular_std_rad, n, gain)


def build_scenario(cfg: SystemConfig) -> Scenario:
    """Draw one instance: fixed AP/BS placement, uniform user drops, and the
    local-scattering correlation matrix of every link.

    Secondary APs sit equispaced on the room walls at `ap_height_m`; users are
    on the floor.  The primary area is a square centered on the room center
    with its base station at the center, also at `ap_height_m`.  The same
    path-loss law applies to every link.  Deterministic given cfg.seed.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    side, pn_side = cfg.room_side_m, cfg.pn_side_m
    pn_center = np.array([side / 2.0 + cfg.pn_center_offset_m, side / 2.0])

    ap_pos = perimeter_positions(side, cfg.L, cfg.ap_height_m)
    sue_pos = np.column_stack(
        [rng.uniform(0.0, side, cfg.K_s), rng.uniform(0.0, side, cfg.K_s),
         np.zeros(cfg.K_s)])
    pue_pos = np.column_stack(
        [rng.uniform(pn_center[0] - pn_side / 2, pn_center[0] + pn_side / 2, cfg.K_p),
         rng.uniform(pn_center[1] - pn_side / 2, pn_center[1] + pn_side / 2, cfg.K_p),
         np.zeros(cfg.K_p)])
    pbs_pos = np.array([pn_center[0], pn_center[1], cfg.ap_height_m])

    std = math.radians(cfg.angular_std_deg)
    sue_cov = np.zeros((cfg.K_s, cfg.L, cfg.N, cfg.N), dtype=complex)
    pue_cov = np.zeros((cfg.K_p, cfg.L, cfg.N, cfg.N), dtype=complex)
    for l in range(cfg.L):
        for k in range(cfg.K_s):
            sue_cov[k, l] = _link_covariance(ap_pos[l], sue_pos[k], cfg.N, std)
        for j in range(cfg.K_p):
            pue_cov[j, l] = _link_covariance(ap_pos[l], pue_pos[j], cfg.N, std)
    bs_sue_cov = np.zeros((cfg.K_s, cfg.M, cfg.M), dtype=complex)
    bs_pue_cov = np.zeros((cfg.K_p, cfg.M, cfg.M), dtype=complex)
    for k in range(cfg.K_s):
        bs_sue_cov[k] = _link_covariance(pbs_pos, sue_pos[k], cfg.M, std)
    for j in range(cfg.K_p):
        bs_pue_cov[j] = _link_covariance(pbs_pos, pue_pos[j], cfg.M, std)

    arrays = (ap_pos, sue_pos, pue_pos, pbs_pos,
              sue_cov, pue_cov, bs_sue_cov, bs_pue_cov)
    for arr in arrays:
        arr.flags.writeable = False
    return Scenario(cfg, *arrays, pilots=assign_pilots(cfg),
                    sigma2_w=noise_power(cfg.bandwidth_hz, cfg.noise_figure_db))


def validate_scenario(sc: Scenario):
    """Check the construction invariants of every correlation matrix and of
    the pilot assignment; raises ValueError on the first violation."""
    cfg = sc.config
    groups = [(sc.sue_cov, sc.sue_pos, sc.ap_pos, cfg.N),
              (sc.pue_cov, sc.pue_pos, sc.ap_pos, cfg.N)]
    for cov, users, sources, n in groups:
        for k in range(cov.shape[0]):
            for l in range(cov.shape[1]):
                check_correlation_matrix(cov[k, l])
                d = np.linalg.norm(users[k] - sources[l])
                gain = 10.0 ** (channel_gain_db(d) / 10.0)
                if abs(cov[k, l].trace().real / n - gain) > 1e-9 * gain:
                    raise ValueError(f"trace/gain mismatch on link ({k}, {l})")
    for cov, users in [(sc.bs_sue_cov, sc.sue_pos), (sc.bs_pue_cov, sc.pue_pos)]:
        for k in range(cov.shape[0]):
            check_correlation_matrix(cov[k])
            d = np.linalg.norm(users[k] - sc.pbs_pos)
            gain = 10.0 ** (channel_gain_db(d) / 10.0)
            if abs(cov[k].trace().real / cfg.M - gain) > 1e-9 * gain:
                raise ValueError(f"trace/gain mismatch on BS link {k}")
    pil = sc.pilots
    for k in range(cfg.K_s):
        if k not in pil.sue_sharers[k]:
            raise ValueError(f"user {k} missing from its own sharing set")
        for i in pil.sue_sharers[k]:
            if k not in pil.sue_sharers[i]:
                raise ValueError("pilot sharing sets are not symmetric")
    if sc.sigma2_w <= 0:
        raise ValueError("noise power must be positive")
