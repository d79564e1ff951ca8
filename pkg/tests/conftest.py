import numpy as np
import pytest

from underlay_ee.config import SystemConfig
from underlay_ee.estimation import compute_coefficients
from underlay_ee.scenario import Scenario, assign_pilots, build_scenario

# small instance exercising every code path quickly
REFERENCE_CONFIG = SystemConfig(L=2, N=2, K_s=2, K_p=1, M=2, seed=1)


def make_synthetic_scenario(cfg, sue_cov, pue_cov=None, bs_sue_cov=None,
                            bs_pue_cov=None, sigma2_w=None):
    """Scenario with hand-crafted covariance matrices (geometry left dummy)."""
    sue_cov = np.asarray(sue_cov, dtype=complex)
    if pue_cov is None:
        pue_cov = np.zeros((cfg.K_p, cfg.L, cfg.N, cfg.N), dtype=complex)
    if bs_sue_cov is None:
        bs_sue_cov = np.zeros((cfg.K_s, cfg.M, cfg.M), dtype=complex)
    if bs_pue_cov is None:
        bs_pue_cov = np.tile(np.eye(cfg.M, dtype=complex), (cfg.K_p, 1, 1))
    return Scenario(
        config=cfg,
        ap_pos=np.zeros((cfg.L, 3)),
        sue_pos=np.zeros((cfg.K_s, 3)),
        pue_pos=np.zeros((cfg.K_p, 3)),
        pbs_pos=np.zeros(3),
        sue_cov=sue_cov,
        pue_cov=np.asarray(pue_cov, dtype=complex),
        bs_sue_cov=np.asarray(bs_sue_cov, dtype=complex),
        bs_pue_cov=np.asarray(bs_pue_cov, dtype=complex),
        pilots=assign_pilots(cfg),
        sigma2_w=cfg.sigma2_w if sigma2_w is None else sigma2_w,
    )


@pytest.fixture(scope="session")
def reference_scenario():
    return build_scenario(REFERENCE_CONFIG)


@pytest.fixture(scope="session")
def reference_coeffs(reference_scenario):
    return compute_coefficients(reference_scenario)


@pytest.fixture(scope="session")
def fullsize_scenario():
    return build_scenario(SystemConfig(seed=1))


@pytest.fixture(scope="session")
def fullsize_coeffs(fullsize_scenario):
    return compute_coefficients(fullsize_scenario)
