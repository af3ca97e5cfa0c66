"""Numerical certificates for a finished design.

These checks are what `cmd_check` runs and what the plug-in transaction
requires before committing: invariance under sampled states/disturbances,
strict inclusion of the tube sections inside the constraints, homogeneity of
the invariance control, and nonemptiness of the tightened sets.
"""

from __future__ import annotations

import numpy as np

from .controller import TubeController, kappa_bar_full
from .geometry import member_aggregate
from .model import Subsystem
from .rci import RciDesign

__all__ = [
    "rci_certificate",
    "inclusion_report",
    "tube_containment_report",
    "homogeneity_report",
    "structural_report",
    "run_all_checks",
]


def rci_certificate(sub: Subsystem, design: RciDesign, n_samples: int = 1000,
                    seed: int = 0, tol: float = 1e-6) -> dict:
    """Sampled invariance check: states from the invariant set, disturbances
    from the coupling set, successors must stay members (within tol)."""
    rng = np.random.default_rng(seed)
    Z = design.z_set()
    failures = 0
    input_violations = 0
    for _ in range(n_samples):
        x = Z.sample(rng)
        w = design.w_set.sample(rng)
        u, mu, _ = kappa_bar_full(design, x)
        if not sub.U.contains(u, tol=1e-7):
            input_violations += 1
        succ = sub.A @ x + sub.B @ u + w
        if not member_aggregate(Z, succ, tol=tol).feasible:
            failures += 1
    return {
        "name": "rci_certificate",
        "samples": n_samples,
        "failures": failures,
        "input_violations": input_violations,
        "passed": failures == 0 and input_violations == 0,
    }


def inclusion_report(sub: Subsystem, design: RciDesign) -> dict:
    """Strict inclusion of the invariant set in X and of its inputs in U."""
    sx, su = design.inclusion_slacks(sub.X, sub.U)
    return {
        "name": "inclusions",
        "min_state_slack": float(sx.min()),
        "min_input_slack": float(su.min()),
        "passed": bool(sx.min() > 0 and su.min() > 0),
    }


def tube_containment_report(ctrl: TubeController) -> dict:
    """Per-facet check that the tightened state set plus the tube section
    stays inside the original constraints (and same on the input side)."""
    rci = ctrl.rci
    sub = ctrl.sub
    Z = rci.z_set()
    Uz = rci.u_set()
    slack_x = min(
        float(sub.X.d[r] - ctrl.Xhat.support(sub.X.C[r]) - Z.support(sub.X.C[r]))
        for r in range(sub.X.n_rows))
    slack_u = min(
        float(sub.U.d[r] - ctrl.V.support(sub.U.C[r]) - Uz.support(sub.U.C[r]))
        for r in range(sub.U.n_rows))
    return {
        "name": "tube_containment",
        "min_state_slack": slack_x,
        "min_input_slack": slack_u,
        "passed": bool(slack_x >= -1e-8 and slack_u >= -1e-8),
    }


def homogeneity_report(design: RciDesign, n_samples: int = 100, seed: int = 0,
                       rhos=(0.0, 0.3, 1.0, 2.0), tol: float = 1e-7) -> dict:
    """Value-level homogeneity of the invariance control: the optimal
    occupancy scales linearly and the scaled control stays feasible and
    optimal for the scaled state (optimizer uniqueness is not assumed)."""
    rng = np.random.default_rng(seed)
    Z = design.z_set()
    zmat = design.sigma * np.hstack([blk.T for blk in design.z_blocks])
    worst = 0.0
    u0, mu0, _ = kappa_bar_full(design, np.zeros(design.A.shape[0]))
    zero_exact = mu0 == 0.0 and not np.any(u0)
    for _ in range(n_samples):
        z = Z.sample(rng)
        _, mu, beta = kappa_bar_full(design, z)
        for rho in rhos:
            _, mu_r, _ = kappa_bar_full(design, rho * z)
            worst = max(worst, abs(mu_r - rho * mu))
            # the rho-scaled optimizer stays feasible for the scaled state
            # and achieves the scaled optimum
            link_residual = float(np.abs(zmat @ (rho * beta) - rho * z).max(initial=0.0))
            worst = max(worst, link_residual, abs(rho * mu - mu_r))
    return {
        "name": "homogeneity",
        "samples": n_samples,
        "max_deviation": worst,
        "zero_maps_to_zero": zero_exact,
        "passed": bool(worst <= tol and zero_exact),
    }


def structural_report(design: RciDesign, tol: float = 1e-9) -> dict:
    """Algebraic identities of the solved parametrization: the one-step
    vertex chain, the fold-back of the last block, and the origin pins."""
    worst_chain = 0.0
    blocks = design.z_blocks + [design.z_terminal]
    for s in range(design.k):
        pred = blocks[s]
        succ = blocks[s + 1]
        resid = succ - pred @ design.A.T - design.u_blocks[s] @ design.B.T
        worst_chain = max(worst_chain, float(np.abs(resid).max()))
    fold = design.z_terminal - design.rho @ design.z_blocks[0]
    worst_fold = float(np.abs(fold).max())
    rho_ok = bool(np.min(design.rho) >= -tol
                  and np.max(design.rho.sum(axis=1)) <= design.alpha + tol)
    pins = max(float(np.abs(b[0]).max()) for b in design.z_blocks + design.u_blocks)
    return {
        "name": "structure",
        "chain_residual": worst_chain,
        "fold_residual": worst_fold,
        "origin_pins": pins,
        "alpha": design.alpha,
        "passed": bool(worst_chain <= tol and worst_fold <= tol and rho_ok
                       and pins <= tol and 0.0 <= design.alpha < 1.0),
    }


def run_all_checks(ctrl: TubeController, n_samples: int = 1000, seed: int = 0) -> list[dict]:
    reports = [
        structural_report(ctrl.rci),
        inclusion_report(ctrl.sub, ctrl.rci),
        tube_containment_report(ctrl),
    ]
    if n_samples > 0:
        reports.append(rci_certificate(ctrl.sub, ctrl.rci, n_samples=n_samples, seed=seed))
        reports.append(homogeneity_report(ctrl.rci, n_samples=max(10, n_samples // 10), seed=seed))
    return reports
