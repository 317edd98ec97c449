"""Proximal-gradient decentralized ADMM machinery shared by both solvers.

Gradients of real functions of complex matrices follow one convention
throughout: ``grad f`` is the matrix for which the first-order change is
``Re Tr(grad^H dX)`` (twice the conjugate Wirtinger derivative). With that
convention ``X - t * grad`` descends and the descent-lemma quadratic uses the
Lipschitz constant of ``grad`` directly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LIPSCHITZ_FLOOR = 1e-8


@dataclass
class SplitObjective:
    """Coupled smooth part plus per-agent linear parts of a split objective.

    ``coupled_gradient(a, messages)`` returns the block of grad G0 owned by
    agent ``a`` given every agent's exchange message; ``separable_linear_terms(a)``
    returns the matrix B_a of the agent term ``Re Tr(B_a T_a)``.
    """

    coupled_gradient: Callable
    separable_linear_terms: Callable
    lipschitz_alpha: float

    def __post_init__(self):
        if not self.lipschitz_alpha > 0:
            raise ValueError("Lipschitz constant must be positive")


@dataclass
class PenaltyConfig:
    rho: float = 1.0
    varrho: float = 1.0
    lam: float = 1.0
    max_outer_iters: int = 500
    primal_tolerance: float = 1e-3
    al_change_tolerance: float = 1e-5
    min_iters: int = 2

    def __post_init__(self):
        for name in ("rho", "varrho", "lam", "primal_tolerance", "al_change_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")


@dataclass
class IterationReport:
    iteration: int
    augmented_lagrangian: float
    primal_residuals: np.ndarray
    dual_changes: np.ndarray
    surrogate_objective: float
    al_before_sweep: float = float("nan")
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.primal_residuals = np.asarray(self.primal_residuals, dtype=float)
        self.dual_changes = np.asarray(self.dual_changes, dtype=float)
        if np.any(self.primal_residuals < 0):
            raise ValueError("residuals are norms and cannot be negative")


class Termination(str, enum.Enum):
    RUNNING = "running"
    RESIDUAL = "residual"
    ITERATION_CAP = "iteration_cap"


def prox_surrogate_target(T_prev, X, Omega, grad_coupled, alpha: float, rho: float) -> np.ndarray:
    """Point fed to the proximal operator of the linearized T-step.

    ``(-grad G0(T_prev) + alpha T_prev + rho (X - Omega)) / (alpha + rho)``.
    """
    beta = alpha + rho
    return (-grad_coupled + alpha * T_prev + rho * (X - Omega)) / beta


def penalty_terms(T, U, Z, X, A_N, Omega, Lam, Phi, pen: PenaltyConfig) -> float:
    """Sum of the three scaled-dual penalty blocks of one agent."""
    out = 0.5 * pen.rho * np.linalg.norm(T - X + Omega) ** 2
    out += 0.5 * pen.varrho * np.linalg.norm(U - X + Lam) ** 2
    if A_N.shape[1]:
        out += 0.5 * pen.lam * np.linalg.norm(Z - X.conj().T @ A_N + Phi) ** 2
    return float(out)


def augmented_lagrangian(objective_value: float, agents, pen: PenaltyConfig) -> float:
    """G(T) plus every agent's penalty blocks.

    ``agents`` yields objects exposing ``T, U_mat, Z, X, A_N, Omega, Lam, Phi``.
    """
    total = float(objective_value)
    for s in agents:
        total += penalty_terms(s.T, s.U_mat, s.Z, s.X, s.A_N, s.Omega, s.Lam, s.Phi, pen)
    return total


def dual_ascent(state) -> tuple:
    """Scaled dual update ``D += primal residual`` for the three splitting blocks.

    Mutates ``state`` and returns the norms of the three dual changes.
    """
    X = state.X
    dO = state.T - X
    dL = state.U_mat - X
    dP = state.Z - X.conj().T @ state.A_N
    state.Omega = state.Omega + dO
    state.Lam = state.Lam + dL
    state.Phi = state.Phi + dP
    return float(np.linalg.norm(dO)), float(np.linalg.norm(dL)), float(np.linalg.norm(dP))


def estimate_lipschitz(channels, J1: np.ndarray) -> float:
    """Lipschitz constant of grad of ``||J1 sum_a H_a^H T_a||^2`` over the stacked T.

    Equals ``2 lambda_max(J1 (sum_a H_a^H H_a) J1^H)``, the spectral norm of
    the full cross-agent Hessian, which only needs U x U quantities.
    """
    H = channels.H if hasattr(channels, "H") else channels
    gram = sum(Ha.conj().T @ Ha for Ha in H)
    M = J1 @ gram @ J1.conj().T
    lam = float(np.linalg.eigvalsh(0.5 * (M + M.conj().T))[-1])
    return max(2.0 * lam, LIPSCHITZ_FLOOR)


def convergence_check(report: IterationReport, previous_al: float | None, pen: PenaltyConfig,
                      power_budget: float) -> Termination:
    """Residual-and-AL-change rule with a minimum iteration count and a hard cap."""
    k = report.iteration
    if k < pen.min_iters or previous_al is None:
        return Termination.ITERATION_CAP if k >= pen.max_outer_iters else Termination.RUNNING
    res = float(np.max(report.primal_residuals)) / np.sqrt(power_budget) if report.primal_residuals.size else 0.0
    al = report.augmented_lagrangian
    change = abs(al - previous_al) / max(abs(al), 1e-300) if al != previous_al else 0.0
    if res < pen.primal_tolerance and change < pen.al_change_tolerance:
        return Termination.RESIDUAL
    if k >= pen.max_outer_iters:
        return Termination.ITERATION_CAP
    return Termination.RUNNING
