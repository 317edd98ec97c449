"""Bulk-synchronous per-AP solver loop and the centralized ADMM reference."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import hbf_solver as hs
from .metrics import HbfState, weighted_sum_rate
from .panda_core import (IterationReport, PenaltyConfig, Termination, augmented_lagrangian,
                         convergence_check, dual_ascent, estimate_lipschitz)
from .scene import ChannelSet, NetworkScene

log = logging.getLogger(__name__)

BCD_MAX_SWEEPS = 20
BCD_TOL = 1e-6


@dataclass
class Problem:
    channels: ChannelSet
    specs: list
    weights: np.ndarray
    noises: np.ndarray
    power: float
    n_rf: int
    bsum_iters: int = 50
    bsum_tol: float = 1e-6

    def __post_init__(self):
        if len(self.specs) != self.channels.n_aps:
            raise ValueError("need exactly one BeampatternSpec per AP")
        self.weights = np.asarray(self.weights, dtype=float)
        self.noises = np.asarray(self.noises, dtype=float)

    @property
    def n_aps(self) -> int:
        return self.channels.n_aps


@dataclass
class SolveResult:
    states: list
    ap_states: list
    reports: list
    wall_ms: list
    termination: Termination
    message_payloads: list = field(default_factory=list)
    solver: str = "panda"

    @property
    def iterations(self) -> int:
        return len(self.reports)

    @property
    def final_wsr(self) -> float:
        return float(self.reports[-1].extras["wsr"]) if self.reports else float("nan")


def make_problem(scene: NetworkScene, channels: ChannelSet, specs, weights=None, bsum_iters=50,
                 bsum_tol=1e-6) -> Problem:
    w = np.ones(scene.n_ues) if weights is None else np.asarray(weights, dtype=float)
    return Problem(channels, list(specs), w, scene.noise_power_comm, scene.tx_power_budget,
                   scene.n_rf, bsum_iters, bsum_tol)


def init_states(problem: Problem, rng: np.random.Generator) -> list:
    return [hs.init_state(Ha, spec, problem.n_rf, problem.power, rng)
            for Ha, spec in zip(problem.channels.H, problem.specs)]


# ------------------------------------------------------------------ per-AP work


def _primal_tail(st: hs.ApSolverState, pen: PenaltyConfig, problem: Problem):
    """U, Z, F_A, F_D steps shared by both solvers."""
    st.U_mat = hs.update_U(st)
    st.Z = hs.update_Z(st)
    st.F_A = hs.update_FA(st, pen, problem.bsum_iters, problem.bsum_tol)
    st.F_D = hs.update_FD(st, pen)


def _local_sweep(a, st, Xi_sum, gram_sum, problem, pen, s1=True):
    """One agent's primal sweep given the broadcast message sum."""
    aux = hs.update_r_eta(Xi_sum, problem.weights, problem.noises)
    st.V = hs.update_V(st)
    st.zeta = hs.update_zeta(st)
    if s1:
        alpha = _alpha(aux, gram_sum)
        grad = hs.coupled_gradient(st.H, aux, Xi_sum)
        st.T = hs.update_T(st, grad, hs.linear_term(aux, st.H), alpha, pen.rho, problem.power)
        _primal_tail(st, pen, problem)
    return aux


def _alpha(aux: hs.AuxScalars, gram_sum: np.ndarray) -> float:
    """Same value as ``estimate_lipschitz`` but from the U x U Gram sum shared once at setup."""
    return estimate_lipschitz([gram_sum_root(gram_sum)], aux.J1)


def gram_sum_root(gram_sum: np.ndarray) -> np.ndarray:
    """A matrix R with ``R^H R = gram_sum``, so the Gram sum can stand in for the channels."""
    w, Q = np.linalg.eigh(0.5 * (gram_sum + gram_sum.conj().T))
    return (Q * np.sqrt(np.clip(w, 0, None))).conj().T


def _tag(exc: hs.InfeasibleSubproblem, a: int, k: int):
    exc.ap, exc.iteration = a, k
    exc.args = (f"AP {a}, iteration {k}: {exc.args[0]}",)
    return exc


# ------------------------------------------------------------------ diagnostics


def _objective(states, problem: Problem, aux) -> float:
    return hs.surrogate_objective([s.T for s in states], problem.channels, aux, problem.noises)


def _al(states, problem, aux, pen) -> float:
    return augmented_lagrangian(_objective(states, problem, aux), states, pen)


def _diagnostics(states, problem: Problem) -> dict:
    hbf = [HbfState(s.F_A, s.F_D) for s in states]
    out = {"wsr": weighted_sum_rate(hbf, problem.channels, problem.weights, problem.noises)}
    out["mse_u"] = np.array([hs.surrogate_mse(s.U_mat, s.V, s.zeta, s.spec, s.A_all) for s in states])
    out["mse_x"] = np.array([hs.surrogate_mse(s.X, s.V, s.zeta, s.spec, s.A_all) for s in states])
    out["notch_z"] = np.array([float(np.max(np.sum(np.abs(s.Z) ** 2, axis=0))) if s.Z.size else 0.0
                               for s in states])
    out["notch_x"] = np.array([float(np.max(np.sum(np.abs(s.A_N.conj().T @ s.X) ** 2, axis=1)))
                               if s.A_N.shape[1] else 0.0 for s in states])
    out["residual_u"] = np.array([np.linalg.norm(s.U_mat - s.X) for s in states])
    return out


# ------------------------------------------------------------------ solvers


def _run(problem: Problem, pen: PenaltyConfig, rng, threads, solver: str, s1_mode: str,
         callback=None) -> SolveResult:
    states = init_states(problem, rng)
    A = problem.n_aps
    gram_sum = sum(Ha.conj().T @ Ha for Ha in problem.channels.H)
    workers = max(1, min(A, int(threads) if threads else A))
    reports, wall, payloads = [], [], []
    prev_al = None
    term = Termination.RUNNING
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def pmap(fn, items):
        if pool is None:
            return [fn(x) for x in items]
        return list(pool.map(fn, items))

    aux_prev = hs.update_r_eta(
        sum(m.Xi for m in [hs.exchange_message(a, s) for a, s in enumerate(states)]),
        problem.weights, problem.noises)
    try:
        for k in range(1, pen.max_outer_iters + 1):
            t0 = time.perf_counter()
            msgs = pmap(lambda a: hs.exchange_message(a, states[a]), range(A))
            payloads.append(int(sum(m.n_complex for m in msgs)))
            Xi_sum = msgs[0].Xi.copy()
            for m in msgs[1:]:
                Xi_sum = Xi_sum + m.Xi
            al_before = _al(states, problem, aux_prev, pen)
            prox = solver == "panda" or s1_mode == "prox"

            def sweep(a):
                try:
                    return _local_sweep(a, states[a], Xi_sum, gram_sum, problem, pen, s1=prox)
                except hs.InfeasibleSubproblem as exc:
                    raise _tag(exc, a, k)

            aux = pmap(sweep, range(A))[0]
            if not prox:
                _exact_t_block(states, problem, aux, pen)

                def tail(a):
                    try:
                        _primal_tail(states[a], pen, problem)
                    except hs.InfeasibleSubproblem as exc:
                        raise _tag(exc, a, k)

                pmap(tail, range(A))
            surrogate = _objective(states, problem, aux)
            al_after = augmented_lagrangian(surrogate, states, pen)
            extras = _diagnostics(states, problem)
            duals = np.array(pmap(lambda a: dual_ascent(states[a]), range(A)))
            residuals = duals[:, 0]
            wall.append(1e3 * (time.perf_counter() - t0))
            rep = IterationReport(k, al_after, residuals, duals, surrogate, al_before, extras)
            reports.append(rep)
            if callback is not None:
                callback(rep)
            term = convergence_check(rep, prev_al, pen, problem.power)
            prev_al = al_after
            aux_prev = aux
            if term != Termination.RUNNING:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    hbf = [HbfState(s.F_A.copy(), s.F_D.copy()) for s in states]
    return SolveResult(hbf, states, reports, wall, term, payloads, solver)


def _exact_t_block(states, problem: Problem, aux: hs.AuxScalars, pen: PenaltyConfig):
    """Joint T-block: exact block-coordinate sweeps over agents with r, eta fixed."""
    J1 = aux.J1
    JJ = J1.conj().T @ J1
    H = problem.channels.H
    Xis = [Ha.conj().T @ s.T for Ha, s in zip(H, states)]

    def block_value():
        return _al(states, problem, aux, pen)

    prev = block_value()
    for _ in range(BCD_MAX_SWEEPS):
        for a, (Ha, st) in enumerate(zip(H, states)):
            C = sum(Xis[i] for i in range(len(H)) if i != a) if len(H) > 1 else np.zeros_like(Xis[a])
            P = Ha @ JJ @ Ha.conj().T
            B = -Ha @ JJ @ C - 0.5 * hs.linear_term(aux, Ha).conj().T + 0.5 * pen.rho * (st.X - st.Omega)
            st.T = hs.sphere_quadratic_min(P, B, problem.power)
            Xis[a] = Ha.conj().T @ st.T
        cur = block_value()
        if abs(prev - cur) <= BCD_TOL * max(abs(cur), 1e-300):
            break
        prev = cur


def run_panda_distributed(scene, channels, specs, penalties: PenaltyConfig | None = None,
                          rng=None, threads=None, weights=None, callback=None,
                          problem: Problem | None = None) -> SolveResult:
    """Distributed solve: agents exchange only ``H_a^H T_a`` once per iteration."""
    problem = problem or make_problem(scene, channels, specs, weights)
    pen = penalties or PenaltyConfig()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return _run(problem, pen, rng, threads, "panda", "prox", callback)


def run_centralized_admm(scene, channels, specs, penalties: PenaltyConfig | None = None,
                         rng=None, threads=1, weights=None, s1_mode: str = "exact",
                         callback=None, problem: Problem | None = None) -> SolveResult:
    """Reference ADMM whose T-block is minimized exactly rather than linearized.

    ``s1_mode='prox'`` swaps in the linearized T-step, which makes the
    single-AP case reproduce the distributed trajectory.
    """
    if s1_mode not in ("exact", "prox"):
        raise ValueError("s1_mode must be 'exact' or 'prox'")
    problem = problem or make_problem(scene, channels, specs, weights)
    pen = penalties or PenaltyConfig()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return _run(problem, pen, rng, threads, "cen-admm", s1_mode, callback)
