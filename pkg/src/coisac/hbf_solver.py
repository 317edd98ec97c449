"""Closed-form and one-dimensional-root updates for every block of the HBF design."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .panda_core import PenaltyConfig
from .scene import BeampatternSpec, steering_matrix

log = logging.getLogger(__name__)


class InfeasibleSubproblem(RuntimeError):
    """The beampattern-MSE budget cannot be met even by the best U."""

    def __init__(self, message, min_mse=float("nan"), ap=None, iteration=None):
        super().__init__(message)
        self.min_mse = min_mse
        self.ap = ap
        self.iteration = iteration


@dataclass
class AuxScalars:
    r: np.ndarray
    eta: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.r) < 0):
            raise ValueError("r must be nonnegative")

    @property
    def J1(self) -> np.ndarray:
        return np.diag(np.conj(self.eta))

    @property
    def J2(self) -> np.ndarray:
        return np.diag(np.sqrt(self.weights * (1.0 + self.r)) * np.conj(self.eta))


@dataclass(frozen=True)
class ExchangeMessage:
    """The only inter-AP payload: ``H_a^H T_a`` (U x U)."""

    sender: int
    Xi: np.ndarray

    @property
    def n_complex(self) -> int:
        return int(self.Xi.size)


@dataclass
class UEigen:
    """Cached eigendecomposition of ``A_all diag(mu) A_all^H`` for the U-step."""

    values: np.ndarray
    vectors: np.ndarray


@dataclass
class ApSolverState:
    H: np.ndarray
    spec: BeampatternSpec
    F_A: np.ndarray
    F_D: np.ndarray
    T: np.ndarray
    U_mat: np.ndarray
    Z: np.ndarray
    V: np.ndarray
    zeta: float
    Omega: np.ndarray
    Lam: np.ndarray
    Phi: np.ndarray
    A_N: np.ndarray
    A_all: np.ndarray
    eig: UEigen
    flags: list = field(default_factory=list)

    @property
    def X(self) -> np.ndarray:
        return self.F_A @ self.F_D

    @property
    def n_tx(self) -> int:
        return self.H.shape[0]

    def copy(self) -> "ApSolverState":
        c = ApSolverState(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        for name in ("F_A", "F_D", "T", "U_mat", "Z", "V", "Omega", "Lam", "Phi"):
            setattr(c, name, getattr(self, name).copy())
        c.flags = list(self.flags)
        return c


# ------------------------------------------------------------------ objective


def exchange_message(a: int, state: ApSolverState) -> ExchangeMessage:
    return ExchangeMessage(a, state.H.conj().T @ state.T)


def update_r_eta(Xi: np.ndarray, weights, noises) -> AuxScalars:
    """Fractional-programming auxiliaries that make the surrogate tight at ``Xi``."""
    weights = np.asarray(weights, dtype=float)
    noises = np.asarray(noises, dtype=float)
    gains = np.abs(Xi) ** 2
    diag = np.diag(Xi)
    total = gains.sum(axis=1) + noises
    r = np.abs(diag) ** 2 / (total - np.abs(diag) ** 2)
    eta = np.sqrt(weights * (1.0 + r)) * diag / total
    return AuxScalars(r=r, eta=eta, weights=weights)


def linear_term(aux: AuxScalars, H: np.ndarray) -> np.ndarray:
    """B_2 of the agent term ``Re Tr(B_2 T_a)``."""
    return -2.0 * aux.J2 @ H.conj().T


def coupled_objective(Xi: np.ndarray, aux: AuxScalars) -> float:
    return float(np.linalg.norm(aux.J1 @ Xi) ** 2)


def coupled_gradient(H: np.ndarray, aux: AuxScalars, Xi: np.ndarray) -> np.ndarray:
    """Block of grad G0 w.r.t. T_a; only the summed message is needed from the others."""
    J1 = aux.J1
    return 2.0 * H @ (J1.conj().T @ J1) @ Xi


def constant_term(aux: AuxScalars, noises) -> float:
    """``-sum_u c_1,u(r_u, eta_u)``."""
    w, r = aux.weights, aux.r
    c1 = w * np.log1p(r) - w * r - np.abs(aux.eta) ** 2 * np.asarray(noises, dtype=float)
    return float(-np.sum(c1))


def surrogate_objective(Ts, channels, aux: AuxScalars, noises) -> float:
    """Fractional-programming surrogate of ``-WSR`` (natural log) at the given T_a."""
    H = channels.H if hasattr(channels, "H") else channels
    Xi = sum(Ha.conj().T @ Ta for Ha, Ta in zip(H, Ts))
    val = coupled_objective(Xi, aux)
    for Ha, Ta in zip(H, Ts):
        val += float(np.real(np.trace(linear_term(aux, Ha) @ Ta)))
    return val + constant_term(aux, noises)


# ------------------------------------------------------------------ T step


def update_T(state: ApSolverState, grad: np.ndarray, B2: np.ndarray, alpha: float,
             rho: float, power: float) -> np.ndarray:
    """Linearized T-step: minimizer of the proximal model over ``||T||^2 = E``."""
    T_tilde = -B2.conj().T - grad + alpha * state.T + rho * (state.X - state.Omega)
    nrm = np.linalg.norm(T_tilde)
    scale = (np.linalg.norm(B2) + np.linalg.norm(grad) + alpha * np.linalg.norm(state.T)
             + rho * np.linalg.norm(state.X - state.Omega))
    if nrm <= 1e-13 * scale:
        state.flags.append("degenerate_T")
        prev = np.linalg.norm(state.T)
        return state.T * np.sqrt(power) / prev if prev > 0 else state.T
    return np.sqrt(power) * T_tilde / nrm


def sphere_quadratic_min(P: np.ndarray, B: np.ndarray, power: float) -> np.ndarray:
    """argmin ``sum_c t_c^H P t_c - 2 Re(b_c^H t_c)`` subject to ``||T||_F^2 = power``.

    Trust-region secular equation on the shared eigenbasis of P, including
    the hard case. Used by the exact (centralized) T-block update.
    """
    lam, Q = np.linalg.eigh(0.5 * (P + P.conj().T))
    Bt = Q.conj().T @ B
    bn = np.sum(np.abs(Bt) ** 2, axis=1)
    lmin = lam[0]
    scale = max(abs(lam[-1]), 1.0)

    def norm2(nu):
        return float(np.sum(bn / (lam + nu) ** 2))

    low = -lmin
    tie = lam - lmin <= 1e-12 * scale
    if np.all(bn[tie] <= 1e-30 * max(bn.sum(), 1e-300)):
        # hard case candidate: the secular function stays bounded at nu = -lmin
        with np.errstate(divide="ignore", invalid="ignore"):
            Tt = np.where(tie[:, None], 0.0, Bt / (lam - lmin)[:, None])
        rest = power - np.linalg.norm(Tt) ** 2
        if rest >= 0:
            idx = int(np.argmax(tie))
            Tt[idx, 0] += np.sqrt(rest)
            return Q @ Tt
    hi = low + np.sqrt(bn.sum() / power) + scale
    while norm2(hi) > power:
        hi = low + 2.0 * (hi - low)
    lo = low
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == low or norm2(mid) > power:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(abs(hi), 1.0):
            break
    Tt = Bt / (lam + hi)[:, None]
    return np.sqrt(power) * (Q @ Tt) / np.linalg.norm(Tt)


# ------------------------------------------------------------------ U / V / zeta


def surrogate_mse(U: np.ndarray, V: np.ndarray, zeta: float, spec: BeampatternSpec,
                  A_all: np.ndarray | None = None) -> float:
    """Quadratic beampattern surrogate ``(1/L) sum_l mu_l ||a_l^H U - zeta v_l^H||^2``."""
    if A_all is None:
        A_all = steering_matrix(spec.grid_angles, U.shape[0])
    R = A_all.conj().T @ U - zeta * V.conj().T
    return float(np.mean(spec.weights * np.sum(np.abs(R) ** 2, axis=1)))


def update_V(state: ApSolverState) -> np.ndarray:
    """Unit-direction auxiliaries scaled to the desired spectrum."""
    p = state.spec.desired_spectrum
    rows = state.A_all.conj().T @ state.U_mat          # L x U, row l = a_l^H U
    nrm = np.linalg.norm(rows, axis=1)
    V = np.zeros((state.U_mat.shape[1], len(p)), dtype=complex)
    ok = nrm > 0
    V[:, ok] = (np.sqrt(p[ok]) / nrm[ok]) * rows[ok].conj().T
    bad = ~ok & (p > 0)
    if np.any(bad):
        state.flags.append("degenerate_V")
        V[0, bad] = np.sqrt(p[bad])
    return V


def update_zeta(state: ApSolverState) -> float:
    """Least-squares amplitude scale for the current U and V, clamped at zero."""
    mu = state.spec.weights
    rows = state.A_all.conj().T @ state.U_mat
    num = np.sum(mu * np.real(np.sum(rows * state.V.T, axis=1)))
    den = np.sum(mu * np.sum(np.abs(state.V) ** 2, axis=0))
    if den <= 0:
        return 0.0
    return max(0.0, float(num / den))


def u_step_eigen(spec: BeampatternSpec, A_all: np.ndarray) -> UEigen:
    K = (A_all * spec.weights) @ A_all.conj().T
    w, Q = np.linalg.eigh(0.5 * (K + K.conj().T))
    return UEigen(np.clip(w, 0.0, None), Q)


def qcqp1_ball_like(d: np.ndarray, eig: UEigen, Gh: np.ndarray, c0: float, budget: float,
                    info: dict | None = None) -> np.ndarray:
    """Project ``d`` onto ``{U : tr(U^H K U) - 2 Re tr(Gh^H U) + c0 <= budget}``.

    K is given by its eigendecomposition. The multiplier is found by
    doubling an upper bracket and bisecting the monotone constraint value.
    """
    lam, Q = eig.values, eig.vectors
    dt = Q.conj().T @ d
    gt = Q.conj().T @ Gh

    def at(eps):
        return (dt + eps * gt) / (1.0 + eps * lam)[:, None]

    def value(Ut):
        return float(np.sum(lam[:, None] * np.abs(Ut) ** 2) - 2.0 * np.real(np.vdot(gt, Ut)) + c0)

    tol = 1e-12 * max(abs(budget), 1.0)
    if value(dt) <= budget:
        if info is not None:
            info["eps"] = 0.0
        return d.copy()
    pos = lam > 1e-12 * max(lam[-1], 1e-300)
    min_val = c0 - float(np.sum(np.abs(gt[pos]) ** 2 / lam[pos, None]))
    if min_val > budget + tol:
        raise InfeasibleSubproblem(
            f"MSE budget unattainable: minimum {min_val:.6g} > budget {budget:.6g}", min_mse=min_val)
    hi = 1.0
    while value(at(hi)) > budget:
        hi *= 2.0
        if hi > 1e30:
            break
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if value(at(mid)) > budget:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * hi:
            break
    if info is not None:
        info["eps"] = hi
    return Q @ at(hi)


def update_U(state: ApSolverState, info: dict | None = None) -> np.ndarray:
    """Closest point to ``X - Lambda`` meeting the surrogate MSE budget."""
    spec = state.spec
    L = spec.n_grid
    mu = spec.weights
    d = state.X - state.Lam
    Gh = state.zeta * (state.A_all * mu) @ state.V.conj().T
    c0 = state.zeta ** 2 * float(np.sum(mu * np.sum(np.abs(state.V) ** 2, axis=0)))
    try:
        return qcqp1_ball_like(d, state.eig, Gh, c0, L * spec.mse_budget, info)
    except InfeasibleSubproblem as exc:
        exc.min_mse = exc.min_mse / L
        raise


# ------------------------------------------------------------------ Z step


def ball_projection(d: np.ndarray, radius_sq: float) -> np.ndarray:
    """Column-wise projection onto ``||z||^2 <= radius_sq``."""
    n2 = np.sum(np.abs(d) ** 2, axis=0)
    scale = np.ones_like(n2)
    # rounding slack keeps the projection exactly idempotent
    over = n2 > radius_sq * (1.0 + 1e-12)
    scale[over] = np.sqrt(radius_sq / n2[over])
    return d * scale


def update_Z(state: ApSolverState) -> np.ndarray:
    """Per-notch-angle ball projection of ``X^H a(theta_t) - phi_t``."""
    if state.A_N.shape[1] == 0:
        return state.Z
    d = state.X.conj().T @ state.A_N - state.Phi
    return ball_projection(d, state.spec.notch_budget)


# ------------------------------------------------------------------ F_A / F_D


def _penalty_mats(state: ApSolverState, pen: PenaltyConfig, T=None, U=None, Z=None):
    T = state.T if T is None else T
    U = state.U_mat if U is None else U
    Z = state.Z if Z is None else Z
    n = state.n_tx
    A_N = state.A_N
    M1 = (pen.rho + pen.varrho) * np.eye(n, dtype=complex) + pen.lam * A_N @ A_N.conj().T
    M2 = pen.rho * (T + state.Omega) + pen.varrho * (U + state.Lam)
    if A_N.shape[1]:
        M2 = M2 + pen.lam * A_N @ (Z + state.Phi).conj().T
    return M1, M2


def hbf_penalty(state: ApSolverState, pen: PenaltyConfig, F_A=None, F_D=None) -> float:
    """Penalty blocks as a function of the hybrid product (the F_A and F_D objective)."""
    X = (state.F_A if F_A is None else F_A) @ (state.F_D if F_D is None else F_D)
    out = 0.5 * pen.rho * np.linalg.norm(state.T - X + state.Omega) ** 2
    out += 0.5 * pen.varrho * np.linalg.norm(state.U_mat - X + state.Lam) ** 2
    if state.A_N.shape[1]:
        out += 0.5 * pen.lam * np.linalg.norm(state.Z - X.conj().T @ state.A_N + state.Phi) ** 2
    return float(out)


def fa_gradient(F_A: np.ndarray, F_D: np.ndarray, M1: np.ndarray, M2: np.ndarray) -> np.ndarray:
    """Gradient of the F_A objective (real-gradient convention)."""
    return (M1 @ F_A @ F_D - M2) @ F_D.conj().T


def phase_projection(W: np.ndarray) -> np.ndarray:
    """Unit-modulus minimizer of ``Re Tr(W^H F)``: ``-exp(j angle W)``."""
    return -np.exp(1j * np.angle(W))


def update_FA(state: ApSolverState, pen: PenaltyConfig, inner_iters: int = 50,
              tol: float = 1e-6, history: list | None = None) -> np.ndarray:
    """Block successive upper-bound minimization under unit-modulus entries."""
    M1, M2 = _penalty_mats(state, pen)
    F_D = state.F_D
    lip = float(np.linalg.eigvalsh(M1)[-1]) * float(np.linalg.norm(F_D, 2) ** 2)
    # f up to a constant, from the quantities the gradient needs anyway
    const = hbf_penalty(state, pen, F_A=np.zeros_like(state.F_A))
    F = state.F_A
    X = F @ F_D
    MX = M1 @ X
    f_prev = const + 0.5 * float(np.real(np.vdot(X, MX))) - float(np.real(np.vdot(M2, X)))
    if history is not None:
        history.append(f_prev)
    for _ in range(inner_iters):
        W = (MX - M2) @ F_D.conj().T - lip * F
        F = phase_projection(W)
        X = F @ F_D
        MX = M1 @ X
        f = const + 0.5 * float(np.real(np.vdot(X, MX))) - float(np.real(np.vdot(M2, X)))
        if history is not None:
            history.append(f)
        if abs(f_prev - f) <= tol * max(abs(f_prev), 1e-300):
            break
        f_prev = f
    return F


def update_FD(state: ApSolverState, pen: PenaltyConfig) -> np.ndarray:
    """Normal-equation solve for the digital beamformer."""
    M1, M2 = _penalty_mats(state, pen)
    F_A = state.F_A
    lhs = F_A.conj().T @ M1 @ F_A
    rhs = F_A.conj().T @ M2
    if np.linalg.cond(lhs) > 1e12:
        state.flags.append("ridge_FD")
        lhs = lhs + 1e-10 * np.trace(lhs).real * np.eye(lhs.shape[0])
    return np.linalg.solve(lhs, rhs)


# ------------------------------------------------------------------ setup


def init_state(H: np.ndarray, spec: BeampatternSpec, n_rf: int, power: float,
               rng: np.random.Generator) -> ApSolverState:
    """Random-phase analog part, channel-matched digital part, feasible auxiliaries.

    U starts as a shrunken copy of T: the surrogate MSE with its best V and
    zeta scales with the square of that factor, so shrinking makes the first
    U-step feasible, and feasibility then carries over to every later step.
    """
    n_tx, n_u = H.shape
    F_A = np.exp(1j * rng.uniform(-np.pi, np.pi, size=(n_tx, n_rf)))
    F_D = np.linalg.pinv(F_A) @ H
    X = F_A @ F_D
    F_D *= np.sqrt(power) / np.linalg.norm(X)
    A_all = steering_matrix(spec.grid_angles, n_tx)
    A_N = steering_matrix(spec.notch_angles, n_tx) if spec.notch_count else np.zeros((n_tx, 0), complex)
    T = F_A @ F_D
    st = ApSolverState(
        H=H, spec=spec, F_A=F_A, F_D=F_D, T=T.copy(), U_mat=T.copy(),
        Z=np.zeros((n_u, spec.notch_count), complex), V=np.zeros((n_u, spec.n_grid), complex),
        zeta=0.0, Omega=np.zeros_like(T), Lam=np.zeros_like(T),
        Phi=np.zeros((n_u, spec.notch_count), complex), A_N=A_N, A_all=A_all,
        eig=u_step_eigen(spec, A_all))
    st.V = update_V(st)
    st.zeta = update_zeta(st)
    m = surrogate_mse(st.U_mat, st.V, st.zeta, spec, A_all)
    target = 0.9 * spec.mse_budget
    if m > target:
        s = np.sqrt(target / m)
        st.U_mat = s * st.U_mat
        st.zeta *= s
    st.Z = update_Z(st)
    return st
