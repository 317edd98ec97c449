"""Communication, beampattern and cooperative-detection performance measures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc, gammaln

from .scene import NetworkScene, linear_gain, relative_angle, steering_matrix, steering_vector

MARCUM_TAIL_TOL = 1e-12
CHI2_INV_TOL = 1e-10


@dataclass
class HbfState:
    """Hybrid beamformer of one AP: analog ``F_A`` (n_tx x n_rf), digital ``F_D`` (n_rf x U)."""

    F_A: np.ndarray
    F_D: np.ndarray

    @property
    def X(self) -> np.ndarray:
        return self.F_A @ self.F_D

    def power(self) -> float:
        return float(np.linalg.norm(self.X) ** 2)


def _products(states):
    return [s.X if isinstance(s, HbfState) else np.asarray(s) for s in states]


def effective_channel(channels, states) -> np.ndarray:
    """``sum_a H_a^H F_A,a F_D,a``; entry (u, v) is the gain of stream v at UE u."""
    H = channels.H if hasattr(channels, "H") else channels
    return sum(Ha.conj().T @ Xa for Ha, Xa in zip(H, _products(states)))


def sinr_from_effective(Xi: np.ndarray, noises) -> np.ndarray:
    gains = np.abs(Xi) ** 2
    sig = np.diag(gains)
    interf = gains.sum(axis=1) - sig
    return sig / (interf + np.asarray(noises, dtype=float))


def user_rates(channels, states, noises) -> np.ndarray:
    """Achievable rate of every UE in bits per channel use."""
    return np.log2(1.0 + sinr_from_effective(effective_channel(channels, states), noises))


def user_rate(channels, states, u: int, noise: float) -> float:
    Xi = effective_channel(channels, states)
    n = np.full(Xi.shape[0], noise, dtype=float)
    return float(np.log2(1.0 + sinr_from_effective(Xi, n)[u]))


def weighted_sum_rate(states, channels, weights, noises) -> float:
    return float(np.dot(weights, user_rates(channels, states, noises)))


def transmit_beampattern(state, angle) -> np.ndarray | float:
    """``||a^H(theta) F_A F_D||^2`` at one angle or an array of angles."""
    X = state.X if isinstance(state, HbfState) else np.asarray(state)
    A = steering_matrix(angle, X.shape[0])
    P = np.sum(np.abs(A.conj().T @ X) ** 2, axis=1)
    return float(P[0]) if np.ndim(angle) == 0 else P


def beampattern_mse(state, spec, psi: float) -> float:
    """Weighted MSE between the beampattern and ``psi`` times the desired spectrum."""
    P = transmit_beampattern(state, spec.grid_angles)
    return float(np.mean(spec.weights * (P - psi * spec.desired_spectrum) ** 2))


def optimal_scale(state, spec) -> float:
    """Least-squares ``psi`` minimizing :func:`beampattern_mse` (clamped at 0)."""
    P = transmit_beampattern(state, spec.grid_angles)
    p, mu = spec.desired_spectrum, spec.weights
    den = np.sum(mu * p * p)
    if den == 0:
        return 0.0
    return max(0.0, float(np.sum(mu * P * p) / den))


def notch_powers(state, spec) -> np.ndarray:
    if spec.notch_count == 0:
        return np.zeros(0)
    return transmit_beampattern(state, spec.notch_angles)


# --------------------------------------------------------------------------- radar


@dataclass
class DetectionModel:
    """Post-matched-filter radar model of every AP.

    ``target_channels[a][o]`` and ``clutter_channels[a][q]`` are ``n_rx x n_tx``
    matrices already scaled by two-hop gain (and clutter correlation); the
    U-fold block-diagonal expansion is applied implicitly through
    ``vec(M X) = (I_U kron M) vec(X)``.
    """

    target_channels: list
    clutter_channels: list
    clutter_variances: list
    target_amplitudes: np.ndarray
    noise_power: float
    receive_beamformers: list | None = None

    def __post_init__(self):
        if self.noise_power <= 0:
            raise ValueError("equivalent noise power must be positive")
        self.target_amplitudes = np.atleast_2d(np.asarray(self.target_amplitudes, dtype=complex))
        for v in self.clutter_variances:
            if np.any(np.asarray(v) <= 0):
                raise ValueError("clutter variances must be positive")

    @property
    def n_aps(self) -> int:
        return len(self.target_channels)

    @property
    def n_targets(self) -> int:
        return len(self.target_channels[0])

    def effective_channel(self, a: int, o: int = 0, n_users: int = 1) -> np.ndarray:
        """Explicit ``I_U kron M`` form of the target channel (for inspection)."""
        return np.kron(np.eye(n_users), self.target_channels[a][o])

    def interferers(self, a: int, o: int = 0):
        """(channel, variance) pairs disturbing target ``o`` at AP ``a``.

        Other targets are treated as additional clutter sources.
        """
        out = list(zip(self.clutter_channels[a], np.asarray(self.clutter_variances[a], float)))
        for o2, M in enumerate(self.target_channels[a]):
            if o2 != o:
                out.append((M, float(abs(self.target_amplitudes[a, o2]) ** 2)))
        return out


def _vec(M, X):
    return (M @ X).reshape(-1, order="F")


def build_detection_model(scene: NetworkScene, clutter_variance=1.0, clutter_correlation=1.0,
                          target_amplitude=1.0, time_bandwidth_product=1.0,
                          two_hop_gain=None) -> DetectionModel:
    """Monostatic radar model from scene geometry.

    The two-hop gain of each path is the product of the per-leg amplitude
    gains, i.e. ``linear_gain(d)`` for a monostatic echo, unless
    ``two_hop_gain`` (a callable ``(a, distance) -> gain``) overrides it.
    """
    A = scene.n_aps
    n_t, n_r = scene.n_tx, scene.n_rx
    Q = len(scene.clutter_positions)
    corr = np.broadcast_to(np.asarray(clutter_correlation, float), (A, Q)) if Q else np.zeros((A, 0))
    if np.any(corr < 0) or np.any(corr > 1):
        raise ValueError("clutter correlation must lie in [0, 1]")
    var = np.broadcast_to(np.asarray(clutter_variance, float), (A, Q)) if Q else np.zeros((A, 0))

    def hop(a, p):
        d = np.linalg.norm(np.asarray(p) - scene.ap_positions[a])
        if two_hop_gain is not None:
            return float(two_hop_gain(a, d))
        leg = np.sqrt(linear_gain(d, scene.reference_pathloss_db))
        return leg * leg

    def G(a, p):
        th = relative_angle(scene.ap_positions[a], scene.ap_broadside_deg[a], p)
        return np.outer(steering_vector(th, n_r), steering_vector(th, n_t).conj())

    targets, clutter = [], []
    for a in range(A):
        targets.append([hop(a, p) * G(a, p) for p in scene.target_positions])
        clutter.append([hop(a, p) * corr[a, q] * G(a, p) for q, p in enumerate(scene.clutter_positions)])
    amps = np.broadcast_to(np.asarray(target_amplitude, complex), (A, len(scene.target_positions)))
    return DetectionModel(
        target_channels=targets,
        clutter_channels=clutter,
        clutter_variances=[var[a].copy() for a in range(A)],
        target_amplitudes=amps.copy(),
        noise_power=scene.noise_power_radar / time_bandwidth_product,
    )


def mvdr_receive_beamformer(model: DetectionModel, state, a: int, o: int = 0) -> np.ndarray:
    """SINR-maximizing receive beamformer ``Sigma^{-1} g0`` for target ``o`` at AP ``a``."""
    X = state.X if isinstance(state, HbfState) else np.asarray(state)
    g0 = _vec(model.target_channels[a][o], X)
    # covariance normalized by the noise power to keep the solve well scaled
    S = np.eye(len(g0), dtype=complex)
    for M, var in model.interferers(a, o):
        g = _vec(M, X)
        S += (var / model.noise_power) * np.outer(g, g.conj())
    return np.linalg.solve(S, g0)


def _receive(model, a, o, w):
    if w is not None:
        return np.asarray(w)
    if model.receive_beamformers is None:
        return None
    return model.receive_beamformers[a]


def interference_noise_power(model: DetectionModel, state, a: int, o: int = 0, w=None) -> float:
    """sigma_E^2: clutter-plus-noise power at the receive-beamformer output."""
    X = state.X if isinstance(state, HbfState) else np.asarray(state)
    w = _receive(model, a, o, w)
    if w is None:
        w = mvdr_receive_beamformer(model, X, a, o)
    tot = model.noise_power * np.vdot(w, w).real
    for M, var in model.interferers(a, o):
        tot += var * abs(np.vdot(w, _vec(M, X))) ** 2
    return float(tot)


def radar_sinr(state, model: DetectionModel, a: int, o: int = 0, w=None) -> float:
    """Post-beamforming SINR of target ``o`` at AP ``a`` (MVDR receiver by default)."""
    X = state.X if isinstance(state, HbfState) else np.asarray(state)
    w = _receive(model, a, o, w)
    if w is None:
        w = mvdr_receive_beamformer(model, X, a, o)
    if not np.any(w):
        raise ValueError("receive beamformer must be nonzero")
    xi = model.target_amplitudes[a, o]
    sig = abs(xi * np.vdot(w, _vec(model.target_channels[a][o], X))) ** 2
    return float(sig / interference_noise_power(model, X, a, o, w))


def sum_radar_sinr(states, model: DetectionModel, o: int = 0) -> float:
    return float(sum(radar_sinr(s, model, a, o) for a, s in enumerate(states)))


def glrt_statistic(samples, sigma_e2) -> np.ndarray | float:
    """Noncoherent cooperative statistic ``sum_a |y_a|^2 / sigma_E,a^2``.

    ``samples`` has the AP index last, so a ``(trials, A)`` batch gives one
    statistic per trial.
    """
    y = np.asarray(samples)
    out = np.sum(np.abs(y) ** 2 / np.asarray(sigma_e2, dtype=float), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def chi2_isf(dof: float, q: float, tol: float = CHI2_INV_TOL) -> float:
    """Upper-tail chi-square quantile: x with ``P(chi2_dof >= x) = q``.

    Bracketed bisection on the regularized upper incomplete gamma.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError("tail probability must lie in (0, 1]")
    if q == 1.0:
        return 0.0
    k = dof / 2.0
    lo, hi = 0.0, max(1.0, dof)
    while gammaincc(k, hi / 2.0) > q:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if gammaincc(k, mid / 2.0) > q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chi2_ppf(dof: float, p: float) -> float:
    """Inverse CDF of the chi-square distribution."""
    return chi2_isf(dof, 1.0 - p)


def detection_threshold(pr_fa: float, n_aps: int) -> float:
    """Threshold on the GLRT statistic for a target false-alarm probability."""
    return 0.5 * chi2_isf(2 * n_aps, pr_fa)


def marcum_q(order: int, a: float, b: float, tol: float = MARCUM_TAIL_TOL) -> float:
    """Generalized Marcum Q-function via its Poisson-weighted gamma series.

    The sum runs outward from the Poisson mode in log space, so large
    noncentralities do not underflow; it stops once the Poisson mass left
    out is below ``tol`` (each gamma factor is at most one).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if a < 0 or b < 0:
        raise ValueError("arguments must be nonnegative")
    if b == 0:
        return 1.0
    lam = 0.5 * a * a
    x = 0.5 * b * b
    if lam == 0:
        return float(gammaincc(order, x))

    def weight(k):
        return np.exp(-lam + k * np.log(lam) - gammaln(k + 1.0))

    mode = int(np.floor(lam))
    total, mass = 0.0, 0.0
    k = mode
    while True:
        wk = weight(k)
        total += wk * gammaincc(order + k, x)
        mass += wk
        if 1.0 - mass < tol or (k > mode + 10 and wk < tol * 1e-3):
            break
        k += 1
    k = mode - 1
    while k >= 0 and 1.0 - mass >= tol:
        wk = weight(k)
        total += wk * gammaincc(order + k, x)
        mass += wk
        k -= 1
    return float(min(1.0, total))


def detection_probability(sum_sinr: float, pr_fa: float, n_aps: int) -> float:
    """Analytic probability of detection of the cooperative GLRT."""
    if sum_sinr < 0:
        raise ValueError("sum SINR must be nonnegative")
    b = np.sqrt(chi2_isf(2 * n_aps, pr_fa))
    return marcum_q(n_aps, np.sqrt(2.0 * sum_sinr), b)


@dataclass
class DetectionResponses:
    """Per-AP beamformer outputs needed to simulate the test statistic."""

    target: np.ndarray       # xi_0 * x_bar_0, shape (A,)
    clutter: list            # per AP: array of x_bar_q
    clutter_var: list        # per AP: array of variances
    noise_var: np.ndarray    # sigma_bar^2 ||w||^2, shape (A,)
    sigma_e2: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sigma_e2 = np.array([
            self.noise_var[a] + np.sum(self.clutter_var[a] * np.abs(self.clutter[a]) ** 2)
            for a in range(len(self.noise_var))])

    @property
    def sum_sinr(self) -> float:
        return float(np.sum(np.abs(self.target) ** 2 / self.sigma_e2))


def detection_responses(model: DetectionModel, states, o: int = 0) -> DetectionResponses:
    target, clutter, cvar, nvar = [], [], [], []
    for a, s in enumerate(states):
        X = s.X if isinstance(s, HbfState) else np.asarray(s)
        w = _receive(model, a, o, None)
        if w is None:
            w = mvdr_receive_beamformer(model, X, a, o)
        target.append(model.target_amplitudes[a, o] * np.vdot(w, _vec(model.target_channels[a][o], X)))
        inter = model.interferers(a, o)
        clutter.append(np.array([np.vdot(w, _vec(M, X)) for M, _ in inter], dtype=complex))
        cvar.append(np.array([v for _, v in inter], dtype=float))
        nvar.append(model.noise_power * np.vdot(w, w).real)
    return DetectionResponses(np.array(target), clutter, cvar, np.array(nvar))


def _cn(rng, shape, var=1.0):
    return np.sqrt(np.asarray(var) / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_statistic(resp: DetectionResponses, trials: int, rng: np.random.Generator,
                       target_present: bool) -> np.ndarray:
    """Draw ``trials`` GLRT statistics under H1 (target present) or H0."""
    A = len(resp.noise_var)
    y = np.zeros((trials, A), dtype=complex)
    for a in range(A):
        col = _cn(rng, trials, resp.noise_var[a])
        for xq, vq in zip(resp.clutter[a], resp.clutter_var[a]):
            col += _cn(rng, trials, vq) * xq
        if target_present:
            col += resp.target[a]
        y[:, a] = col
    return glrt_statistic(y, resp.sigma_e2)


def fixed_sinr_responses(per_ap_sinr) -> DetectionResponses:
    """Clutter-free responses with unit noise that realize the given per-AP SINRs."""
    sinr = np.asarray(per_ap_sinr, dtype=float)
    if np.any(sinr < 0):
        raise ValueError("SINR must be nonnegative")
    A = len(sinr)
    return DetectionResponses(np.sqrt(sinr).astype(complex), [np.zeros(0, complex)] * A,
                              [np.zeros(0)] * A, np.ones(A))


def monte_carlo_responses(resp: DetectionResponses, threshold: float, trials: int,
                          rng: np.random.Generator, chunk: int = 50_000):
    """Empirical (Pr_D, Pr_FA) of the GLRT at ``threshold`` for fixed responses.

    Trials are drawn in chunks from independent child streams of ``rng`` and
    reduced in chunk order, so the result does not depend on chunk scheduling.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sizes = [min(chunk, trials - i) for i in range(0, trials, chunk)]
    streams = rng.spawn(2 * len(sizes))
    hits1 = hits0 = 0
    for i, n in enumerate(sizes):
        hits1 += int(np.sum(simulate_statistic(resp, n, streams[2 * i], True) >= threshold))
        hits0 += int(np.sum(simulate_statistic(resp, n, streams[2 * i + 1], False) >= threshold))
    return hits1 / trials, hits0 / trials


def monte_carlo_detection(model: DetectionModel, states, threshold: float, trials: int,
                          rng: np.random.Generator, o: int = 0, chunk: int = 50_000):
    """Empirical (Pr_D, Pr_FA) of the GLRT for designed beamformers."""
    return monte_carlo_responses(detection_responses(model, states, o), threshold, trials, rng, chunk)
