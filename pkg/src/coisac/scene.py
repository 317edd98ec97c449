"""Network geometry, ULA steering vectors and Saleh-Valenzuela downlink channels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# grid-membership slack, degrees
_ANGLE_EPS = 1e-9


@dataclass
class NetworkScene:
    """Positions (meters) and radio parameters of a cooperative ISAC network.

    Powers are linear milliwatts. ``ap_broadside_deg`` gives, per AP, the
    azimuth (counter-clockwise from +x) its array faces; 90 means +y.
    """

    ap_positions: np.ndarray
    ue_positions: np.ndarray
    target_positions: np.ndarray
    clutter_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    n_tx: int = 32
    n_rx: int = 32
    n_rf: int = 4
    tx_power_budget: float = 100.0
    noise_power_comm: np.ndarray | float = 1e-9
    noise_power_radar: float = 1e-9
    rician_factor: float = 6.0
    n_paths: int = 10
    reference_pathloss_db: float = 60.0
    ap_broadside_deg: np.ndarray | None = None

    def __post_init__(self):
        self.ap_positions = _points(self.ap_positions, "ap_positions")
        self.ue_positions = _points(self.ue_positions, "ue_positions")
        self.target_positions = _points(self.target_positions, "target_positions")
        self.clutter_positions = _points(self.clutter_positions, "clutter_positions")
        if self.n_aps < 1 or self.n_ues < 1:
            raise ValueError("need at least one AP and one UE")
        for name in ("n_tx", "n_rx", "n_rf", "n_paths"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.n_ues <= self.n_rf <= self.n_tx:
            raise ValueError(
                f"need U <= n_rf <= n_tx, got U={self.n_ues}, n_rf={self.n_rf}, n_tx={self.n_tx}")
        if self.tx_power_budget <= 0:
            raise ValueError("tx_power_budget must be positive")
        noise = np.broadcast_to(np.asarray(self.noise_power_comm, dtype=float), (self.n_ues,))
        if np.any(noise <= 0) or self.noise_power_radar <= 0:
            raise ValueError("noise powers must be positive")
        self.noise_power_comm = noise.copy()
        if self.rician_factor < 0:
            raise ValueError("rician_factor must be nonnegative")
        if self.ap_broadside_deg is None:
            self.ap_broadside_deg = np.full(self.n_aps, 90.0)
        self.ap_broadside_deg = np.broadcast_to(
            np.asarray(self.ap_broadside_deg, dtype=float), (self.n_aps,)).copy()

    @property
    def n_aps(self) -> int:
        return len(self.ap_positions)

    @property
    def n_ues(self) -> int:
        return len(self.ue_positions)


@dataclass
class ChannelSet:
    """Per-AP downlink channels; ``H[a]`` is ``n_tx x U`` with column u = h_{a,u}."""

    H: list
    seed: int | None = None

    def __post_init__(self):
        for Ha in self.H:
            if not np.all(np.isfinite(Ha)):
                raise ValueError("channel contains non-finite entries")

    @property
    def n_aps(self) -> int:
        return len(self.H)


@dataclass
class BeampatternSpec:
    """Desired transmit beampattern and notch region of one AP (angles in radians)."""

    grid_angles: np.ndarray
    desired_spectrum: np.ndarray
    weights: np.ndarray
    notch_angles: np.ndarray
    mse_budget: float
    notch_budget: float

    def __post_init__(self):
        self.grid_angles = np.asarray(self.grid_angles, dtype=float)
        self.desired_spectrum = np.asarray(self.desired_spectrum, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.notch_angles = np.asarray(self.notch_angles, dtype=float).reshape(-1)
        L = len(self.grid_angles)
        if self.desired_spectrum.shape != (L,) or self.weights.shape != (L,):
            raise ValueError("spectrum and weights must match the grid")
        if np.any(self.desired_spectrum < 0):
            raise ValueError("desired spectrum must be nonnegative")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        if self.mse_budget <= 0 or self.notch_budget <= 0:
            raise ValueError("mse_budget and notch_budget must be positive")

    @property
    def n_grid(self) -> int:
        return len(self.grid_angles)

    @property
    def notch_count(self) -> int:
        return len(self.notch_angles)


def _points(value, name):
    arr = np.asarray(value, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 2))
    arr = arr.reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def steering_vector(angle: float, n: int) -> np.ndarray:
    """Half-wavelength ULA response, phase referenced to element 0."""
    if n < 1:
        raise ValueError("antenna count must be >= 1")
    m = np.arange(n)
    return np.exp(1j * np.pi * m * np.sin(angle))


def steering_matrix(angles, n: int) -> np.ndarray:
    """Stack of steering vectors, one column per angle (``n x len(angles)``)."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    m = np.arange(n)[:, None]
    return np.exp(1j * np.pi * m * np.sin(angles)[None, :])


def path_loss_db(distance: float, reference_db: float = 60.0) -> float:
    """Free-space-like path loss: ``reference_db + 20 log10(d)``."""
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise ValueError("distance must be positive")
    out = reference_db + 20.0 * np.log10(distance)
    return float(out) if out.ndim == 0 else out


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def linear_gain(distance: float, reference_db: float = 60.0) -> float:
    """Linear power gain (inverse path loss) at ``distance``."""
    return float(db_to_linear(-path_loss_db(distance, reference_db)))


def relative_angle(ap_position, broadside_deg: float, point) -> float:
    """Angle of ``point`` off the array broadside of an AP, folded into [-pi/2, pi/2].

    A ULA cannot tell front from back, so points behind the array are
    reflected onto the same cone.
    """
    d = np.asarray(point, dtype=float) - np.asarray(ap_position, dtype=float)
    if np.hypot(d[0], d[1]) == 0.0:
        raise ValueError("point coincides with the AP position")
    az = np.degrees(np.arctan2(d[1], d[0]))
    theta = (broadside_deg - az + 180.0) % 360.0 - 180.0
    if theta > 90.0:
        theta = 180.0 - theta
    elif theta < -90.0:
        theta = -180.0 - theta
    return float(np.radians(theta))


def scene_angles(scene: NetworkScene, a: int) -> dict:
    """Angles (radians) of targets, clutter, UEs and the other APs as seen from AP ``a``."""
    ap = scene.ap_positions[a]
    bs = scene.ap_broadside_deg[a]

    def angles(points):
        return np.array([relative_angle(ap, bs, p) for p in points])

    others = [p for i, p in enumerate(scene.ap_positions) if i != a]
    return {
        "targets": angles(scene.target_positions),
        "clutter": angles(scene.clutter_positions),
        "ues": angles(scene.ue_positions),
        "aps": angles(others),
    }


def generate_sv_channel(scene: NetworkScene, a: int, u: int, rng: np.random.Generator) -> np.ndarray:
    """Draw h_{a,u}: one geometric LoS path plus ``n_paths - 1`` uniform NLoS paths."""
    d = np.linalg.norm(scene.ue_positions[u] - scene.ap_positions[a])
    gain = linear_gain(d, scene.reference_pathloss_db)
    kappa = scene.rician_factor
    if np.isinf(kappa):
        k_los, k_nlos = 1.0, 0.0
    else:
        k_los, k_nlos = np.sqrt(kappa / (1 + kappa)), np.sqrt(1 / (1 + kappa))
    phi0 = relative_angle(scene.ap_positions[a], scene.ap_broadside_deg[a], scene.ue_positions[u])
    h = k_los * steering_vector(phi0, scene.n_tx)
    n_nlos = scene.n_paths - 1
    if n_nlos > 0:
        phis = rng.uniform(-np.pi / 2, np.pi / 2, size=n_nlos)
        h = h + k_nlos * steering_matrix(phis, scene.n_tx).sum(axis=1)
    return np.sqrt(gain / scene.n_paths) * h


def generate_channels(scene: NetworkScene, seed: int | None = None) -> ChannelSet:
    """Independent SV channels for every (AP, UE) pair, drawn in (a, u) order."""
    rng = np.random.default_rng(seed)
    H = []
    for a in range(scene.n_aps):
        cols = [generate_sv_channel(scene, a, u, rng) for u in range(scene.n_ues)]
        H.append(np.stack(cols, axis=1))
    return ChannelSet(H=H, seed=seed)


def _grid_mask(grid_deg, centers_deg, halfwidth_deg):
    mask = np.zeros(len(grid_deg), dtype=bool)
    for c in centers_deg:
        mask |= np.abs(grid_deg - c) <= halfwidth_deg + _ANGLE_EPS
    return mask


def build_beampattern_spec(scene: NetworkScene, a: int, mainlobe_halfwidth: float,
                           notch_halfwidth: float, mse_budget: float, notch_budget: float,
                           grid_size: int = 181, weights=None) -> BeampatternSpec:
    """Binary mainlobe spectrum around every target; notches at clutter and other APs.

    Half-widths are in radians. Notch grid points that fall inside a mainlobe
    are dropped so the two regions stay disjoint.
    """
    if mainlobe_halfwidth <= 0 or notch_halfwidth <= 0:
        raise ValueError("half-widths must be positive")
    grid_deg = np.linspace(-90.0, 90.0, grid_size)
    ang = scene_angles(scene, a)
    main = _grid_mask(grid_deg, np.degrees(ang["targets"]), np.degrees(mainlobe_halfwidth))
    notch_centers = np.concatenate([ang["clutter"], ang["aps"]])
    notch = _grid_mask(grid_deg, np.degrees(notch_centers), np.degrees(notch_halfwidth)) & ~main
    w = np.ones(grid_size) if weights is None else np.broadcast_to(weights, (grid_size,))
    return BeampatternSpec(
        grid_angles=np.radians(grid_deg),
        desired_spectrum=main.astype(float),
        weights=np.array(w, dtype=float),
        notch_angles=np.radians(grid_deg[notch]),
        mse_budget=float(mse_budget),
        notch_budget=float(notch_budget),
    )
