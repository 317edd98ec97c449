"""YAML experiment configs: parsing, unit conversion and validation."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .panda_core import PenaltyConfig
from .scene import NetworkScene, build_beampattern_spec

SWEEP_VARIABLES = ("gamma", "Gamma_notch", "n_tx", "n_rf")
SOLVERS = ("panda", "cen-admm")


class ConfigError(ValueError):
    """Malformed or inconsistent config; the message names the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def dbm_to_mw(dbm: float) -> float:
    return float(10.0 ** (dbm / 10.0))


def _power(block: dict, stem: str, where: str, default_mw=None) -> float:
    """Read ``<stem>_mw`` or ``<stem>_dbm`` (exactly one may be present)."""
    mw, dbm = block.get(f"{stem}_mw"), block.get(f"{stem}_dbm")
    if mw is not None and dbm is not None:
        raise ConfigError(f"{where}.{stem}", "give either _mw or _dbm, not both")
    if mw is not None:
        val = _num(mw, f"{where}.{stem}_mw")
    elif dbm is not None:
        val = dbm_to_mw(_num(dbm, f"{where}.{stem}_dbm"))
    elif default_mw is not None:
        val = default_mw
    else:
        raise ConfigError(f"{where}.{stem}_mw", "required")
    if not val > 0:
        raise ConfigError(f"{where}.{stem}", "must be positive")
    return val


def _num(v, name, integer=False):
    if isinstance(v, bool):
        raise ConfigError(name, "expected a number")
    try:
        out = int(v) if integer else float(v)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {v!r}") from None
    if integer and float(v) != out:
        raise ConfigError(name, f"expected an integer, got {v!r}")
    if not np.isfinite(out):
        raise ConfigError(name, "must be finite")
    return out


def _points(v, name, allow_empty=False):
    if v is None:
        v = []
    try:
        arr = np.asarray(v, dtype=float).reshape(-1, 2) if len(v) else np.zeros((0, 2))
    except (TypeError, ValueError):
        raise ConfigError(name, "expected a list of [x, y] pairs") from None
    if not allow_empty and len(arr) == 0:
        raise ConfigError(name, "at least one point required")
    return arr


def _check_keys(block: dict, allowed, where: str):
    if not isinstance(block, dict):
        raise ConfigError(where, "expected a mapping")
    extra = set(block) - set(allowed)
    if extra:
        raise ConfigError(f"{where}.{sorted(extra)[0]}", "unknown key")


@dataclass
class BeampatternBlock:
    grid_size: int = 61
    mainlobe_halfwidth_deg: float = 4.0
    notch_halfwidth_deg: float = 2.0
    gamma: float = 4.0
    notch_mw: float = 1e-3
    normalize_power: bool = True


@dataclass
class SolverBlock:
    method: str = "panda"
    penalties: PenaltyConfig = field(default_factory=PenaltyConfig)
    bsum_inner_iters: int = 50
    bsum_tol: float = 1e-6
    weights: list | None = None


@dataclass
class SweepBlock:
    variable: str = "gamma"
    values: list = field(default_factory=lambda: [4.0])
    trials: int = 10
    radar_sinr: bool = True


@dataclass
class DetectionBlock:
    pr_fa: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1])
    mc_trials: int = 100_000
    time_bandwidth_product: float = 1.0
    clutter_variance: float = 1.0
    target_amplitude: float = 1.0
    sinr_source: str = "design"
    sum_sinr: float | None = None


@dataclass
class ExperimentConfig:
    raw: dict
    seed: int
    scene: NetworkScene
    beampattern: BeampatternBlock
    solver: SolverBlock
    sweep: SweepBlock
    detection: DetectionBlock

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def specs(self, scene: NetworkScene | None = None, gamma=None, notch_mw=None) -> list:
        """Per-AP beampattern specs; overrides serve the parameter sweeps."""
        scene = scene or self.scene
        bp = self.beampattern
        w = 1.0 / scene.tx_power_budget if bp.normalize_power else 1.0
        return [build_beampattern_spec(
            scene, a, np.radians(bp.mainlobe_halfwidth_deg), np.radians(bp.notch_halfwidth_deg),
            bp.gamma if gamma is None else gamma, bp.notch_mw if notch_mw is None else notch_mw,
            bp.grid_size, weights=w) for a in range(scene.n_aps)]

    def with_override(self, variable: str, value) -> "ExperimentConfig":
        """Copy with one sweep variable replaced (scene rebuilt for array sizes)."""
        cfg = copy.deepcopy(self)
        if variable == "gamma":
            cfg.beampattern.gamma = float(value)
        elif variable == "Gamma_notch":
            cfg.beampattern.notch_mw = dbm_to_mw(float(value))
        elif variable in ("n_tx", "n_rf"):
            kw = {k: getattr(cfg.scene, k) for k in cfg.scene.__dataclass_fields__}
            kw[variable] = int(value)
            if variable == "n_tx":
                kw["n_rx"] = int(value)
            try:
                cfg.scene = NetworkScene(**kw)
            except ValueError as exc:
                raise ConfigError(f"sweep.values ({variable}={value})", str(exc)) from None
        else:
            raise ConfigError("sweep.variable", f"must be one of {SWEEP_VARIABLES}")
        return cfg


def parse_config(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    _check_keys(raw, ("seed", "scene", "beampattern", "solver", "sweep", "detection"), "<root>")
    seed = _num(raw.get("seed", 0), "seed", integer=True) if seed_override is None else int(seed_override)
    if seed < 0:
        raise ConfigError("seed", "must be nonnegative")

    sc = raw.get("scene")
    if sc is None:
        raise ConfigError("scene", "required")
    _check_keys(sc, ("ap_positions", "ue_positions", "target_positions", "clutter_positions",
                     "n_tx", "n_rx", "n_rf", "tx_power_mw", "tx_power_dbm", "noise_comm_mw",
                     "noise_comm_dbm", "noise_radar_mw", "noise_radar_dbm", "rician_factor",
                     "n_paths", "reference_pathloss_db", "ap_broadside_deg"), "scene")
    kw = dict(
        ap_positions=_points(sc.get("ap_positions"), "scene.ap_positions"),
        ue_positions=_points(sc.get("ue_positions"), "scene.ue_positions"),
        target_positions=_points(sc.get("target_positions"), "scene.target_positions"),
        clutter_positions=_points(sc.get("clutter_positions"), "scene.clutter_positions", True),
        n_tx=_num(sc.get("n_tx", 32), "scene.n_tx", integer=True),
        n_rf=_num(sc.get("n_rf", 4), "scene.n_rf", integer=True),
        tx_power_budget=_power(sc, "tx_power", "scene", 100.0),
        noise_power_comm=_power(sc, "noise_comm", "scene", 1e-9),
        noise_power_radar=_power(sc, "noise_radar", "scene", 1e-9),
        rician_factor=_num(sc.get("rician_factor", 6.0), "scene.rician_factor"),
        n_paths=_num(sc.get("n_paths", 10), "scene.n_paths", integer=True),
        reference_pathloss_db=_num(sc.get("reference_pathloss_db", 60.0), "scene.reference_pathloss_db"),
    )
    kw["n_rx"] = _num(sc.get("n_rx", kw["n_tx"]), "scene.n_rx", integer=True)
    if "ap_broadside_deg" in sc:
        kw["ap_broadside_deg"] = np.asarray(sc["ap_broadside_deg"], dtype=float)
    try:
        scene = NetworkScene(**kw)
    except ValueError as exc:
        raise ConfigError("scene", str(exc)) from None

    bp_raw = raw.get("beampattern", {}) or {}
    _check_keys(bp_raw, ("grid_size", "mainlobe_halfwidth_deg", "notch_halfwidth_deg", "gamma",
                         "notch_db", "notch_mw", "normalize_power"), "beampattern")
    if "notch_db" in bp_raw and "notch_mw" in bp_raw:
        raise ConfigError("beampattern.notch_db", "give either notch_db or notch_mw, not both")
    bp = BeampatternBlock(
        grid_size=_num(bp_raw.get("grid_size", 61), "beampattern.grid_size", integer=True),
        mainlobe_halfwidth_deg=_num(bp_raw.get("mainlobe_halfwidth_deg", 4.0), "beampattern.mainlobe_halfwidth_deg"),
        notch_halfwidth_deg=_num(bp_raw.get("notch_halfwidth_deg", 2.0), "beampattern.notch_halfwidth_deg"),
        gamma=_num(bp_raw.get("gamma", 4.0), "beampattern.gamma"),
        notch_mw=(dbm_to_mw(_num(bp_raw["notch_db"], "beampattern.notch_db")) if "notch_db" in bp_raw
                  else _num(bp_raw.get("notch_mw", 1e-3), "beampattern.notch_mw")),
        normalize_power=bool(bp_raw.get("normalize_power", True)),
    )
    for name in ("grid_size", "mainlobe_halfwidth_deg", "notch_halfwidth_deg", "gamma", "notch_mw"):
        if not getattr(bp, name) > 0:
            raise ConfigError(f"beampattern.{name}", "must be positive")

    so = raw.get("solver", {}) or {}
    _check_keys(so, ("method", "rho", "varrho", "lam", "max_outer_iters", "primal_tolerance",
                     "al_change_tolerance", "min_iters", "bsum_inner_iters", "bsum_tol", "weights"), "solver")
    method = so.get("method", "panda")
    if method not in SOLVERS:
        raise ConfigError("solver.method", f"must be one of {SOLVERS}")
    pkw = {}
    for name, integer in (("rho", False), ("varrho", False), ("lam", False), ("max_outer_iters", True),
                          ("primal_tolerance", False), ("al_change_tolerance", False), ("min_iters", True)):
        if name in so:
            pkw[name] = _num(so[name], f"solver.{name}", integer=integer)
    try:
        pen = PenaltyConfig(**pkw)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None
    weights = so.get("weights")
    if weights is not None:
        weights = [_num(w, "solver.weights") for w in weights]
        if len(weights) != scene.n_ues or min(weights) <= 0:
            raise ConfigError("solver.weights", "need one positive weight per UE")
    solver = SolverBlock(method, pen, _num(so.get("bsum_inner_iters", 50), "solver.bsum_inner_iters", integer=True),
                         _num(so.get("bsum_tol", 1e-6), "solver.bsum_tol"), weights)
    if solver.bsum_inner_iters < 1:
        raise ConfigError("solver.bsum_inner_iters", "must be >= 1")

    sw = raw.get("sweep", {}) or {}
    _check_keys(sw, ("variable", "values", "trials", "radar_sinr"), "sweep")
    sweep = SweepBlock(sw.get("variable", "gamma"), list(sw.get("values", [bp.gamma])),
                       _num(sw.get("trials", 10), "sweep.trials", integer=True), bool(sw.get("radar_sinr", True)))
    if sweep.variable not in SWEEP_VARIABLES:
        raise ConfigError("sweep.variable", f"must be one of {SWEEP_VARIABLES}")
    if not sweep.values:
        raise ConfigError("sweep.values", "must be nonempty")
    sweep.values = [_num(v, "sweep.values") for v in sweep.values]
    if sweep.trials < 1:
        raise ConfigError("sweep.trials", "must be >= 1")

    de = raw.get("detection", {}) or {}
    _check_keys(de, ("pr_fa", "mc_trials", "time_bandwidth_product", "clutter_variance",
                     "target_amplitude", "sinr_source", "sum_sinr"), "detection")
    det = DetectionBlock(
        pr_fa=[_num(p, "detection.pr_fa") for p in de.get("pr_fa", DetectionBlock().pr_fa)],
        mc_trials=_num(de.get("mc_trials", 100_000), "detection.mc_trials", integer=True),
        time_bandwidth_product=_num(de.get("time_bandwidth_product", 1.0), "detection.time_bandwidth_product"),
        clutter_variance=_num(de.get("clutter_variance", 1.0), "detection.clutter_variance"),
        target_amplitude=_num(de.get("target_amplitude", 1.0), "detection.target_amplitude"),
        sinr_source=de.get("sinr_source", "design"),
        sum_sinr=None if de.get("sum_sinr") is None else _num(de["sum_sinr"], "detection.sum_sinr"),
    )
    if not det.pr_fa or any(not 0 < p < 1 for p in det.pr_fa):
        raise ConfigError("detection.pr_fa", "need a nonempty list of probabilities in (0, 1)")
    if det.mc_trials < 1:
        raise ConfigError("detection.mc_trials", "must be >= 1")
    if det.time_bandwidth_product <= 0 or det.clutter_variance < 0:
        raise ConfigError("detection", "time_bandwidth_product > 0 and clutter_variance >= 0 required")
    if det.sinr_source not in ("design", "fixed"):
        raise ConfigError("detection.sinr_source", "must be 'design' or 'fixed'")
    if det.sinr_source == "fixed" and (det.sum_sinr is None or det.sum_sinr < 0):
        raise ConfigError("detection.sum_sinr", "required (>= 0) when sinr_source is 'fixed'")
    return ExperimentConfig(raw, seed, scene, bp, solver, sweep, det)


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"invalid YAML: {exc}") from None
    return parse_config(raw, seed_override)
