"""Scenario configuration: JSON parsing with defaults and validation.

A minimal config needs a map, via-points and a target script; every other
field falls back to the common simulation defaults (4 s window, gamma 0.1,
rho 0.2, 4/7 prediction points, tracking weights 5.5 / distance 2.5 m,
corridor 0.2 m inside safety 0.3 m, polynomial order 6, ...).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .mission import MissionParams, TargetScript
from .prediction import PredictionParams
from .preplan import PreplanParams
from .smooth import SmoothParams


class ConfigError(ValueError):
    """Schema or invariant violation, annotated with the field path."""


@dataclass
class EsdfParams:
    cap: float = 10.0
    occ_threshold: float = 0.5  # occupancy probability cutoff (probabilistic sources)


@dataclass
class ScenarioConfig:
    map_path: str
    via_points: np.ndarray
    script: TargetScript
    start_position: np.ndarray
    start_yaw: float = 0.0
    prediction: PredictionParams = field(default_factory=PredictionParams)
    preplan: PreplanParams = field(default_factory=PreplanParams)
    smooth: SmoothParams = field(default_factory=SmoothParams)
    mission: MissionParams = field(default_factory=MissionParams)
    esdf: EsdfParams = field(default_factory=EsdfParams)
    seed: int | None = None  # reserved for candidate jitter; None = off
    name: str = "scenario"


_SECTION_TYPES = {
    "prediction": PredictionParams,
    "preplan": PreplanParams,
    "smooth": SmoothParams,
    "mission": MissionParams,
    "esdf": EsdfParams,
}

# JSON key -> dataclass field, kept explicit so diagnostics name the key
_FIELD_ALIASES = {
    "prediction": {
        "gamma": "gamma", "rho": "rho", "n_obs": "n_obs", "n_total": "n_total",
        "alpha": "alpha", "max_iters": "max_iters", "eps_obstacle": "eps_obstacle",
        "converge_tol": "converge_tol",
    },
    "preplan": {
        "layers": "n_layers", "d_lower": "d_lower", "d_upper": "d_upper",
        "d_des": "d_des", "d_max": "d_max", "w_visibility": "w_visibility",
        "w_distance": "w_distance", "r_safe": "r_safe", "r_corridor": "r_corridor",
        "grid_stride": "grid_stride", "elev_min_deg": "elev_min_deg",
        "elev_max_deg": "elev_max_deg", "edge_samples": "edge_samples",
    },
    "smooth": {
        "poly_order": "poly_order", "waypoint_weight": "waypoint_weight",
        "samples_per_segment": "samples_per_segment", "kkt_tol": "kkt_tol",
    },
    "mission": {
        "horizon": "horizon", "tick_dt": "tick_dt", "accum_err_tol": "accum_err_tol",
        "via_tol": "via_tol", "obs_period": "obs_period", "time_limit": "time_limit",
        "replan_fraction": "replan_fraction",
    },
    "esdf": {"cap": "cap", "occ_threshold": "occ_threshold"},
}


def _vec3(value, path):
    if (not isinstance(value, (list, tuple)) or len(value) != 3
            or not all(isinstance(v, (int, float)) for v in value)):
        raise ConfigError(f"{path}: expected [x, y, z] numbers, got {value!r}")
    return np.asarray(value, float)


def _build_section(name, data):
    cls = _SECTION_TYPES[name]
    aliases = _FIELD_ALIASES[name]
    kwargs = {}
    for key, value in data.items():
        if key not in aliases:
            raise ConfigError(f"{name}.{key}: unknown field")
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{name}.{key}: expected a number, got {value!r}")
        kwargs[aliases[key]] = value
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"{name}: {e}") from None


def parse_config(text: str, base_dir: str | Path | None = None) -> ScenarioConfig:
    """Parse and validate a scenario JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected an object")

    known = {"map", "via_points", "script", "start", "seed", "name"} | set(_SECTION_TYPES)
    for key in doc:
        if key not in known:
            raise ConfigError(f"{key}: unknown field")

    if "map" not in doc or not isinstance(doc["map"], str):
        raise ConfigError("map: required string path to a .vxmap file")
    map_path = doc["map"]
    if base_dir is not None:
        map_path = str((Path(base_dir) / map_path).resolve())

    if "via_points" not in doc or not isinstance(doc["via_points"], list) or not doc["via_points"]:
        raise ConfigError("via_points: required non-empty list of [x, y, z]")
    vias = np.asarray([_vec3(v, f"via_points[{i}]") for i, v in enumerate(doc["via_points"])])

    if "script" not in doc or not isinstance(doc["script"], dict):
        raise ConfigError("script: required object with waypoints and speeds")
    sdoc = doc["script"]
    for key in sdoc:
        if key not in ("waypoints", "speeds", "hide"):
            raise ConfigError(f"script.{key}: unknown field")
    if "waypoints" not in sdoc or not isinstance(sdoc["waypoints"], list) or len(sdoc["waypoints"]) < 2:
        raise ConfigError("script.waypoints: required list of at least 2 points")
    wpts = np.asarray([_vec3(v, f"script.waypoints[{i}]") for i, v in enumerate(sdoc["waypoints"])])
    speeds = sdoc.get("speeds")
    if isinstance(speeds, (int, float)):
        speeds = [float(speeds)] * (len(wpts) - 1)
    if not isinstance(speeds, list) or len(speeds) != len(wpts) - 1:
        raise ConfigError("script.speeds: need one speed per leg (or a single number)")
    hide = sdoc.get("hide")
    if hide is not None and (not isinstance(hide, list) or len(hide) != len(wpts) - 1):
        raise ConfigError("script.hide: need one flag per leg")
    try:
        script = TargetScript(waypoints=wpts, speeds=np.asarray(speeds, float),
                              hide=np.asarray(hide, bool) if hide is not None else None)
    except ValueError as e:
        raise ConfigError(f"script: {e}") from None

    if "start" not in doc or not isinstance(doc["start"], dict):
        raise ConfigError("start: required object with position")
    for key in doc["start"]:
        if key not in ("position", "yaw"):
            raise ConfigError(f"start.{key}: unknown field")
    start_pos = _vec3(doc["start"].get("position"), "start.position")
    start_yaw = float(doc["start"].get("yaw", 0.0))

    sections = {}
    for name in _SECTION_TYPES:
        data = doc.get(name, {})
        if not isinstance(data, dict):
            raise ConfigError(f"{name}: expected an object")
        sections[name] = _build_section(name, data)

    # cross-section invariants that the dataclasses cannot see alone
    if sections["preplan"].r_corridor >= sections["preplan"].r_safe:
        raise ConfigError("preplan.r_corridor: must be < preplan.r_safe "
                          f"(got {sections['preplan'].r_corridor} >= {sections['preplan'].r_safe})")
    if sections["prediction"].n_obs * sections["mission"].obs_period > 10 * sections["mission"].horizon:
        raise ConfigError("mission.obs_period: observation window far exceeds the horizon")

    seed = doc.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError("seed: expected an integer or null")

    return ScenarioConfig(
        map_path=map_path, via_points=vias, script=script,
        start_position=start_pos, start_yaw=start_yaw,
        prediction=sections["prediction"], preplan=sections["preplan"],
        smooth=sections["smooth"], mission=sections["mission"], esdf=sections["esdf"],
        seed=seed, name=str(doc.get("name", "scenario")))


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)
    if cfg.name == "scenario":
        cfg.name = path.stem
    return cfg


def serialize_config(cfg: ScenarioConfig) -> str:
    """Inverse of parse_config (round-trips through JSON)."""
    inv = {name: {json_key: field_name for json_key, field_name in mapping.items()}
           for name, mapping in _FIELD_ALIASES.items()}
    doc = {
        "name": cfg.name,
        "map": cfg.map_path,
        "via_points": cfg.via_points.tolist(),
        "script": {
            "waypoints": cfg.script.waypoints.tolist(),
            "speeds": cfg.script.speeds.tolist(),
            "hide": cfg.script.hide.astype(bool).tolist(),
        },
        "start": {"position": cfg.start_position.tolist(), "yaw": cfg.start_yaw},
        "seed": cfg.seed,
    }
    for name in _SECTION_TYPES:
        obj = getattr(cfg, name if name != "esdf" else "esdf")
        values = asdict(obj)
        doc[name] = {jk: values[fn] for jk, fn in inv[name].items()}
    return json.dumps(doc, indent=2)
