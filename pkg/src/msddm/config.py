"""Run configuration: JSON schema, loading, overrides and model construction."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from jsonschema import Draft202012Validator

from .aggregate import ModelSpec
from .core import StageTheta
from .montecarlo import SimConfig
from .ou import DEFAULT_PIECES, OUModel, OUStage
from .reward import RewardConfig
from .stages import DEFAULT_GRID

__all__ = ["CONFIG_SCHEMA", "ConfigError", "RunConfig", "load_config", "parse_config"]

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_COUNT = {"type": "integer", "minimum": 1}
_GRID = {
    "oneOf": [
        {"type": "array", "items": _NUM, "minItems": 1},
        {
            "type": "object",
            "properties": {"start": _NUM, "stop": _NUM, "num": _COUNT},
            "required": ["start", "stop", "num"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "description": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["stages"],
            "properties": {
                "x0": _NUM,
                "stages": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["drift", "diffusion"],
                        "properties": {
                            "t_start": {"type": "number", "minimum": 0},
                            "drift": _NUM,
                            "leak": {"type": "number", "minimum": 0},
                            "diffusion": _POS,
                            "z_upper": _NUM,
                            "z_lower": _NUM,
                        },
                    },
                },
                "random_start_times": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["seed", "low", "high"],
                    "properties": {
                        "seed": {"type": "integer", "minimum": 0},
                        "low": {"type": "number", "minimum": 0},
                        "high": _NUM,
                        "decimals": {"type": "integer", "minimum": 0, "maximum": 12},
                    },
                },
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid_size": {"type": "integer", "minimum": 3},
                "pieces": _COUNT,
                "time_grid": _GRID,
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_paths"],
            "properties": {
                "n_paths": _COUNT,
                "dt": _POS,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "max_time": _POS,
                "crossing": {"enum": ["bridge", "endpoint"]},
                "workers": _COUNT,
            },
        },
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"ks_coefficient": _POS},
        },
        "reward": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_nd": {"type": "number", "minimum": 0},
                "z_min": _POS,
                "z_max": _POS,
                "resolution": {"type": "integer", "minimum": 3},
            },
        },
        "surface": {
            "type": "object",
            "additionalProperties": False,
            "required": ["a1", "t1"],
            "properties": {
                "a1": _GRID,
                "t1": _GRID,
                "a2": _NUM,
                "sigma": _POS,
                "x0": _NUM,
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string", "minLength": 1},
                "formats": {
                    "type": "array",
                    "items": {"enum": ["csv", "json"]},
                    "uniqueItems": True,
                },
            },
        },
    },
}


class ConfigError(Exception):
    """Invalid configuration; the message names the offending field."""


def _where(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _grid_values(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], spec["num"])
    return np.asarray(spec, dtype=float)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with defaults filled in."""

    raw: dict
    start_times: tuple[float, ...] | None

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})

    @property
    def grid_size(self) -> int:
        return self.section("analysis").get("grid_size", DEFAULT_GRID)

    @property
    def pieces(self) -> int:
        return self.section("analysis").get("pieces", DEFAULT_PIECES)

    @property
    def time_grid(self) -> np.ndarray | None:
        spec = self.section("analysis").get("time_grid")
        return None if spec is None else _grid_values(spec)

    @property
    def output_dir(self) -> Path:
        return Path(self.section("output").get("directory", "out"))

    @property
    def formats(self) -> tuple[str, ...]:
        return tuple(self.section("output").get("formats", ["csv", "json"]))

    @property
    def ks_coefficient(self) -> float:
        return self.section("compare").get("ks_coefficient", 1.63)

    @property
    def has_leak(self) -> bool:
        return any(s.get("leak", 0.0) > 0 for s in self.raw["model"]["stages"])

    def _stages(self, need_thresholds: bool) -> list[dict]:
        if "model" not in self.raw:
            raise ConfigError("model: section is required for this command")
        stages = self.raw["model"]["stages"]
        if need_thresholds:
            for i, s in enumerate(stages):
                if "z_upper" not in s:
                    raise ConfigError(f"model.stages[{i}].z_upper: required for this command")
        return stages

    def resolved_model(self) -> dict:
        """Model section with every start time and threshold made explicit."""
        stages = self._stages(True)
        return {
            "x0": self.raw["model"].get("x0", 0.0),
            "stages": [
                {
                    "t_start": t,
                    "drift": s["drift"],
                    "leak": s.get("leak", 0.0),
                    "diffusion": s["diffusion"],
                    "z_upper": s["z_upper"],
                    "z_lower": s.get("z_lower", -s["z_upper"]),
                }
                for s, t in zip(stages, self.start_times)
            ],
        }

    def model_spec(self, need_thresholds: bool = True, z: float = 1.0) -> ModelSpec:
        """Leak-free model; without thresholds every stage gets ``(-z, z)``."""
        stages = self._stages(need_thresholds)
        if self.has_leak:
            raise ConfigError("model.stages: nonzero leak requires the 'ou' command")
        x0 = self.raw["model"].get("x0", 0.0)
        out = []
        for s, t in zip(stages, self.start_times):
            up = s["z_upper"] if need_thresholds else z
            lo = s.get("z_lower", -up) if need_thresholds else -z
            out.append(StageTheta(s["drift"], s["diffusion"], up, lo, start_time=t))
        return ModelSpec(x0, tuple(out))

    def ou_model(self) -> OUModel:
        stages = self._stages(True)
        x0 = self.raw["model"].get("x0", 0.0)
        return OUModel(x0, tuple(
            OUStage(s["drift"], s.get("leak", 0.0), s["diffusion"], s["z_upper"],
                    s.get("z_lower", -s["z_upper"]), start_time=t)
            for s, t in zip(stages, self.start_times)))

    def any_model(self):
        return self.ou_model() if self.has_leak else self.model_spec()

    def sim_config(self) -> SimConfig:
        sim = self.section("simulation")
        if not sim:
            raise ConfigError("simulation: section is required for this command")
        return SimConfig(
            n_paths=sim["n_paths"],
            dt=sim.get("dt", 1e-4),
            seed=sim.get("seed", 0),
            max_time=sim.get("max_time", 100.0),
            crossing=sim.get("crossing", "bridge"),
            workers=sim.get("workers", 1),
        )

    def reward_config(self) -> RewardConfig:
        r = self.section("reward")
        return RewardConfig(
            t_nd=r.get("t_nd", 0.3),
            z_min=r.get("z_min", 0.01),
            z_max=r.get("z_max", 0.4),
            resolution=r.get("resolution", 2000),
            grid_size=self.grid_size,
        )

    def surface_grids(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.section("surface")
        if not s:
            raise ConfigError("surface: section is required for this command")
        return _grid_values(s["a1"]), _grid_values(s["t1"])


def _resolve_start_times(model: dict) -> tuple[float, ...]:
    stages = model["stages"]
    rnd = model.get("random_start_times")
    if rnd is None:
        times = []
        for i, s in enumerate(stages):
            if "t_start" not in s:
                if i == 0:
                    times.append(0.0)
                    continue
                raise ConfigError(f"model.stages[{i}].t_start: required without random_start_times")
            times.append(float(s["t_start"]))
        return tuple(times)
    for i, s in enumerate(stages[1:], start=1):
        if "t_start" in s:
            raise ConfigError(f"model.stages[{i}].t_start: not allowed together with random_start_times")
    first = float(stages[0].get("t_start", 0.0))
    if not rnd["high"] > rnd["low"]:
        raise ConfigError("model.random_start_times.high: must exceed low")
    if rnd["low"] < first:
        raise ConfigError("model.random_start_times.low: must not precede model.stages[0].t_start")
    draws = np.random.default_rng(rnd["seed"]).uniform(rnd["low"], rnd["high"], len(stages) - 1)
    draws = np.round(np.sort(draws), rnd.get("decimals", 3))
    return (first,) + tuple(float(v) for v in draws)


def _semantic_checks(raw: dict, start_times) -> None:
    if start_times is not None:
        for i in range(1, len(start_times)):
            if not start_times[i] > start_times[i - 1]:
                field = ("model.random_start_times" if "random_start_times" in raw["model"]
                         else f"model.stages[{i}].t_start")
                raise ConfigError(f"{field}: stage start times must be strictly increasing "
                                  f"(stage {i} starts at {start_times[i]:g}, "
                                  f"stage {i - 1} at {start_times[i - 1]:g})")
        x0 = raw["model"].get("x0", 0.0)
        for i, s in enumerate(raw["model"]["stages"]):
            if "z_upper" not in s:
                if "z_lower" in s:
                    raise ConfigError(f"model.stages[{i}].z_lower: given without z_upper")
                continue
            lo = s.get("z_lower", -s["z_upper"])
            if not lo < s["z_upper"]:
                raise ConfigError(f"model.stages[{i}].z_lower: must be below z_upper")
            if i == 0 and not lo < x0 < s["z_upper"]:
                raise ConfigError("model.x0: must lie strictly between the first stage's thresholds")
        sim = raw.get("simulation")
        if sim and "max_time" in sim and not sim["max_time"] > start_times[-1]:
            raise ConfigError("simulation.max_time: must exceed the last stage start time")
    r = raw.get("reward", {})
    if not r.get("z_min", 0.01) < r.get("z_max", 0.4):
        raise ConfigError("reward.z_max: must exceed reward.z_min (empty threshold range)")
    grid = raw.get("analysis", {}).get("time_grid")
    if grid is not None:
        g = _grid_values(grid)
        if g[0] <= 0 or np.any(np.diff(g) <= 0):
            raise ConfigError("analysis.time_grid: must be positive and strictly increasing")


def parse_config(raw: Any, overrides: dict | None = None) -> RunConfig:
    """Validate ``raw`` against the schema, apply overrides, and resolve start times.

    ``overrides`` may contain ``directory``, ``seed``, ``grid_size`` and ``pieces``.
    """
    raw = copy.deepcopy(raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section = {"directory": "output", "seed": "simulation", "grid_size": "analysis",
                   "pieces": "analysis"}[key]
        if section == "simulation" and section not in raw:
            continue
        raw.setdefault(section, {})[key] = value
    errors = sorted(Draft202012Validator(CONFIG_SCHEMA).iter_errors(raw),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigError("; ".join(f"{_where(e.absolute_path)}: {e.message}" for e in errors))
    start_times = _resolve_start_times(raw["model"]) if "model" in raw else None
    _semantic_checks(raw, start_times)
    return RunConfig(raw, start_times)


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(raw, overrides)
