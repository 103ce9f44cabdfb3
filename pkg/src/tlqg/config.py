"""JSON scenario files: schema validation, parsing and re-serialization.

Matrices are written as flat row-major lists of length n*n, or as length-n
lists meaning a diagonal matrix. See ``docs/config.md`` for the full layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .lqr import CostWeights
from .models import NU, NX, Landmark, Obstacle, WorldModel
from .planner import BarrierParams, OptimizerParams, PlanProblem

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised with every schema violation found in a scenario file."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario config:\n  " + "\n  ".join(self.errors))


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_vec = {"type": "array", "items": _num}
_pose = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "world", "problem"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "world": {
            "type": "object",
            "required": ["landmarks", "epsilon", "sigma_omega", "sigma_nu"],
            "additionalProperties": False,
            "properties": {
                "landmarks": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["id", "x", "y"],
                        "additionalProperties": False,
                        "properties": {"id": {"type": "string"}, "x": _num, "y": _num},
                    },
                },
                "obstacles": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["x", "y", "radius"],
                        "additionalProperties": False,
                        "properties": {"x": _num, "y": _num, "radius": _pos, "margin": _nonneg},
                    },
                },
                "dt": _pos,
                "epsilon": _nonneg,
                "sigma_omega": _vec,
                "sigma_nu": _vec,
                "G": _vec,
            },
        },
        "problem": {
            "type": "object",
            "required": ["start", "goal", "horizon"],
            "additionalProperties": False,
            "properties": {
                "start": _pose,
                "start_cov_scale": _nonneg,
                "goal": _pose,
                "goal_radius": _pos,
                "control_radius": _pos,
                "horizon": _posint,
                "effort_weight": _vec,
                "feedback_state_weight": _vec,
                "feedback_control_weight": _vec,
                "barrier": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"weight": _nonneg, "sharpness": _pos},
                },
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_outer_iters": _posint,
                "max_inner_iters": _posint,
                "gradient_tolerance": _pos,
                "penalty_weight_initial": _pos,
                "penalty_growth": {"type": "number", "exclusiveMinimum": 1},
                "fd_step": _pos,
                "init_strategy": {"enum": ["zero", "steer"]},
                "goal_tightening": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0},
                "simulate_epsilon": _nonneg,
                "validate": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["epsilon", "n_samples"],
                        "additionalProperties": False,
                        "properties": {"epsilon": _nonneg, "n_samples": _posint},
                    },
                },
                "sweep_epsilons": {"type": "array", "minItems": 1, "items": _pos},
                "sweep_samples": _posint,
                "delta": _pos,
                "compare_epsilon": _nonneg,
                "compare_samples": _posint,
            },
        },
    },
}


@dataclass(frozen=True)
class ValidateCase:
    epsilon: float
    n_samples: int


@dataclass(frozen=True)
class ExperimentParams:
    seed: int = 0
    simulate_epsilon: float | None = None
    validate: tuple = (ValidateCase(0.05, 2000), ValidateCase(0.02, 5000))
    sweep_epsilons: tuple = (0.16, 0.08, 0.04, 0.02)
    sweep_samples: int = 1000
    delta: float = 0.1
    compare_epsilon: float = 0.1
    compare_samples: int = 500


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    problem: PlanProblem
    feedback: CostWeights
    experiment: ExperimentParams = field(default_factory=ExperimentParams)
    start_cov_scale: float = 0.01
    name: str = ""

    def __iter__(self):
        yield self.problem
        yield self.experiment


def _matrix(values, n, where, errors):
    a = np.asarray(values, dtype=float)
    if a.size == n:
        return np.diag(a)
    if a.size == n * n:
        return a.reshape(n, n)
    errors.append(f"{where}: expected {n} (diagonal) or {n * n} entries, got {a.size}")
    return None


def _check_cov(m, where, errors, pd=False):
    if m is None:
        return
    if not np.allclose(m, m.T, rtol=0, atol=1e-12):
        errors.append(f"{where}: matrix is not symmetric")
        return
    lo = np.linalg.eigvalsh(m).min()
    if pd and lo <= 0:
        errors.append(f"{where}: matrix is not positive definite")
    elif lo < -1e-12:
        errors.append(f"{where}: matrix is not positive semidefinite")


def _path(err):
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1]
        parts.append(missing)
    elif err.validator == "additionalProperties":
        return ".".join(parts + ["<unknown>"]) + f": {err.message}"
    return ".".join(parts) or "<root>"


def from_dict(data):
    """Build a ScenarioConfig, raising ConfigError listing every problem."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = [f"{_path(e)}: {e.message}" if e.validator != "additionalProperties" else _path(e)
              for e in sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))]
    if errors:
        raise ConfigError(errors)

    w, p = data["world"], data["problem"]
    opt, exp = data.get("optimizer", {}), data.get("experiment", {})
    nz = 2 * len(w["landmarks"])
    sig_w = _matrix(w["sigma_omega"], NX, "world.sigma_omega", errors)
    sig_v = _matrix(w["sigma_nu"], nz, "world.sigma_nu", errors)
    G = _matrix(w.get("G", [1.0] * NX), NX, "world.G", errors)
    Wu = _matrix(p.get("effort_weight", [0.1] * NU), NU, "problem.effort_weight", errors)
    Fx = _matrix(p.get("feedback_state_weight", [1.0] * NX), NX, "problem.feedback_state_weight", errors)
    Fu = _matrix(p.get("feedback_control_weight", [0.1] * NU), NU, "problem.feedback_control_weight", errors)
    _check_cov(sig_w, "world.sigma_omega", errors)
    _check_cov(sig_v, "world.sigma_nu", errors, pd=True)
    _check_cov(Wu, "problem.effort_weight", errors)
    _check_cov(Fx, "problem.feedback_state_weight", errors)
    _check_cov(Fu, "problem.feedback_control_weight", errors, pd=True)
    ids = [lm["id"] for lm in w["landmarks"]]
    if len(set(ids)) != len(ids):
        errors.append("world.landmarks: landmark ids must be distinct")
    eps_grid = exp.get("sweep_epsilons", list(ExperimentParams.sweep_epsilons))
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        errors.append("experiment.sweep_epsilons: must be strictly decreasing")
    if errors:
        raise ConfigError(errors)

    cov_scale = float(p.get("start_cov_scale", 0.01))
    world = WorldModel(
        landmarks=[Landmark(lm["id"], float(lm["x"]), float(lm["y"])) for lm in w["landmarks"]],
        obstacles=[Obstacle(float(o["x"]), float(o["y"]), float(o["radius"]), float(o.get("margin", 0.0)))
                   for o in w.get("obstacles", [])],
        dt=float(w.get("dt", 1.0)),
        epsilon=float(w["epsilon"]),
        sigma_omega=sig_w,
        sigma_nu=sig_v,
        sigma_x0=cov_scale * np.eye(NX),
        G=G,
    )
    problem = PlanProblem(
        start=p["start"],
        goal=p["goal"],
        world=world,
        horizon=int(p["horizon"]),
        goal_radius=float(p.get("goal_radius", 0.2)),
        control_radius=float(p.get("control_radius", 1.2)),
        effort_weight=Wu,
        barrier=BarrierParams(**p.get("barrier", {})),
        optimizer=OptimizerParams(**opt),
    )
    defaults = ExperimentParams()
    experiment = ExperimentParams(
        seed=int(exp.get("seed", defaults.seed)),
        simulate_epsilon=exp.get("simulate_epsilon"),
        validate=tuple(ValidateCase(float(c["epsilon"]), int(c["n_samples"]))
                       for c in exp["validate"]) if "validate" in exp else defaults.validate,
        sweep_epsilons=tuple(float(e) for e in eps_grid),
        sweep_samples=int(exp.get("sweep_samples", defaults.sweep_samples)),
        delta=float(exp.get("delta", defaults.delta)),
        compare_epsilon=float(exp.get("compare_epsilon", defaults.compare_epsilon)),
        compare_samples=int(exp.get("compare_samples", defaults.compare_samples)),
    )
    return ScenarioConfig(problem, CostWeights(Fx, Fu), experiment, cov_scale, data.get("name", ""))


def parse_config(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<root>: not valid JSON ({exc})"]) from exc
    return from_dict(data)


def _flat(m):
    return [float(v) for v in np.asarray(m, dtype=float).ravel()]


def to_dict(cfg):
    """Serialize a ScenarioConfig back into the schema layout."""
    pr, w, ex = cfg.problem, cfg.problem.world, cfg.experiment
    out = {
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "world": {
            "landmarks": [{"id": lm.id, "x": lm.px, "y": lm.py} for lm in w.landmarks],
            "obstacles": [{"x": o.cx, "y": o.cy, "radius": o.radius, "margin": o.safety_margin}
                          for o in w.obstacles],
            "dt": w.dt,
            "epsilon": w.epsilon,
            "sigma_omega": _flat(w.sigma_omega),
            "sigma_nu": _flat(w.sigma_nu),
            "G": _flat(w.G),
        },
        "problem": {
            "start": _flat(pr.start),
            "start_cov_scale": cfg.start_cov_scale,
            "goal": _flat(pr.goal),
            "goal_radius": pr.goal_radius,
            "control_radius": pr.control_radius,
            "horizon": pr.horizon,
            "effort_weight": _flat(pr.effort_weight),
            "feedback_state_weight": _flat(cfg.feedback.Wx),
            "feedback_control_weight": _flat(cfg.feedback.Wu),
            "barrier": {"weight": pr.barrier.weight, "sharpness": pr.barrier.sharpness},
        },
        "optimizer": {k: getattr(pr.optimizer, k) for k in OptimizerParams.__dataclass_fields__},
        "experiment": {
            "seed": ex.seed,
            "validate": [{"epsilon": c.epsilon, "n_samples": c.n_samples} for c in ex.validate],
            "sweep_epsilons": list(ex.sweep_epsilons),
            "sweep_samples": ex.sweep_samples,
            "delta": ex.delta,
            "compare_epsilon": ex.compare_epsilon,
            "compare_samples": ex.compare_samples,
        },
    }
    if ex.simulate_epsilon is not None:
        out["experiment"]["simulate_epsilon"] = ex.simulate_epsilon
    return out


def bundled_scenario(name="fig1"):
    """Path to a scenario file shipped with the package."""
    return Path(str(resources.files("tlqg") / "scenarios" / f"{name}.json"))
