"""Command line entry point: one config file per run.

    roughlq --config run.yaml --out results/ [--seed N] [--threads K] [--verbose]

The config names the subcommand (lift, rsde, transform-check, lq, smp-check,
equivalence, convergence, ito-check) and carries every numerical setting.
Artifacts are computed in memory and only written once the run finished, so
a rejected config or a module error leaves no files behind.  Exit status: 0
pass, 1 check failed, 2 invalid config, 3 module error.
"""

from __future__ import annotations

import argparse
import ast
import hashlib
import json
import logging
import math
import platform
import sys
from dataclasses import dataclass
from importlib import metadata, resources
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import experiments as ex
from .doss_sussmann import crosscheck_batch, transform_for_system, transform_to_csv
from .errors import ConfigError, RoughLQError
from .lq import (
    SPEC_KEYS,
    closed_loop_batch,
    closed_loop_to_csv,
    lq_spec_from_mapping,
    optimal_affine_feedback,
    riccati_backward,
    riccati_interval_residual,
    riccati_residual,
    riccati_to_csv,
    stationarity_residual,
    transform_for_spec,
)
from .rough_path import (
    GridRoughPath,
    TimeGrid,
    chen_area,
    dump_rough_path,
    lift_brownian_stratonovich,
    lift_piecewise_linear,
    path_digest,
)
from .rsde import AffineRoughSystem, self_convergence_order, solve_batch, trajectories_to_csv, Trajectory
from .seeding import derive_seed, rng_for

log = logging.getLogger("roughlq")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_ERROR = 0, 1, 2, 3
DRIVER_STREAM = 5
CHECK_STREAM = 6
REQUIRED = object()

# -- expressions in t ----------------------------------------------------------

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "tanh": np.tanh, "log": np.log, "abs": np.abs}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}


def compile_expression(text: str) -> Callable[[np.ndarray], np.ndarray]:
    """Arithmetic in ``t`` with a few elementary functions; anything else is rejected."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}") from exc

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            v = float(node.value)
            return lambda t: v
        if isinstance(node, ast.Name):
            if node.id == "t":
                return lambda t: t
            if node.id in _CONSTS:
                v = _CONSTS[node.id]
                return lambda t: v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op, a, b = _BINOPS[type(node.op)], build(node.left), build(node.right)
            return lambda t: op(a(t), b(t))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            a = build(node.operand)
            sign = -1.0 if isinstance(node.op, ast.USub) else 1.0
            return lambda t: sign * a(t)
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and len(node.args) == 1 and not node.keywords):
            fn, a = _FUNCS[node.func.id], build(node.args[0])
            return lambda t: fn(a(t))
        raise ConfigError(f"unsupported element {ast.dump(node)[:40]} in expression {text!r}")

    fn = build(tree)
    return lambda t: np.broadcast_to(np.asarray(fn(np.asarray(t, dtype=float)), dtype=float), np.shape(t)).copy()


# -- strict config parsing -----------------------------------------------------


def _number(value, name: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{name} must be a number")
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError as exc:
            raise ConfigError(f"{name} must be a number, got {value!r}") from exc
    if not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{name} must be a finite number")
    return float(value)


def _positive(value, name):
    v = _number(value, name)
    if not v > 0:
        raise ConfigError(f"{name} must be positive, got {v}")
    return v


def _count(minimum: int):
    def parse(value, name):
        if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
            raise ConfigError(f"{name} must be an integer >= {minimum}")
        return int(value)
    return parse


def _optional(parser):
    return lambda value, name: None if value is None else parser(value, name)


def _alpha(value, name):
    v = _number(value, name)
    if not 1 / 3 < v < 0.5:
        raise ConfigError(f"{name} must lie in (1/3, 1/2), got {v}")
    return v


def _flag(value, name):
    if not isinstance(value, bool):
        raise ConfigError(f"{name} must be true or false")
    return value


def _list_of(parser, minimum: int = 1):
    def parse(value, name):
        if not isinstance(value, (list, tuple)) or len(value) < minimum:
            raise ConfigError(f"{name} must be a list of at least {minimum} entries")
        return [parser(v, f"{name}[{i}]") for i, v in enumerate(value)]
    return parse


def _coefficient(value, name):
    """Constant, per-node list, or expression string in ``t``."""
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            compile_expression(value)
            return value
    if isinstance(value, (list, tuple)):
        return [_coefficient(v, f"{name}[{i}]") if isinstance(v, (list, tuple)) else _number(v, f"{name}[{i}]")
                for i, v in enumerate(value)]
    return _number(value, name)


def _choice(*options):
    def parse(value, name):
        if value not in options:
            raise ConfigError(f"{name} must be one of {list(options)}, got {value!r}")
        return value
    return parse


def _section(data, schema: dict, name: str) -> dict:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be a mapping")
    unknown = set(data) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    out = {}
    for key, (parser, default) in schema.items():
        if key in data:
            out[key] = parser(data[key], f"{name}.{key}")
        elif default is REQUIRED:
            raise ConfigError(f"missing {name}.{key}")
        else:
            out[key] = default
    return out


TOLERANCES = {
    "inversion": (_positive, 1e-6),
    "chen": (_positive, 1e-10),
    "geometric": (_positive, 1e-12),
    "crosscheck": (_positive, 1e-2),
    "riccati_residual": (_positive, 1e-2),
    "stationarity": (_positive, 1e-6),
}

NUMERICS = {
    "T": (_positive, 1.0),
    "mesh": (_positive, REQUIRED),
    "alpha": (_alpha, 0.45),
    "fine_mesh": (_optional(_positive), None),
    "tolerances": (lambda v, n: _section(v, TOLERANCES, n), None),
}

DRIVER = {
    "kind": (_choice("brownian", "smooth", "zero"), "brownian"),
    "dim": (_count(1), 1),
    "expression": (_optional(_coefficient), None),
    "ito": (_flag, False),
}

_AFFINE = {"x": (_coefficient, 0.0), "u": (_coefficient, 0.0), "const": (_coefficient, 0.0)}

SYSTEM = {
    "x0": (_number, REQUIRED),
    "drift": (lambda v, n: _section(v, _AFFINE, n), None),
    "diffusion": (lambda v, n: _section(v, _AFFINE, n), None),
    "F": (_coefficient, 0.0),
    "f": (_coefficient, 0.0),
    "Fprime": (_coefficient, 0.0),
    "fprime": (_coefficient, 0.0),
    "control": (lambda v, n: None if v is None else _section(v, {"gain": (_number, 0.0), "offset": (_number, 0.0)}, n),
                None),
}

_N = _count(2)
EXPERIMENTS = {
    "lift": {"n_triples": (_count(1), 200)},
    "rsde": {"n_samples": (_count(1), 4)},
    "transform-check": {"n_samples": (_count(1), 100)},
    "lq": {"n_samples": (_N, 10_000), "n_paths": (_count(1), 1), "value_se": (_positive, 3.0)},
    "smp-check": {
        "n_samples": (_N, 10_000),
        "epsilon": (_positive, 0.05),
        "shift": (_number, 0.3),
        "n_directions": (_count(1), 20),
        "eps_values": (_list_of(_number), [0.01, 0.1, 0.5]),
    },
    "equivalence": {"n_outer": (_N, 200), "n_inner": (_N, 500), "n_joint": (_optional(_N), None)},
    "convergence": {"meshes": (_list_of(_positive, 3), REQUIRED), "min_order": (_number, 0.4)},
    "ito-check": {
        "steps": (_list_of(_count(1), 2), REQUIRED),
        "distance_alpha": (_alpha, 0.35),
        "h": (_coefficient, "sin(2*pi*t)"),
        "eps_values": (_list_of(_positive, 2), [0.1, 0.05, 0.025, 0.0125]),
        "slack": (_positive, 0.1),
        "response_tol": (_positive, 0.2),
    },
}

SECTIONS = {
    "lift": ("numerics", "driver", "experiment"),
    "rsde": ("numerics", "driver", "system", "experiment"),
    "transform-check": ("numerics", "driver", "system", "experiment"),
    "lq": ("numerics", "driver", "problem", "experiment"),
    "smp-check": ("numerics", "driver", "problem", "experiment"),
    "equivalence": ("numerics", "problem", "experiment"),
    "convergence": ("numerics", "driver", "system", "experiment"),
    "ito-check": ("numerics", "driver", "system", "experiment"),
}
TOP_LEVEL = {"subcommand", "master_seed", "out"} | {s for v in SECTIONS.values() for s in v}


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    master_seed: int
    numerics: dict
    experiment: dict
    driver: dict | None = None
    system: dict | None = None
    problem: dict | None = None
    out: str | None = None

    def echo(self) -> dict:
        """The resolved config, suitable for feeding back to :func:`parse_config`."""
        d = {"subcommand": self.subcommand, "master_seed": self.master_seed,
             "numerics": self.numerics, "experiment": self.experiment}
        for name in ("driver", "system", "problem"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        return d


def _problem(data) -> dict:
    if not isinstance(data, dict):
        raise ConfigError("problem must be a mapping")
    unknown = set(data) - SPEC_KEYS
    if unknown:
        raise ConfigError(f"unknown keys in problem: {sorted(unknown)}")
    out = {}
    for k, v in data.items():
        if k == "driver_dim":
            out[k] = _count(1)(v, "problem.driver_dim")
        elif k == "control_bounds":
            out[k] = None if v is None else _list_of(_number, 2)(v, "problem.control_bounds")
        else:
            out[k] = _coefficient(v, f"problem.{k}")
    if "x0" not in out:
        raise ConfigError("missing problem.x0")
    return out


def parse_config(data, seed_override: int | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(data) - TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    sub = data.get("subcommand")
    if sub not in SECTIONS:
        raise ConfigError(f"unknown subcommand {sub!r}; expected one of {sorted(SECTIONS)}")
    allowed = SECTIONS[sub]
    extra = {k for k in data if k not in ("subcommand", "master_seed", "out") and k not in allowed}
    if extra:
        raise ConfigError(f"sections {sorted(extra)} do not apply to {sub}")
    seed = data.get("master_seed", 0) if seed_override is None else seed_override
    seed = _count(0)(seed, "master_seed")
    numerics = _section(data.get("numerics"), NUMERICS, "numerics")
    if numerics["tolerances"] is None:
        numerics["tolerances"] = _section({}, TOLERANCES, "numerics.tolerances")
    grid = _grid(numerics)
    if numerics["fine_mesh"] is not None and numerics["fine_mesh"] > numerics["mesh"]:
        raise ConfigError("numerics.fine_mesh must not exceed numerics.mesh")
    experiment = _section(data.get("experiment"), EXPERIMENTS[sub], "experiment")
    kw: dict[str, Any] = {}
    if "driver" in allowed:
        drv = _section(data.get("driver"), DRIVER, "driver")
        if drv["kind"] == "smooth" and drv["expression"] is None:
            raise ConfigError("a smooth driver needs driver.expression")
        if drv["kind"] != "smooth" and drv["expression"] is not None:
            raise ConfigError("driver.expression only applies to smooth drivers")
        kw["driver"] = drv
    if "system" in allowed:
        if "system" not in data:
            raise ConfigError(f"{sub} needs a system section")
        sys_ = _section(data["system"], SYSTEM, "system")
        for key in ("drift", "diffusion"):
            if sys_[key] is None:
                sys_[key] = _section({}, _AFFINE, f"system.{key}")
        kw["system"] = sys_
    if "problem" in allowed:
        if "problem" not in data:
            raise ConfigError(f"{sub} needs a problem section")
        kw["problem"] = _problem(data["problem"])
    if sub == "ito-check" and kw["driver"]["kind"] != "brownian":
        raise ConfigError("ito-check refines a Brownian reference driver")
    if sub == "convergence":
        for h in experiment["meshes"]:
            try:
                TimeGrid.from_mesh(grid.T, h)
            except RoughLQError as exc:
                raise ConfigError(str(exc)) from exc
            if h <= numerics["mesh"]:
                raise ConfigError("convergence meshes must be coarser than numerics.mesh")
    if sub == "ito-check":
        for s in experiment["steps"]:
            if grid.n % s:
                raise ConfigError(f"step {s} does not divide {grid.n} intervals")
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out must be a path string")
    return RunConfig(sub, seed, numerics, experiment, out=out, **kw)


def _grid(numerics: dict) -> TimeGrid:
    try:
        return TimeGrid.from_mesh(numerics["T"], numerics["mesh"])
    except RoughLQError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(source: str) -> dict:
    """Read YAML or JSON; ``bundled:NAME`` selects a config shipped with the package."""
    if source.startswith("bundled:"):
        res = resources.files("roughlq") / "data" / f"{source[len('bundled:'):]}.yaml"
        if not res.is_file():
            raise ConfigError(f"no bundled config {source!r}")
        text, suffix = res.read_text(), ".yaml"
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config file {source} not found")
        text, suffix = path.read_text(), path.suffix.lower()
    try:
        return json.loads(text) if suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc


# -- building objects from the config ------------------------------------------


def _on_nodes(value, grid: TimeGrid) -> np.ndarray | float:
    if isinstance(value, str):
        return compile_expression(value)(grid.times)
    if isinstance(value, list):
        arr = np.asarray(value, dtype=float)
        if arr.shape[0] != len(grid):
            raise ConfigError(f"per-node list has {arr.shape[0]} entries, grid has {len(grid)} nodes")
        return arr
    return float(value)


def _problem_values(problem: dict):
    return {k: (compile_expression(v) if isinstance(v, str) else v) for k, v in problem.items()}


def build_driver(cfg: RunConfig, grid: TimeGrid) -> GridRoughPath:
    drv, num = cfg.driver, cfg.numerics
    if drv["kind"] == "brownian":
        seed = derive_seed(cfg.master_seed, DRIVER_STREAM, 0)
        return lift_brownian_stratonovich(seed, drv["dim"], num["fine_mesh"], grid, num["alpha"], drv["ito"])
    if drv["kind"] == "zero":
        return lift_piecewise_linear(np.zeros((len(grid), drv["dim"])), grid, num["alpha"])
    expr = drv["expression"] if isinstance(drv["expression"], list) else [drv["expression"]]
    if len(expr) != drv["dim"]:
        raise ConfigError(f"driver.expression has {len(expr)} components, driver.dim is {drv['dim']}")
    cols = [np.broadcast_to(_on_nodes(e, grid), (len(grid),)) for e in expr]
    return lift_piecewise_linear(np.stack(cols, axis=1), grid, num["alpha"])


def build_system(cfg: RunConfig, grid: TimeGrid):
    """Scalar affine system ``b = b_x x + b_u u + b_0``, ``sigma = s_x x + s_u u + s_0``."""
    s = cfg.system
    dr = {k: _on_nodes(v, grid) for k, v in s["drift"].items()}
    di = {k: _on_nodes(v, grid) for k, v in s["diffusion"].items()}

    def at(c, k):
        return c if isinstance(c, float) else c[k]

    def b(t, x, u):
        k = grid.node_of(t)
        out = at(dr["x"], k) * x + at(dr["const"], k)
        return out if u is None else out + at(dr["u"], k) * u

    def sigma(t, x, u):
        k = grid.node_of(t)
        out = at(di["x"], k) * x + at(di["const"], k)
        if u is not None:
            out = out + at(di["u"], k) * u
        return out[..., None]

    system = AffineRoughSystem.scalar(grid, b=b, sigma=sigma, **{k: _on_nodes(s[k], grid)
                                                                 for k in ("F", "f", "Fprime", "fprime")})
    control = None
    if s["control"] is not None:
        gain, offset = s["control"]["gain"], s["control"]["offset"]

        def control(t, x):
            return gain * x + offset
    return system, np.array([s["x0"]]), control


# -- subcommands -----------------------------------------------------------------


@dataclass
class Outcome:
    passed: bool
    summary: dict
    files: dict
    seeds: dict


def run_lift(cfg: RunConfig, grid: TimeGrid, threads: int) -> Outcome:
    path = build_driver(cfg, grid)
    tol = cfg.numerics["tolerances"]
    rng = rng_for(derive_seed(cfg.master_seed, CHECK_STREAM, 0))
    worst = 0.0
    for _ in range(cfg.experiment["n_triples"]):
        i, m, j = np.sort(rng.choice(grid.n + 1, 3, replace=False))
        whole = chen_area(path, i, j)
        split = chen_area(path, i, m) + chen_area(path, m, j) + np.outer(path.increment(i, m), path.increment(m, j))
        worst = max(worst, float(np.max(np.abs(whole - split)) / max(1.0, float(np.max(np.abs(whole))))))
    defect = path.symmetric_defect()
    geometric = cfg.driver["kind"] != "brownian" or not cfg.driver["ito"]
    passed = worst < tol["chen"] and (defect < tol["geometric"] or not geometric)
    rows = [[float(t), *path.values[k], *(path.level2[k].ravel() if k < grid.n else [math.nan] * path.dim**2)]
            for k, t in enumerate(grid.times)]
    d = path.dim
    header = ["t"] + [f"eta_{a + 1}" for a in range(d)] + [f"level2_{a + 1}{b + 1}" for a in range(d) for b in range(d)]
    summary = {"chen_residual": worst, "symmetric_defect": defect, "geometric": geometric,
               "path_digest": path_digest(path), "nodes": len(grid), "dim": d}
    return Outcome(passed, summary, {"rough_path.txt": dump_rough_path(path), "lift.csv": ex.rows_to_csv(header, rows)},
                   _driver_seeds(cfg))


def _driver_seeds(cfg: RunConfig) -> dict:
    if cfg.driver is not None and cfg.driver["kind"] == "brownian":
        return {"driver": derive_seed(cfg.master_seed, DRIVER_STREAM, 0)}
    return {}


def run_rsde(cfg: RunConfig, grid: TimeGrid, threads: int) -> Outcome:
    driver = build_driver(cfg, grid)
    system, x0, control = build_system(cfg, grid)
    seeds = ex.sample_seeds(cfg.master_seed, ex.W_STREAM, cfg.experiment["n_samples"])
    dW = ex.brownian_block(seeds, grid.dt, system.dim_w)
    x, controls, failed = solve_batch(system, driver, x0, control, dW, flag_blowups=True)
    trajs = []
    for s in range(len(seeds)):
        u = None if controls is None else np.stack([np.asarray(c, dtype=float).reshape(len(seeds), -1)[s]
                                                    for c in controls])
        trajs.append(Trajectory(grid, x[s], None, dW[s], u))
    finite = x[~failed, -1, 0]
    summary = {"n_samples": len(seeds), "failures": int(failed.sum()),
               "failed_samples": [int(i) for i in np.flatnonzero(failed)],
               "terminal_mean": ex.fsum_mean(finite) if finite.size else math.nan,
               "driver_digest": path_digest(driver)}
    return Outcome(not failed.any(), summary, {"trajectories.csv": trajectories_to_csv(trajs)},
                   {**_driver_seeds(cfg), "samples": seeds})


def run_transform_check(cfg: RunConfig, grid: TimeGrid, threads: int) -> Outcome:
    driver = build_driver(cfg, grid)
    system, x0, control = build_system(cfg, grid)
    tol = cfg.numerics["tolerances"]
    transform = transform_for_system(system, driver, tol["inversion"])
    seeds = ex.sample_seeds(cfg.master_seed, ex.W_STREAM, cfg.experiment["n_samples"])

    def work(block):
        rep = crosscheck_batch(system, driver, x0, control, ex.brownian_block(block, grid.dt, system.dim_w), transform)
        return np.stack([rep.gaps, rep.relative_gaps], axis=1)

    res = np.concatenate(ex.map_chunks(work, seeds, threads, chunk=25))
    rel = float(np.max(res[:, 1]))
    rows = [(i, s, float(g), float(r)) for i, (s, (g, r)) in enumerate(zip(seeds, res))]
    summary = {"max_relative_gap": rel, "max_gap": float(np.max(res[:, 0])), "product_defect": transform.product_defect,
               "tolerance": tol["crosscheck"], "n_samples": len(seeds), "driver_digest": path_digest(driver)}
    files = {"transform.csv": transform_to_csv(transform),
             "crosscheck.csv": ex.rows_to_csv(["sample", "seed", "gap", "relative_gap"], rows)}
    return Outcome(rel < tol["crosscheck"], summary, files, {**_driver_seeds(cfg), "samples": seeds})


def _lq_objects(cfg: RunConfig, grid: TimeGrid):
    spec = lq_spec_from_mapping(_problem_values(cfg.problem), grid)
    driver = build_driver(cfg, grid)
    if driver.dim != spec.driver_dim:
        raise ConfigError(f"driver dimension {driver.dim} does not match problem.driver_dim {spec.driver_dim}")
    transform = transform_for_spec(spec, driver, cfg.numerics["tolerances"]["inversion"])
    return spec, driver, transform, riccati_backward(spec, transform)


def run_lq(cfg: RunConfig, grid: TimeGrid, threads: int) -> Outcome:
    spec, driver, transform, ric = _lq_objects(cfg, grid)
    tol, exp = cfg.numerics["tolerances"], cfg.experiment
    path_seeds = ex.sample_seeds(cfg.master_seed, CHECK_STREAM, exp["n_paths"])
    paths = closed_loop_batch(spec, transform, ex.brownian_block(path_seeds, grid.dt), None, ric)
    ens = ex.cost_monte_carlo(spec, driver, None, exp["n_samples"], cfg.master_seed, threads, transform, ric)
    xt0 = float(transform.Ainv[0, 0, 0] * (spec.x0 - transform.zeta[0, 0]))
    value = float(ric.value(xt0))
    # the central difference only resolves smooth coefficients
    residual = riccati_interval_residual(ric) if cfg.driver["kind"] == "brownian" else riccati_residual(ric)
    stationarity = stationarity_residual(spec, transform, ric, paths)
    checks = {
        "riccati_residual": residual < tol["riccati_residual"],
        "stationarity": stationarity < tol["stationarity"],
        "positivity": bool(np.all(ric.P >= 0)),
        "value_matches_monte_carlo": abs(ens.mean - value) <= exp["value_se"] * ens.stderr,
    }
    summary = {"pass": all(checks.values()), "checks": checks, "value": value, "P0": float(ric.P[0]),
               "q0": float(ric.q[0]), "r0": float(ric.r[0]), "riccati_residual": residual,
               "riccati_residual_form": "interval" if cfg.driver["kind"] == "brownian" else "central",
               "stationarity_residual": stationarity, "min_denominator": float(ric.denom_min),
               "monte_carlo": {"mean": ens.mean, "stderr": ens.stderr, "n_samples": ens.n_samples,
                               "failures": ens.failures, "failed_samples": list(ens.failed_samples)},
               "spec_digest": ex.spec_digest(spec), "driver_digest": path_digest(driver)}
    files = {"riccati.csv": riccati_to_csv(ric), "closedloop.csv": closed_loop_to_csv(grid, paths)}
    return Outcome(summary["pass"], summary, files,
                   {**_driver_seeds(cfg), "closed_loop": path_seeds, "monte_carlo": list(ens.seeds)})


def run_smp_check(cfg: RunConfig, grid: TimeGrid, threads: int) -> Outcome:
    spec, driver, transform, ric = _lq_objects(cfg, grid)
    exp = cfg.experiment
    n, seed = exp["n_samples"], cfg.master_seed
    grad_dirs = {"one": np.ones(len(grid)), "ramp": grid.times / grid.T}
    at_opt = ex.gradient_check(spec, driver, None, grad_dirs, exp["epsilon"], n, seed, threads)
    base = optimal_affine_feedback(ric).shifted(exp["shift"])
    off_opt = ex.gradient_check(spec, driver, base, grad_dirs, exp["epsilon"], n, seed, threads)
    pdirs = {f"random_{i}": v for i, v in enumerate(ex.random_directions(seed, exp["n_directions"], grid))}
    pdirs["neg_optimal"] = ex.negative_optimal
    pert = ex.perturbation_test(spec, transform, ric, driver, pdirs, exp["eps_values"], n, seed, threads)
    stat_res = stationarity_residual(spec, transform, ric, closed_loop_batch(
        spec, transform, ex.brownian_block(ex.sample_seeds(seed, CHECK_STREAM, 1), grid.dt), None, ric))
    stat_ok = stat_res < cfg.numerics["tolerances"]["stationarity"]
    grows = []
    for label, rep in (("optimal", at_opt), (f"shift_{exp['shift']!r}", off_opt)):
        for i, name in enumerate(rep.directions):
            grows.append((label, name, rep.adjoint[i], rep.adjoint_stderr[i], rep.fd[i], rep.fd_half[i],
                          rep.fd_stderr[i], rep.compared[i], rep.relative_mismatch[i], rep.richardson_ok[i]))
    prows = [(r.direction, r.epsilon, r.mean, r.stderr, r.diff, r.combined_se, r.passed) for r in pert.rows]
    checks = {"stationarity": stat_ok, "gradients_at_optimum": at_opt.passed,
              "gradients_off_optimum": off_opt.passed, "perturbations": pert.passed}
    summary = {"pass": all(checks.values()), "checks": checks, "stationarity_residual": stat_res,
               "max_relative_mismatch": max(at_opt.max_relative_mismatch, off_opt.max_relative_mismatch),
               "baseline_mean": pert.baseline_mean, "baseline_stderr": pert.baseline_stderr,
               "worst_perturbation_se": min((r.diff / r.combined_se for r in pert.rows if r.combined_se > 0),
                                            default=0.0),
               "spec_digest": ex.spec_digest(spec), "driver_digest": path_digest(driver)}
    files = {
        "gradients.csv": ex.rows_to_csv(["base", "direction", "adjoint", "adjoint_stderr", "fd", "fd_half",
                                         "fd_stderr", "compared", "relative_mismatch", "richardson_ok"], grows),
        "perturbations.csv": ex.rows_to_csv(["direction", "epsilon", "mean", "stderr", "diff", "combined_se", "pass"],
                                            prows),
    }
    return Outcome(summary["pass"], summary, files,
                   {**_driver_seeds(cfg), "samples": ex.sample_seeds(seed, ex.W_STREAM, n)})


def run_equivalence(cfg: RunConfig, grid: TimeGrid, threads: int) -> Outcome:
    spec = lq_spec_from_mapping(_problem_values(cfg.problem), grid)
    exp, num = cfg.experiment, cfg.numerics
    rep = ex.pathwise_equivalence(spec, exp["n_outer"], exp["n_inner"], cfg.master_seed, num["fine_mesh"],
                                  exp["n_joint"], threads, num["alpha"])
    summary = {k: v for k, v in ex._plain(rep).items() if k not in ("values", "passed")}
    summary["pass"] = rep.passed
    summary["spec_digest"] = ex.spec_digest(spec)
    rows = list(enumerate(rep.values))
    return Outcome(rep.passed, summary, {"values.csv": ex.rows_to_csv(["driver", "value"], rows)},
                   {"outer": ex.sample_seeds(cfg.master_seed, ex.B_STREAM, exp["n_outer"]),
                    "inner": ex.sample_seeds(cfg.master_seed, ex.W_STREAM, exp["n_inner"])})


def run_convergence(cfg: RunConfig, grid: TimeGrid, threads: int) -> Outcome:
    driver = build_driver(cfg, grid)
    system, x0, control = build_system(cfg, grid)
    seed = derive_seed(cfg.master_seed, ex.W_STREAM, 0)
    rep = self_convergence_order(system, driver, x0, control, seed, cfg.experiment["meshes"])
    passed = rep.order >= cfg.experiment["min_order"]
    rows = list(zip(rep.meshes, rep.errors))
    summary = {"pass": passed, "order": rep.order, "exact": rep.exact, "min_order": cfg.experiment["min_order"],
               "driver_digest": path_digest(driver)}
    return Outcome(passed, summary, {"convergence.csv": ex.rows_to_csv(["mesh", "error"], rows)},
                   {**_driver_seeds(cfg), "samples": [seed]})


def run_ito_check(cfg: RunConfig, grid: TimeGrid, threads: int) -> Outcome:
    ref = build_driver(cfg, grid)
    system, x0, control = build_system(cfg, grid)
    exp = cfg.experiment
    seed = derive_seed(cfg.master_seed, ex.W_STREAM, 0)
    drivers = ex.subsampled_drivers(ref, exp["steps"])
    cont = ex.ito_lyons_convergence(system, drivers, x0, control, seed, exp["slack"], exp["distance_alpha"])
    h = np.broadcast_to(_on_nodes(exp["h"], grid), (len(grid),))
    resp = ex.linear_response(system, ref, h, exp["eps_values"], x0, control, seed)
    resp_ok = all(abs(r - 0.5) <= exp["response_tol"] * 0.5 for r in resp.ratios)
    checks = {"gaps_monotone": cont.monotone, "distances_decreasing": cont.distances_decreasing,
              "linear_response": resp_ok}
    summary = {"pass": all(checks.values()), "checks": checks, "distances": cont.distances, "gaps": cont.gaps,
               "ratios": resp.ratios, "distance_alpha": cont.alpha, "driver_digest": path_digest(ref)}
    files = {
        "continuity.csv": ex.rows_to_csv(["step", "mesh", "distance", "gap"],
                                         [(s, s * grid.mesh, d, g) for s, d, g in
                                          zip(exp["steps"], cont.distances, cont.gaps)]),
        "response.csv": ex.rows_to_csv(["epsilon", "gap"], list(zip(resp.eps, resp.gaps))),
    }
    return Outcome(summary["pass"], summary, files, {**_driver_seeds(cfg), "samples": [seed]})


RUNNERS = {
    "lift": run_lift,
    "rsde": run_rsde,
    "transform-check": run_transform_check,
    "lq": run_lq,
    "smp-check": run_smp_check,
    "equivalence": run_equivalence,
    "convergence": run_convergence,
    "ito-check": run_ito_check,
}


# -- driver --------------------------------------------------------------------


def _versions() -> dict:
    out = {"python": platform.python_version(), "numpy": np.__version__, "pyyaml": yaml.__version__}
    for dist in ("artifact", "scipy"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


def _json(obj) -> str:
    return json.dumps(ex._plain(obj), indent=2, sort_keys=True) + "\n"


def execute(cfg: RunConfig, threads: int = 1) -> tuple[Outcome, dict]:
    """Run a validated config; returns the outcome and the file map including summary and manifest."""
    grid = _grid(cfg.numerics)
    log.info("running %s on %d intervals, seed %d", cfg.subcommand, grid.n, cfg.master_seed)
    outcome = RUNNERS[cfg.subcommand](cfg, grid, max(1, threads))
    summary = dict(outcome.summary)
    summary["pass"] = bool(outcome.passed)
    summary["subcommand"] = cfg.subcommand
    files = dict(outcome.files)
    files["summary.json"] = _json(summary)
    manifest = {
        "subcommand": cfg.subcommand,
        "config": cfg.echo(),
        "master_seed": cfg.master_seed,
        "seeds": outcome.seeds,
        "versions": _versions(),
        "files": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
    }
    files["manifest.json"] = _json(manifest)
    return outcome, files


def _fail(status: str, exc: Exception, code: int) -> int:
    print(json.dumps({"status": status, "error": type(exc).__name__, "message": str(exc)}, sort_keys=True),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="roughlq", description="Seeded rough LQ experiments driven by one config file.")
    p.add_argument("--config", required=True, help="YAML or JSON config, or bundled:NAME")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--out", default=None, help="output directory (overrides the config's out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo loops")
    p.add_argument("--verbose", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = parse_config(load_config(args.config), args.seed)
        out = args.out or cfg.out
        if out is None:
            raise ConfigError("no output directory: pass --out or set out in the config")
    except ConfigError as exc:
        return _fail("invalid-config", exc, EXIT_CONFIG)
    try:
        outcome, files = execute(cfg, args.threads)
    except ConfigError as exc:
        return _fail("invalid-config", exc, EXIT_CONFIG)
    except (RoughLQError, FloatingPointError, ValueError) as exc:
        return _fail("error", exc, EXIT_ERROR)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text)
    log.info("wrote %d files to %s", len(files), out_dir)
    if not outcome.passed:
        print(json.dumps({"status": "check-failed", "summary": str(out_dir / "summary.json")}, sort_keys=True),
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_PASS


if __name__ == "__main__":
    sys.exit(main())
