"""Batch entry point: config parsing, subcommand dispatch, CSV artifacts
and run manifests.

Configuration documents are line-oriented ``key = value`` pairs grouped
under bracketed section headers, with ``#`` starting a comment::

    [problem]
    preset = dynkin-flat
    l_lo = -1.0
    [grid]
    n_steps = 80

Sections and keys (case-sensitive; unknown keys are fatal):

    [problem]  preset (dynkin-flat) plus that preset's documented parameters
    [grid]     n_steps (80), n_nodes (81), x_min (-2.0), x_max (2.0), x0 (0.0)
    [mc]       n_paths (10000), seed (0), samples (1000)
    [solver]   order (supinf), mode (lattice), basis_degree (3),
               t_mid (0.5), trials (100)
    [output]   dir (out)

Every run writes its CSV artifacts plus a ``run.txt`` manifest echoing each
effective setting (so a run is re-executable from the manifest alone), the
tool version and the wall time.  Exit status: 0 success, 1 a check failed,
2 numerical failure (CFL/NaN), 3 configuration error.  ``--threads`` is
accepted as a hint and recorded, but solvers are deterministic and its
value never changes any artifact.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .model import (NumericsError, PRESETS, ProblemError, make_preset,
                    validate_problem)
from .paths import TimeGrid, constant_controls, euler_forward, simulate_brownian
from .game import (build_lattice, dpp_check, dpp_cross_resolution,
                   dynkin_oracle_corpus, value_backward_induction)
from .drbsde import check_flat_off, solve_drbsde_lattice, solve_drbsde_lsmc
from .pde import (cross_check, make_pde_grid, refinement_study,
                  solve_obstacle_pde, viscosity_residual)
from .linalg import random_spd, spd_sqrt_series

__all__ = ["ConfigError", "RunConfig", "parse_config", "serialize_config",
           "run", "main", "SUBCOMMANDS"]

SUBCOMMANDS = ("validate", "simulate", "drbsde", "value", "pde",
               "dynkin-oracle", "dpp-check", "crosscheck", "sqrt-check")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration document."""


# section -> key -> (type tag, default); the problem section is handled
# separately because its key set depends on the chosen preset.
_SCHEMA = {
    "grid": {
        "n_steps": ("int", 80),
        "n_nodes": ("int", 81),
        "x_min": ("float", -2.0),
        "x_max": ("float", 2.0),
        "x0": ("float", 0.0),
    },
    "mc": {
        "n_paths": ("int", 10000),
        "seed": ("int", 0),
        "samples": ("int", 1000),
    },
    "solver": {
        "order": ("str", "supinf"),
        "mode": ("str", "lattice"),
        "basis_degree": ("int", 3),
        "t_mid": ("float", 0.5),
        "trials": ("int", 100),
    },
    "output": {
        "dir": ("str", "out"),
    },
}

_SECTIONS = ("problem",) + tuple(_SCHEMA)


@dataclass
class RunConfig:
    preset: str = "dynkin-flat"
    problem_params: dict = field(default_factory=dict)
    n_steps: int = 80
    n_nodes: int = 81
    x_min: float = -2.0
    x_max: float = 2.0
    x0: float = 0.0
    n_paths: int = 10000
    seed: int = 0
    samples: int = 1000
    order: str = "supinf"
    mode: str = "lattice"
    basis_degree: int = 3
    t_mid: float = 0.5
    trials: int = 100
    out_dir: str = "out"


_FIELD_OF = {
    ("grid", "n_steps"): "n_steps", ("grid", "n_nodes"): "n_nodes",
    ("grid", "x_min"): "x_min", ("grid", "x_max"): "x_max",
    ("grid", "x0"): "x0",
    ("mc", "n_paths"): "n_paths", ("mc", "seed"): "seed",
    ("mc", "samples"): "samples",
    ("solver", "order"): "order", ("solver", "mode"): "mode",
    ("solver", "basis_degree"): "basis_degree",
    ("solver", "t_mid"): "t_mid", ("solver", "trials"): "trials",
    ("output", "dir"): "out_dir",
}


def _convert(raw, tag, lineno, key):
    if tag == "str":
        return raw
    if tag == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(
                f"line {lineno}: key {key!r} expects an integer, got {raw!r}"
            ) from None
    if tag == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(
                f"line {lineno}: key {key!r} expects a number, got {raw!r}"
            ) from None
    raise AssertionError(tag)


def _convert_problem_param(raw, key, preset, lineno):
    default = PRESETS[preset][key]
    if isinstance(default, str) or key == "h":
        # terminal spec may be a named function or a numeric constant
        try:
            return float(raw)
        except ValueError:
            return raw
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(
            f"line {lineno}: key {key!r} expects a number, got {raw!r}"
        ) from None


def parse_config(text: str) -> RunConfig:
    """Parse a configuration document; unknown keys and sections are fatal."""
    section = None
    pairs = {}  # (section, key) -> (raw value, line number)
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("[") and body.endswith("]"):
            section = body[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(
                    f"line {lineno}: unknown section [{section}]; "
                    f"known sections: {', '.join(_SECTIONS)}"
                )
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any section")
        key, raw = (part.strip() for part in body.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if (section, key) in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{section}]")
        pairs[(section, key)] = (raw, lineno)

    cfg = RunConfig()

    preset_raw = pairs.pop(("problem", "preset"), None)
    if preset_raw is not None:
        cfg.preset = preset_raw[0]
    if cfg.preset not in PRESETS:
        lineno = preset_raw[1] if preset_raw else 0
        raise ConfigError(
            f"line {lineno}: unknown preset {cfg.preset!r}; "
            f"known presets: {', '.join(sorted(PRESETS))}"
        )
    table = PRESETS[cfg.preset]
    params = {}
    for (section, key), (raw, lineno) in list(pairs.items()):
        if section != "problem":
            continue
        if key not in table:
            raise ConfigError(
                f"line {lineno}: unknown key {key!r} for preset "
                f"{cfg.preset!r}; documented keys: {sorted(table)}"
            )
        params[key] = _convert_problem_param(raw, key, cfg.preset, lineno)
        del pairs[(section, key)]
    cfg.problem_params = params

    for (section, key), (raw, lineno) in pairs.items():
        schema = _SCHEMA[section]
        if key not in schema:
            raise ConfigError(
                f"line {lineno}: unknown key {key!r} in [{section}]; "
                f"documented keys: {sorted(schema)}"
            )
        tag, _ = schema[key]
        setattr(cfg, _FIELD_OF[(section, key)], _convert(raw, tag, lineno, key))

    _validate_config(cfg)
    return cfg


def _validate_config(cfg: RunConfig):
    def bad(key, msg):
        raise ConfigError(f"key {key!r} {msg}")

    if cfg.n_steps < 1:
        bad("n_steps", f"must be >= 1, got {cfg.n_steps}")
    if cfg.n_nodes < 3:
        bad("n_nodes", f"must be >= 3, got {cfg.n_nodes}")
    if not cfg.x_min < cfg.x_max:
        bad("x_min", f"must be < x_max, got [{cfg.x_min}, {cfg.x_max}]")
    if not cfg.x_min <= cfg.x0 <= cfg.x_max:
        bad("x0", f"must lie in [x_min, x_max], got {cfg.x0}")
    if cfg.n_paths < 1:
        bad("n_paths", f"must be >= 1, got {cfg.n_paths}")
    if cfg.samples < 1:
        bad("samples", f"must be >= 1, got {cfg.samples}")
    if cfg.trials < 1:
        bad("trials", f"must be >= 1, got {cfg.trials}")
    if cfg.basis_degree < 0:
        bad("basis_degree", f"must be >= 0, got {cfg.basis_degree}")
    if cfg.order not in ("supinf", "infsup"):
        bad("order", f"must be supinf or infsup, got {cfg.order!r}")
    if cfg.mode not in ("lattice", "lsmc"):
        bad("mode", f"must be lattice or lsmc, got {cfg.mode!r}")
    q = cfg.problem_params.get("q")
    if q is not None and not (isinstance(q, float) and 1.0 < q <= 2.0):
        bad("q", f"must lie in (1, 2], got {q!r}")


def _fmt_value(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical document that reparses to an equal RunConfig."""
    lines = ["[problem]", f"preset = {cfg.preset}"]
    for key in sorted(cfg.problem_params):
        lines.append(f"{key} = {_fmt_value(cfg.problem_params[key])}")
    for section, schema in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key in schema:
            lines.append(f"{key} = {_fmt_value(getattr(cfg, _FIELD_OF[(section, key)]))}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _write_text(path: Path, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _csv(rows, header) -> str:
    lines = [header]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, float):
                cells.append(f"{v:.17g}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _write_manifest(out: Path, subcommand, cfg, threads, wall, extra=None):
    items = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "threads": threads,
        "wall_time_s": f"{wall:.3f}",
        "problem.preset": cfg.preset,
    }
    for key in sorted(cfg.problem_params):
        items[f"problem.{key}"] = _fmt_value(cfg.problem_params[key])
    for section, schema in _SCHEMA.items():
        for key in schema:
            items[f"{section}.{key}"] = _fmt_value(getattr(cfg, _FIELD_OF[(section, key)]))
    for k, v in (extra or {}).items():
        items[k] = v
    lines = [f"{k}={items[k]}" for k in items]
    _write_text(out / "run.txt", "\n".join(lines) + "\n")


def _problem(cfg):
    return make_preset(cfg.preset, cfg.problem_params)


def _lattice(cfg, prob):
    return build_lattice(prob, cfg.n_steps, cfg.x_min, cfg.x_max, cfg.n_nodes)


def _snap_t_mid(cfg, grid: TimeGrid) -> float:
    j = int(round((cfg.t_mid - grid.t0) / grid.dt))
    j = min(max(j, 1), grid.n_steps - 1)
    return float(grid.knots[j])


# ---------------------------------------------------------------------------
# subcommand bodies (return process exit status)
# ---------------------------------------------------------------------------

def _cmd_validate(cfg, out):
    prob = _problem(cfg)
    rep = validate_problem(prob, samples=cfg.samples, seed=cfg.seed)
    _write_text(out / "validation.csv", rep.to_csv())
    return (0 if rep.passed else 1), {"result.validation_passed": str(rep.passed).lower()}

def _cmd_simulate(cfg, out):
    prob = _problem(cfg)
    grid = TimeGrid(0.0, prob.horizon, cfg.n_steps)
    ens = simulate_brownian(grid, cfg.n_paths, prob.noise_dim, cfg.seed)
    mu = constant_controls(cfg.n_paths, cfg.n_steps)
    nu = constant_controls(cfg.n_paths, cfg.n_steps)
    states = euler_forward(prob, ens, np.full(prob.state_dim, cfg.x0), mu, nu)
    _write_text(out / "increments.csv", ens.to_csv())
    _write_text(out / "states.csv", states.to_csv())
    return 0, {}

def _cmd_drbsde(cfg, out):
    prob = _problem(cfg)
    if cfg.mode == "lattice":
        lat = _lattice(cfg, prob)
        sol = solve_drbsde_lattice(prob, lat)
        res_lo, res_hi = check_flat_off(sol, prob, lat)
    else:
        grid = TimeGrid(0.0, prob.horizon, cfg.n_steps)
        ens = simulate_brownian(grid, cfg.n_paths, prob.noise_dim, cfg.seed)
        mu = constant_controls(cfg.n_paths, cfg.n_steps)
        nu = constant_controls(cfg.n_paths, cfg.n_steps)
        states = euler_forward(prob, ens, np.full(prob.state_dim, cfg.x0), mu, nu)
        sol = solve_drbsde_lsmc(prob, states, mu, nu, degree=cfg.basis_degree)
        res_lo, res_hi = check_flat_off(sol, prob, states)
    _write_text(out / "drbsde.csv", sol.to_csv())
    extra = {"result.flat_off_lo": f"{res_lo:.17g}", "result.flat_off_hi": f"{res_hi:.17g}"}
    if sol.se_root is not None:
        extra["result.root_se"] = f"{sol.se_root:.17g}"
    return 0, extra

def _cmd_value(cfg, out):
    prob = _problem(cfg)
    lat = _lattice(cfg, prob)
    surf = value_backward_induction(prob, lat, cfg.order)
    _write_text(out / "surface.csv", surf.to_csv())
    return 0, {"result.root": f"{surf.root():.17g}"}

def _cmd_pde(cfg, out):
    prob = _problem(cfg)
    g = make_pde_grid(prob, cfg.n_steps, cfg.x_min, cfg.x_max, cfg.n_nodes)
    surf = solve_obstacle_pde(prob, g, cfg.order)
    resid = viscosity_residual(prob, g, surf, cfg.order)
    study = refinement_study(prob, cfg.order, cfg.n_steps, cfg.x_min,
                             cfg.x_max, cfg.n_nodes, levels=2, x0=cfg.x0)
    _write_text(out / "surface.csv", surf.to_csv())
    _write_text(out / "residual.csv", resid.to_csv())
    _write_text(out / "convergence.csv", study.to_csv())
    return 0, {"result.root": f"{surf.root():.17g}",
               "result.max_residual": f"{resid.max_abs:.17g}"}

def _cmd_dynkin_oracle(cfg, out):
    cases = dynkin_oracle_corpus(n_trees=max(cfg.trials, 20), seed=cfg.seed + 2024)
    rows = []
    worst = 0.0
    for i, case in enumerate(cases):
        rec = case.recursion_value()
        bf = case.brute_force_value()
        diff = abs(rec - bf)
        worst = max(worst, diff)
        rows.append((i, case.tree.depth, rec, bf, diff))
    _write_text(out / "oracle.csv",
                _csv(rows, "tree,depth,recursion_value,brute_force_value,abs_diff"))
    return (0 if worst <= 1e-12 else 1), {"result.worst_abs_diff": f"{worst:.17g}"}

def _cmd_dpp_check(cfg, out):
    prob = _problem(cfg)
    lat = _lattice(cfg, prob)
    t_mid = _snap_t_mid(cfg, lat.grid)
    rep = dpp_check(prob, lat, t_mid, cfg.order)
    rep2 = dpp_cross_resolution(prob, lat, t_mid, cfg.order)
    rows = [("matched", rep.direct, rep.composed, rep.gap),
            ("refined", rep2.direct, rep2.composed, rep2.gap)]
    _write_text(out / "dpp.csv", _csv(rows, "variant,direct,composed,gap"))
    return (0 if rep.gap <= 1e-12 else 1), {"result.matched_gap": f"{rep.gap:.17g}"}

def _cmd_crosscheck(cfg, out):
    prob = _problem(cfg)
    lat = _lattice(cfg, prob)
    g = make_pde_grid(prob, cfg.n_steps, cfg.x_min, cfg.x_max, cfg.n_nodes)
    rep = cross_check(prob, lat, g, cfg.order, x0=cfg.x0)
    rows = [(rep.lattice_root, rep.pde_root, rep.rel_gap)]
    _write_text(out / "crosscheck.csv", _csv(rows, "lattice_root,pde_root,rel_gap"))
    return (0 if rep.rel_gap <= 1e-10 else 1), {"result.rel_gap": f"{rep.rel_gap:.17g}"}

def _cmd_sqrt_check(cfg, out):
    rng = np.random.default_rng(cfg.seed)
    rows = []
    worst = 0.0
    for trial in range(cfg.trials):
        d = 1 + trial % 4
        cond = float(10.0 ** rng.uniform(0.0, 2.0))
        g = random_spd(rng, d, cond, scale=float(10.0 ** rng.uniform(-1.0, 1.0)))
        r = spd_sqrt_series(g)
        resid = float(np.linalg.norm(r @ r - g) / np.linalg.norm(g))
        worst = max(worst, resid)
        rows.append((trial, resid))
    _write_text(out / "sqrt.csv", _csv(rows, "trial,residual"))
    return (0 if worst <= 1e-8 else 1), {"result.worst_residual": f"{worst:.17g}"}


_BODIES = {
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "drbsde": _cmd_drbsde,
    "value": _cmd_value,
    "pde": _cmd_pde,
    "dynkin-oracle": _cmd_dynkin_oracle,
    "dpp-check": _cmd_dpp_check,
    "crosscheck": _cmd_crosscheck,
    "sqrt-check": _cmd_sqrt_check,
}


def run(subcommand: str, cfg: RunConfig, threads: int = 1) -> int:
    """Execute one subcommand; writes artifacts and the run manifest."""
    if subcommand not in _BODIES:
        raise ConfigError(
            f"unknown subcommand {subcommand!r}; choose from {', '.join(SUBCOMMANDS)}"
        )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    status, extra = _BODIES[subcommand](cfg, out)
    wall = time.perf_counter() - start
    _write_manifest(out, subcommand, cfg, threads, wall, extra)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="drgame",
        description="Backward game-value solvers with doubly reflected payoffs",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", default=None, help="configuration document")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker hint; never changes output")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 3 if exc.code not in (0, None) else 0

    try:
        if args.config is not None:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config!r}: {exc}")
            cfg = parse_config(text)
        else:
            cfg = RunConfig()
        if args.out is not None:
            cfg.out_dir = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        return run(args.subcommand, cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except ProblemError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
