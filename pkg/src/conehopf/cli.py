"""Batch command-line front-end: parse a config file, run one subcommand,
emit reproducible CSV/JSON artifacts.

Two runs with an identical config and seed produce byte-identical output
files; every row embeds the seed and a hash of the raw config bytes.
Exit codes: 0 success, 2 validation error, 3 solver/resource-cap error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    CapExceededError,
    InternalError,
    RadiusExhaustedError,
    UnboundedObjectiveError,
    ValidationError,
)
from .free_energy import mean_free_energy
from .hj_checker import GridSpec, convergence_report, residual_grid
from .hopf import (
    SolverConfig,
    hopf_diagonal_for_model,
    hopf_lax_1d,
    hopf_value,
    layered_reduced,
)
from .initial_condition import InitialCondition, psi_with_error, scalar_layer
from .model import load_model_dict, load_toml
from .output import config_hash, records_to_json, rows_to_csv, write_text

_COMMANDS = ("psi", "free-energy", "hopf", "hopf-diagonal", "layered",
             "residual", "converge", "hopflax-demo")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conehopf",
        description="Free energies of finite-rank tensor inference models "
                    "and their variational limits.",
    )
    parser.add_argument("command", choices=_COMMANDS)
    parser.add_argument("--config", type=Path, default=None,
                        help="model/run config file (TOML)")
    parser.add_argument("--out", type=Path, default=Path("."),
                        help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int,
                        default=max(1, os.cpu_count() or 1))
    parser.add_argument("--format", choices=("csv", "json", "both"),
                        default="both")
    return parser


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ValidationError(f"missing {where}.{key}")
    return section[key]


def _matrix(flat, k: int, where: str) -> np.ndarray:
    arr = np.asarray(flat, dtype=float)
    if arr.size != k * k:
        raise ValidationError(
            f"{where} must list K*K = {k * k} entries row-major, got {arr.size}"
        )
    m = arr.reshape(k, k)
    if np.abs(m - m.T).max(initial=0.0) > 1e-12 * (1.0 + np.abs(m).max()):
        raise ValidationError(f"{where} is not symmetric")
    return 0.5 * (m + m.T)


def _solver_config(cfg: dict) -> SolverConfig:
    section = cfg.get("solver", {})
    allowed = {
        "radius", "grid_resolution", "n_rotations", "multistarts",
        "inner_tol", "outer_tol", "inner_max_iter", "outer_max_iter",
        "rotation_seed",
    }
    unknown = set(section) - allowed
    if unknown:
        raise ValidationError(f"unknown solver option(s): {sorted(unknown)}")
    return SolverConfig(**section)


def _initial_condition(cfg: dict, prior, seed: int) -> InitialCondition:
    section = cfg.get("psi", {})
    mode = section.get("mode", "gauss-hermite")
    return InitialCondition(
        prior=prior, mode=mode, gh_nodes=int(section.get("nodes", 64)),
        mc_samples=int(section.get("samples", 20000)), mc_seed=seed,
    )


def _emit(out: Path, name: str, fmt: str, header: list[str], rows: list[list],
          json_obj) -> None:
    if fmt in ("csv", "both"):
        write_text(out / f"{name}.csv", rows_to_csv(header, rows))
    if fmt in ("json", "both"):
        write_text(out / f"{name}.json", records_to_json(json_obj))


def _h_columns(k: int) -> list[str]:
    return [f"h_{i}{j}" for i in range(k) for j in range(k)]


def _cmd_hopflax_demo(args, cfg, tag) -> None:
    closed = lambda t, x: x * x / (4.0 * t) if abs(x) <= 2.0 * t else abs(x) - t
    rows = []
    records = []
    for t in (0.25, 1.0):
        for x in np.linspace(-3.0, 3.0, 61):
            value = hopf_lax_1d(abs, t, float(x), lipschitz=1.0)
            ref = closed(t, float(x))
            rows.append([t, float(x), value, ref, abs(value - ref),
                         args.seed, tag])
            records.append({"t": t, "x": float(x), "value": value,
                            "closed_form": ref, "abs_error": abs(value - ref)})
            print(f"hopflax-demo: t={t:g} x={x:g} value={value:.12g}")
    header = ["t", "x", "value", "closed_form", "abs_error", "seed",
              "config_hash"]
    _emit(args.out, "hopflax-demo", args.format, header, rows,
          {"seed": args.seed, "config_hash": tag, "rows": records})


def _cmd_psi(args, cfg, tag) -> None:
    spec, prior = load_model_dict(cfg)
    section = cfg.get("psi", {})
    h_list = _require(section, "h_list", "psi")
    ic = _initial_condition(cfg, prior, args.seed)
    rows, records = [], []
    header = _h_columns(spec.k) + ["value", "std_error", "seed", "config_hash"]
    for flat in h_list:
        h = _matrix(flat, spec.k, "psi.h_list entry")
        value, se = psi_with_error(ic, h)
        cells = [float(v) for v in h.reshape(-1)]
        rows.append(cells + [value, se, args.seed, tag])
        records.append({"h": cells, "value": value, "std_error": se})
        print(f"psi: value={value:.12g} std_error={se:.3g}")
    _emit(args.out, "psi", args.format, header, rows,
          {"seed": args.seed, "config_hash": tag, "rows": records})


def _cmd_free_energy(args, cfg, tag) -> None:
    spec, prior = load_model_dict(cfg)
    section = cfg.get("free_energy", {})
    n_list = [int(n) for n in _require(section, "n_list", "free_energy")]
    t_list = [float(t) for t in _require(section, "t_list", "free_energy")]
    h_list = _require(section, "h_list", "free_energy")
    n_disorder = int(_require(section, "n_disorder", "free_energy"))
    rows, records = [], []
    header = (["n", "t"] + _h_columns(spec.k)
              + ["value", "std_error", "n_disorder", "seed", "config_hash"])
    for n in n_list:
        for t in t_list:
            for flat in h_list:
                h = _matrix(flat, spec.k, "free_energy.h_list entry")
                est = mean_free_energy(spec, prior, n, t, h, n_disorder,
                                       args.seed, threads=args.threads)
                cells = [float(v) for v in h.reshape(-1)]
                rows.append([n, t] + cells + [est.value, est.std_error,
                                              n_disorder, args.seed, tag])
                records.append(est.as_record())
                print(f"free-energy: n={n} t={t:g} value={est.value:.12g} "
                      f"+/- {est.std_error:.3g}")
    _emit(args.out, "free-energy", args.format, header, rows,
          {"seed": args.seed, "config_hash": tag, "rows": records})


def _cmd_hopf(args, cfg, tag) -> None:
    spec, prior = load_model_dict(cfg)
    section = cfg.get("hopf", {})
    t_list = [float(t) for t in _require(section, "t_list", "hopf")]
    h_list = _require(section, "h_list", "hopf")
    solver = _solver_config(cfg)
    ic = _initial_condition(cfg, prior, args.seed)
    rows, records = [], []
    header = (["t"] + _h_columns(spec.k)
              + ["value", "gap_estimate", "seed", "config_hash"])
    for t in t_list:
        for flat in h_list:
            h = _matrix(flat, spec.k, "hopf.h_list entry")
            result = hopf_value(ic, spec, t, h, solver)
            cells = [float(v) for v in h.reshape(-1)]
            rows.append([t] + cells + [result.value, result.gap_estimate,
                                       args.seed, tag])
            rec = result.as_record()
            rec.update({"t": t, "h": cells})
            records.append(rec)
            print(f"hopf: t={t:g} value={result.value:.12g} "
                  f"gap={result.gap_estimate:.3g}")
    _emit(args.out, "hopf", args.format, header, rows,
          {"seed": args.seed, "config_hash": tag, "rows": records})


def _cmd_hopf_diagonal(args, cfg, tag) -> None:
    spec, prior = load_model_dict(cfg)
    section = cfg.get("hopf_diagonal", {})
    t_list = [float(t) for t in _require(section, "t_list", "hopf_diagonal")]
    x_list = _require(section, "x_list", "hopf_diagonal")
    solver = _solver_config(cfg)
    ic = _initial_condition(cfg, prior, args.seed)
    rows, records = [], []
    header = (["t"] + [f"x_{i}" for i in range(spec.k)]
              + ["value", "gap_estimate", "seed", "config_hash"])
    for t in t_list:
        for flat in x_list:
            x = np.asarray(flat, dtype=float).reshape(-1)
            if x.shape != (spec.k,):
                raise ValidationError(
                    f"hopf_diagonal.x_list entry must have K = {spec.k} entries"
                )
            result = hopf_diagonal_for_model(ic, spec, t, x, solver)
            cells = [float(v) for v in x]
            rows.append([t] + cells + [result.value, result.gap_estimate,
                                       args.seed, tag])
            records.append({"t": t, "x": cells, "value": result.value,
                            "x_outer": [float(v) for v in result.x_outer],
                            "x_inner": [float(v) for v in result.x_inner],
                            "gap_estimate": result.gap_estimate})
            print(f"hopf-diagonal: t={t:g} value={result.value:.12g}")
    _emit(args.out, "hopf-diagonal", args.format, header, rows,
          {"seed": args.seed, "config_hash": tag, "rows": records})


def _cmd_layered(args, cfg, tag) -> None:
    section = cfg.get("layered", {})
    t_list = [float(t) for t in _require(section, "t_list", "layered")]
    layer_defs = _require(section, "layers", "layered")
    if len(layer_defs) < 2:
        raise ValidationError("layered.layers must define at least 2 layers")
    psis = []
    for i, layer in enumerate(layer_defs):
        atoms = _require(layer, "atoms", f"layered.layers[{i}]")
        weights = _require(layer, "weights", f"layered.layers[{i}]")
        psis.append(scalar_layer(atoms, weights))
    solver = _solver_config(cfg)
    rows, records = [], []
    header = ["t", "value", "seed", "config_hash"]
    for t in t_list:
        value = layered_reduced(t, psis, solver)
        rows.append([t, value, args.seed, tag])
        records.append({"t": t, "value": value})
        print(f"layered: t={t:g} value={value:.12g}")
    _emit(args.out, "layered", args.format, header, rows,
          {"seed": args.seed, "config_hash": tag, "rows": records})


def _cmd_residual(args, cfg, tag) -> None:
    spec, prior = load_model_dict(cfg)
    section = cfg.get("residual", {})
    t_vals = np.linspace(float(_require(section, "t_min", "residual")),
                         float(_require(section, "t_max", "residual")),
                         int(_require(section, "n_t", "residual")))
    h_vals = np.linspace(float(_require(section, "h_min", "residual")),
                         float(_require(section, "h_max", "residual")),
                         int(_require(section, "n_h", "residual")))
    delta = float(section.get("delta", 1e-3))
    tolerance = float(section.get("tolerance", 1e-3))
    grid = GridSpec(t_values=t_vals,
                    h_points=[c * np.eye(spec.k) for c in h_vals],
                    delta=delta)
    solver = _solver_config(cfg)
    ic = _initial_condition(cfg, prior, args.seed)
    f = lambda t, h: hopf_value(ic, spec, t, h, solver).value
    report = residual_grid(f, spec, grid, tolerance)
    rows = []
    header = (["t"] + _h_columns(spec.k)
              + ["residual", "residual_half", "kink", "seed", "config_hash"])
    for p in report.points:
        rows.append([p.t] + [float(v) for v in p.h.reshape(-1)]
                    + [p.residual, p.residual_half, p.kink, args.seed, tag])
    obj = report.as_record()
    obj.update({"seed": args.seed, "config_hash": tag})
    _emit(args.out, "residual", args.format, header, rows, obj)
    print(f"residual: pass_fraction={report.pass_fraction:.3f} "
          f"kink_fraction={report.kink_fraction:.3f}")


def _cmd_converge(args, cfg, tag) -> None:
    spec, prior = load_model_dict(cfg)
    section = cfg.get("converge", {})
    n_list = [int(n) for n in _require(section, "n_list", "converge")]
    t = float(_require(section, "t", "converge"))
    h = _matrix(_require(section, "h", "converge"), spec.k, "converge.h")
    n_disorder = int(_require(section, "n_disorder", "converge"))
    solver = _solver_config(cfg)
    ic = _initial_condition(cfg, prior, args.seed)
    report = convergence_report(spec, prior, t, h, n_list, n_disorder,
                                args.seed, solver, threads=args.threads, ic=ic)
    rows = []
    header = ["n", "estimate", "std_error", "hopf", "gap", "seed",
              "config_hash"]
    for r in report.rows:
        rows.append([r.n, r.estimate, r.std_error, r.hopf, r.gap, args.seed,
                     tag])
        print(f"converge: n={r.n} estimate={r.estimate:.12g} "
              f"gap={r.gap:.3g}")
    obj = report.as_record()
    obj.update({"seed": args.seed, "config_hash": tag})
    _emit(args.out, "converge", args.format, header, rows, obj)


_DISPATCH = {
    "psi": _cmd_psi,
    "free-energy": _cmd_free_energy,
    "hopf": _cmd_hopf,
    "hopf-diagonal": _cmd_hopf_diagonal,
    "layered": _cmd_layered,
    "residual": _cmd_residual,
    "converge": _cmd_converge,
    "hopflax-demo": _cmd_hopflax_demo,
}


def run(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        raw = b""
        cfg: dict = {}
        if args.config is not None:
            if not args.config.exists():
                raise ValidationError(f"config file {args.config} does not exist")
            raw = args.config.read_bytes()
            cfg = load_toml(args.config)
        elif args.command != "hopflax-demo":
            raise ValidationError(f"{args.command} requires --config")
        if args.threads < 1:
            raise ValidationError("threads must be >= 1")
        _DISPATCH[args.command](args, cfg, config_hash(raw))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CapExceededError, UnboundedObjectiveError, RadiusExhaustedError,
            InternalError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
