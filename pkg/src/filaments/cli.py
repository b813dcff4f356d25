"""Command-line entry point.

``filaments <subcommand> --config run.toml --out DIR`` runs one solver or
study and writes ``manifest.json`` plus the subcommand's outputs into DIR.
The config is a flat TOML file; unknown keys are rejected.  Exit codes:
0 success, 1 validation error, 2 non-finite state, 3 Picard
non-contraction.  Failures print one ``filaments-error code=.. kind=..
detail=..`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import _accel
from .geometry import NonFiniteError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("filaments")

SUBCOMMANDS = ("simulate", "picard", "verify-pde", "meanfield", "contdep", "chaos", "check-kernel")

REQUIRED = object()

# key -> (type, default, help); REQUIRED marks keys needed by the subcommands in NEEDS
SCHEMA = {
    "kernel": (str, REQUIRED, "mollified_biot_savart | gaussian_rotor | zero"),
    "delta": (float, 0.5, "Biot-Savart mollification radius"),
    "length": (float, 1.0, "Gaussian rotor length scale"),
    "dim": (int, 3, "space dimension (Gaussian rotor and zero kernel)"),
    "geometry": (str, "law", "law | ring | file"),
    "geometry_file": (str, "", "family CSV (with JSON sidecar) when geometry = file"),
    "N": (int, 3, "number of filaments drawn when geometry = law"),
    "M": (int, 64, "samples per curve"),
    "ring_radius": (float, 1.0, "radius of the single ring when geometry = ring"),
    "law": (str, "circle", "circle | fourier"),
    "center_lo": (list, [-1.0, -1.0, -1.0], "lower corner of the center box"),
    "center_hi": (list, [1.0, 1.0, 1.0], "upper corner of the center box"),
    "radius_min": (float, 0.5, "smallest circle radius"),
    "radius_max": (float, 1.5, "largest circle radius"),
    "tilt": (float, 0.0, "largest polar angle of circle normals (3D)"),
    "amplitude": (float, 1.0, "Fourier loop amplitude"),
    "order": (int, 8, "Fourier loop truncation order"),
    "decay": (float, 3.0, "Fourier coefficient decay exponent"),
    "T": (float, REQUIRED, "time horizon"),
    "dt": (float, REQUIRED, "time step"),
    "window": (float, 0.0, "Picard window; 0 picks the a-priori window"),
    "tol": (float, 1e-10, "Picard increment tolerance in the dictionary metric"),
    "max_iter": (int, 50, "Picard iterations per window before halving"),
    "track_jacobians": (bool, False, "advance flow Jacobians and write trace.csv"),
    "snapshot_stride": (int, 0, "snapshot every n steps; 0 writes first and last"),
    "dict_L": (int, 64, "number of dictionary test fields"),
    "dict_features": (int, 8, "Fourier features per test field"),
    "dict_freq_scale": (float, 2.0, "dictionary frequency scale"),
    "dict_diameter": (float, 4.0, "domain diameter for the frequency scale"),
    "dict_seed": (int, 0, "dictionary seed"),
    "Ns": (list, [8, 16, 32, 64, 128], "study filament counts"),
    "trials": (int, 30, "trials per N"),
    "N_ref": (int, 1024, "reference system size"),
    "tagged": (int, 2, "tagged filaments per run for e1"),
    "fields": (list, [0, 1], "dictionary indices of the chaos test fields"),
    "scales": (list, [0.1, 0.01, 0.001], "perturbation scales"),
    "perturbation": (str, "translation", "translation | deformation"),
    "solver": (str, "simulate", "path used by verify-pde: simulate | picard"),
    "seed": (int, 0, "master seed"),
    "threads": (int, 0, "compiled-loop threads; 0 uses all"),
}

NEEDS = {
    "simulate": ("kernel", "T", "dt"),
    "picard": ("kernel", "T", "dt"),
    "verify-pde": ("kernel", "T", "dt"),
    "meanfield": ("kernel", "T", "dt"),
    "contdep": ("kernel", "T", "dt"),
    "chaos": ("kernel", "T", "dt"),
    "check-kernel": ("kernel",),
}

POSITIVE = ("delta", "length", "M", "ring_radius", "radius_min", "radius_max", "amplitude", "order",
            "T", "dt", "tol", "max_iter", "dict_L", "dict_features", "dict_freq_scale",
            "dict_diameter", "trials", "N_ref", "tagged", "N", "dim")


class ConfigError(ValueError):
    def __init__(self, kind, detail, key=None):
        super().__init__(detail)
        self.kind = kind
        self.key = key


def _coerce(key, value):
    typ = SCHEMA[key][0]
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if typ is bool and isinstance(value, bool):
        return value
    if typ is str and isinstance(value, str):
        return value
    if typ is list and isinstance(value, list):
        return value
    raise ConfigError("bad_type", f"key {key} expects {typ.__name__}, got {value!r}", key)


def resolve_config(raw: dict, subcommand: str) -> dict:
    """Merge ``raw`` with defaults; reject unknown, missing or invalid keys."""
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError("unknown_key", f"unknown config key {unknown[0]}", unknown[0])
    cfg = {}
    for key, (_, default, _) in SCHEMA.items():
        if key in raw:
            cfg[key] = _coerce(key, raw[key])
        elif default is REQUIRED:
            if key in NEEDS[subcommand]:
                raise ConfigError("missing_key", f"missing required key {key}", key)
            cfg[key] = None
        else:
            cfg[key] = default
    for key in POSITIVE:
        if cfg[key] is not None and not cfg[key] > 0:
            raise ConfigError("invalid_value", f"key {key} must be positive, got {cfg[key]}", key)
    if cfg["window"] < 0 or cfg["snapshot_stride"] < 0 or cfg["threads"] < 0 or cfg["seed"] < 0:
        raise ConfigError("invalid_value", "window, snapshot_stride, threads and seed must be >= 0")
    if cfg["geometry"] not in ("law", "ring", "file"):
        raise ConfigError("invalid_value", f"key geometry must be law, ring or file", "geometry")
    if cfg["geometry"] == "file" and not cfg["geometry_file"]:
        raise ConfigError("missing_key", "missing required key geometry_file", "geometry_file")
    if cfg["T"] is not None and cfg["dt"] is not None:
        steps = round(cfg["T"] / cfg["dt"])
        if steps < 1 or abs(steps * cfg["dt"] - cfg["T"]) > 1e-9 * max(1.0, cfg["T"]):
            raise ConfigError("invalid_value", "T must be an integer multiple of dt", "dt")
    return cfg


def load_config(path, subcommand):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as err:
        raise ConfigError("io", f"cannot read config {path}: {err.strerror}")
    except tomllib.TOMLDecodeError as err:
        raise ConfigError("parse", f"config {path}: {err}")
    return resolve_config(raw, subcommand)


def _kernel(cfg):
    from .kernels import make_kernel

    kind = cfg["kernel"]
    if kind == "mollified_biot_savart":
        return make_kernel(kind, delta=cfg["delta"])
    if kind == "gaussian_rotor":
        return make_kernel(kind, length=cfg["length"], dim=cfg["dim"])
    if kind == "zero":
        return make_kernel(kind, dim=cfg["dim"])
    raise ConfigError("invalid_value", f"unknown kernel {kind}", "kernel")


def _law(cfg, dim):
    from .experiments import RandomCurveLaw

    lo, hi = cfg["center_lo"], cfg["center_hi"]
    if len(lo) != dim or len(hi) != dim:
        raise ConfigError("invalid_value", f"center_lo and center_hi need {dim} entries", "center_lo")
    return RandomCurveLaw(kind=cfg["law"], dim=dim, center_lo=tuple(map(float, lo)),
                          center_hi=tuple(map(float, hi)),
                          radius=(cfg["radius_min"], cfg["radius_max"]), tilt=cfg["tilt"],
                          amplitude=cfg["amplitude"], order=cfg["order"], decay=cfg["decay"])


def _family(cfg, dim):
    from .experiments import sample_family
    from .geometry import CurveFamily
    from .io import read_family

    if cfg["geometry"] == "file":
        fam = read_family(cfg["geometry_file"])
    elif cfg["geometry"] == "ring":
        s = 2 * np.pi * np.arange(cfg["M"]) / cfg["M"]
        pts = np.zeros((1, cfg["M"], dim))
        pts[0, :, 0] = cfg["ring_radius"] * np.cos(s)
        pts[0, :, 1] = cfg["ring_radius"] * np.sin(s)
        fam = CurveFamily(pts, np.ones(1), True)
    else:
        fam = sample_family(_law(cfg, dim), cfg["N"], cfg["M"], seed=cfg["seed"])
    if fam.dim != dim:
        raise ConfigError("invalid_value", f"geometry dimension {fam.dim} does not match kernel {dim}")
    return fam


def _dictionary(cfg, dim):
    from .currents import TestFieldDictionary

    return TestFieldDictionary.random(dim, L=cfg["dict_L"], features=cfg["dict_features"],
                                      freq_scale=cfg["dict_freq_scale"],
                                      diameter=cfg["dict_diameter"], seed=cfg["dict_seed"])


def _fmt(v):
    return f"{float(v):.17g}"


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _path_outputs(out, cfg, path, k, extra=None):
    from .currents import mass_norm_upper
    from .experiments import _jsonable
    from .flow import flow_bounds_check, write_trace
    from .io import write_json, write_snapshots
    from .solver import growth_check

    steps = write_snapshots(out, path, cfg["snapshot_stride"])
    mass = [mass_norm_upper(path.state(n)) for n in range(len(path))]
    growth = growth_check(path, k)
    report = dict(steps=len(path) - 1, T=float(path.times[-1]), snapshots=steps,
                  mass_initial=mass[0], mass_final=mass[-1], growth_ok=growth.ok,
                  max_displacement=float(np.linalg.norm(path.positions[-1] - path.positions[0],
                                                        axis=-1).max()))
    if path.trace is not None:
        fb = flow_bounds_check(path, k)
        write_trace(out / "trace.csv", fb)
        report.update(flow_bound_ok=fb.ok, flow_bound_max_ratio=fb.max_ratio,
                      det_min=float(fb.det_min.min()), det_max=float(fb.det_max.max()))
    if extra:
        report.update(extra)
    write_json(out / "report.json", _jsonable(report))
    _write_rows(out / "report.csv", ["step", "time", "mass_upper"],
                [(n, path.times[n], mass[n]) for n in range(len(path))])
    return report


def cmd_simulate(cfg, out):
    from .solver import simulate_filaments

    k = _kernel(cfg)
    fam = _family(cfg, k.dim)
    path = simulate_filaments(fam, k, cfg["T"], cfg["dt"], track_jacobians=cfg["track_jacobians"])
    return _path_outputs(out, cfg, path, k)


def cmd_picard(cfg, out):
    from .currents import FilamentCurrent
    from .solver import PicardConfig, picard_solve

    k = _kernel(cfg)
    fam = _family(cfg, k.dim)
    pc = PicardConfig(cfg["T"], cfg["dt"], window=cfg["window"] or None, max_iter=cfg["max_iter"],
                      tol=cfg["tol"], dictionary=_dictionary(cfg, k.dim),
                      track_jacobians=cfg["track_jacobians"])
    res = picard_solve(FilamentCurrent(fam), k, pc)
    rep = _path_outputs(out, cfg, res.path, k, dict(
        windows=len(res.windows), halvings=res.halvings, iterations=res.iterations,
        max_iterations=max(res.iterations)))
    _write_rows(out / "increments.csv", ["window", "t_start", "iteration", "increment"],
                [(w, float(res.windows[w][0]), i + 1, inc)
                 for w, incs in enumerate(res.increments) for i, inc in enumerate(incs)])
    return rep


def cmd_verify_pde(cfg, out):
    from .currents import FilamentCurrent, write_field_values
    from .experiments import _jsonable
    from .io import write_json
    from .solver import PicardConfig, picard_solve, residual_order, simulate_filaments, weak_residual

    k = _kernel(cfg)
    fam = _family(cfg, k.dim)
    D = _dictionary(cfg, k.dim)
    reports = []
    for dt in (cfg["dt"], cfg["dt"] / 2):
        if cfg["solver"] == "picard":
            pc = PicardConfig(cfg["T"], dt, window=cfg["window"] or None, max_iter=cfg["max_iter"],
                              tol=cfg["tol"], dictionary=D)
            path = picard_solve(FilamentCurrent(fam), k, pc).path
        elif cfg["solver"] == "simulate":
            path = simulate_filaments(fam, k, cfg["T"], dt)
        else:
            raise ConfigError("invalid_value", "key solver must be simulate or picard", "solver")
        reports.append(weak_residual(path, k, D))
    coarse, fine = reports
    order = residual_order(coarse, fine) if fine.max_abs > 0 else math.inf
    per_field = np.abs(coarse.values).max(axis=0)
    write_field_values(out / "report.csv", per_field)
    report = dict(max_abs=coarse.max_abs, max_abs_half_dt=fine.max_abs,
                  ratio=(coarse.max_abs / fine.max_abs) if fine.max_abs > 0 else math.inf,
                  order=order, divergence_free=k.divergence_free, L=D.L)
    write_json(out / "report.json", _jsonable(report))
    return report


def _study_outputs(out, rep):
    rep.write_json(out / "report.json")
    rep.write_csv(out / "report.csv")
    return rep.summary


def cmd_meanfield(cfg, out):
    from .experiments import meanfield_study

    k = _kernel(cfg)
    rep = meanfield_study(_law(cfg, k.dim), cfg["Ns"], k, cfg["T"], cfg["dt"], _dictionary(cfg, k.dim),
                          M=cfg["M"], trials=cfg["trials"], N_ref=cfg["N_ref"], tagged=cfg["tagged"],
                          seed=cfg["seed"])
    return _study_outputs(out, rep)


def cmd_contdep(cfg, out):
    from .currents import FilamentCurrent
    from .experiments import contdep_study, perturbations

    k = _kernel(cfg)
    fam = _family(cfg, k.dim)
    scales = [float(s) for s in cfg["scales"]]
    perturbed = perturbations(fam, scales, kind=cfg["perturbation"], seed=cfg["seed"])
    rep = contdep_study(FilamentCurrent(fam), perturbed, k, cfg["T"], cfg["dt"],
                        _dictionary(cfg, k.dim), scales=scales)
    return _study_outputs(out, rep)


def cmd_chaos(cfg, out):
    from .experiments import chaos_study

    k = _kernel(cfg)
    rep = chaos_study(_law(cfg, k.dim), cfg["Ns"], k, cfg["T"], cfg["dt"], _dictionary(cfg, k.dim),
                      fields=cfg["fields"], trials=cfg["trials"], M=cfg["M"], N_ref=cfg["N_ref"],
                      seed=cfg["seed"])
    return _study_outputs(out, rep)


def cmd_check_kernel(cfg, out):
    from .experiments import _jsonable
    from .io import write_json
    from .kernels import audit_kernel

    k = _kernel(cfg)
    report = dict(kernel=k.spec, **audit_kernel(k, seed=cfg["seed"]))
    write_json(out / "report.json", _jsonable(report))
    for key, val in report.items():
        print(f"{key}: {val}")
    if not report["passed"]:
        raise ConfigError("check_failed", "kernel audit failed")
    return report


COMMANDS = {
    "simulate": cmd_simulate,
    "picard": cmd_picard,
    "verify-pde": cmd_verify_pde,
    "meanfield": cmd_meanfield,
    "contdep": cmd_contdep,
    "chaos": cmd_chaos,
    "check-kernel": cmd_check_kernel,
}


def build_parser():
    p = argparse.ArgumentParser(prog="filaments", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS)
    p.add_argument("--config", help="flat TOML run configuration")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, help="thread count, 0 = all (overrides the config)")
    p.add_argument("--replay", help="re-run from a manifest.json")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(code, kind, detail):
    detail = " ".join(str(detail).split())
    print(f"filaments-error code={code} kind={kind} detail={detail}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    from .io import read_manifest, write_manifest
    from .solver import NonContractionError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.replay:
            try:
                manifest = read_manifest(args.replay)
            except (OSError, ValueError) as err:
                raise ConfigError("io", f"cannot read manifest {args.replay}: {err}")
            sub = manifest.get("subcommand")
            if sub not in SUBCOMMANDS or args.subcommand not in (None, sub):
                raise ConfigError("invalid_value", f"manifest subcommand {sub!r} is not usable")
            raw = dict(manifest.get("config", {}))
        else:
            sub = args.subcommand
            if sub is None:
                raise ConfigError("missing_subcommand", f"expected one of {', '.join(SUBCOMMANDS)}")
            if not args.config:
                raise ConfigError("missing_option", "--config is required")
            raw = None
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("invalid_value", "--seed must be an unsigned 64-bit integer", "seed")
        if raw is None:
            cfg = load_config(args.config, sub)
        else:
            cfg = resolve_config({k: v for k, v in raw.items() if v is not None}, sub)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads is not None:
            if args.threads < 0:
                raise ConfigError("invalid_value", "--threads must be >= 0", "threads")
            cfg["threads"] = args.threads
        if not args.out:
            raise ConfigError("missing_option", "--out is required")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        used = _accel.set_threads(cfg["threads"])
        write_manifest(out, sub, cfg, threads_used=used)
        COMMANDS[sub](cfg, out)
    except ConfigError as err:
        return _fail(1, err.kind, err)
    except NonFiniteError as err:
        return _fail(2, "non_finite", err)
    except NonContractionError as err:
        return _fail(3, "non_contraction", err)
    except (ValueError, OSError) as err:
        return _fail(1, "invalid_input", err)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
