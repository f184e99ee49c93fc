"""Command-line front end.

    bundleflow run      --config PATH [--out DIR] [--seed N] [--override KEY=VALUE ...]
    bundleflow validate PATH [--override KEY=VALUE ...]
    bundleflow resume   CHECKPOINT [--out DIR] [--override KEY=VALUE ...]
    bundleflow export   CHECKPOINT [--out DIR]

Exit status: 0 when every verdict passes (or the file is valid), 1 when a
verdict fails or a solver gives up, 2 on usage, configuration or checkpoint
errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import zipfile

import numpy as np

from .config import ConfigError, RunConfig, emit_config, parse_config
from .experiments import (
    ExperimentReport,
    run_blowdown,
    run_monotonicity,
    run_oracle_sweep,
    run_soliton_tracking,
    run_stability,
)
from .flow import StepCollapse
from .solitons import make_soliton, perturb
from .state import CheckpointError, load_checkpoint, save_checkpoint, validate

__all__ = ["main", "build_initial", "run_experiment"]

CHECKPOINT = "checkpoint.zip"
RESUMABLE = ("stability", "tracking")


class UsageError(Exception):
    pass


def build_initial(cfg: RunConfig):
    if cfg.initial_source == "checkpoint":
        return load_checkpoint(cfg.initial_checkpoint)
    spec = cfg.soliton_spec()
    state = make_soliton(spec, cfg.initial_t0)
    if cfg.experiment == "tracking":
        return state
    return perturb(state, cfg.initial_eps, seed=cfg.seed, modes=cfg.initial_modes)


def run_experiment(cfg: RunConfig, initial=None, origin=None, prior_records=None) -> ExperimentReport:
    """Dispatch on ``cfg.experiment``; the last three arguments continue a run."""
    spec = cfg.soliton_spec()
    control = cfg.step_control()
    every = cfg.run_checkpoint_every
    exp = cfg.experiment
    if exp == "oracle":
        return run_oracle_sweep(cfg.run_n_states, cfg.seed % 2**32, order=cfg.domain_order)
    if initial is None:
        initial = build_initial(cfg)
    if exp == "stability":
        return run_stability(spec, cfg.initial_eps, cfg.run_horizon, seed=cfg.seed,
                             t0=cfg.initial_t0, modes=cfg.initial_modes, control=control,
                             checkpoint_every=every, initial=initial, origin=origin,
                             prior_records=prior_records)
    if exp == "tracking":
        return run_soliton_tracking(spec, cfg.initial_t0, cfg.run_horizon, control=control,
                                    checkpoint_every=every, initial=initial, origin=origin,
                                    prior_records=prior_records)
    if exp == "monotonicity":
        return run_monotonicity(initial, cfg.run_horizon, cfg.run_functional, control=control,
                                checkpoint_every=every, tau_end=cfg.run_tau_end)
    if exp == "blowdown":
        scales = [s for s in cfg.run_scales if s <= cfg.run_horizon]
        return run_blowdown(initial, scales, reference=spec, control=control,
                            checkpoint_every=every)
    raise UsageError(f"unknown experiment {exp!r}")


def _write_outputs(report: ExperimentReport, cfg: RunConfig, out_dir: str) -> None:
    report.write(out_dir)
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(emit_config(cfg))
    traj = report.extras.get("trajectory")
    if traj is None:
        return
    meta = {
        "config": emit_config(cfg),
        "experiment": cfg.experiment,
        "origin": float(traj.origin).hex(),
        "checkpoint_every": traj.per_unit_log_t,
        # records up to and including the anchor, for continuing the series
        "columns": list(report.records[0]) if report.records else [],
        "rows": [list(r.values()) for r in report.records
                 if "t" in r and r["t"] <= traj.anchor.t],
    }
    save_checkpoint(os.path.join(out_dir, CHECKPOINT), traj.states[-1],
                    extra_states={"anchor": traj.anchor}, meta=meta)


def _print_report(report: ExperimentReport) -> int:
    for v in report.verdicts:
        print(v.line())
    return 0 if report.passed else 1


def _cmd_run(args) -> int:
    if not args.config:
        raise UsageError("run needs --config PATH")
    with open(args.config) as fh:
        text = fh.read()
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output.dir={_json_str(args.out)}")
    cfg = parse_config(text, overrides)
    report = run_experiment(cfg)
    _write_outputs(report, cfg, cfg.output_dir)
    return _print_report(report)


def _json_str(s: str) -> str:
    return json.dumps(s)


def _cmd_resume(args) -> int:
    path = args.path
    anchor, header = load_checkpoint(path, "anchor", with_meta=True)
    meta = header.get("meta", {})
    if "config" not in meta:
        raise CheckpointError("checkpoint carries no run configuration")
    overrides = list(args.override or [])
    if args.out is not None:
        overrides.append(f"output.dir={_json_str(args.out)}")
    cfg = parse_config(meta["config"], overrides, check_paths=False)
    if cfg.experiment not in RESUMABLE:
        raise UsageError(f"{cfg.experiment} runs cannot be resumed; rerun them")
    if not cfg.run_horizon > anchor.t:
        raise UsageError("resume horizon must exceed the checkpoint time")
    report = run_experiment(cfg, initial=anchor, origin=float.fromhex(meta["origin"]),
                            prior_records=[dict(zip(meta["columns"], row)) for row in meta["rows"]])
    _write_outputs(report, cfg, cfg.output_dir)
    return _print_report(report)


def _cmd_validate(args) -> int:
    path = args.path
    if zipfile.is_zipfile(path) or path.endswith(".zip"):
        names = _checkpoint_names(path)
        ok = True
        for name in names:
            rep = validate(load_checkpoint(path, name))
            status = "ok" if rep.ok else "INVALID"
            print(f"{name}: {status} min eig G {rep.min_eig_G:.3e}, min eig g {rep.min_eig_g:.3e}, "
                  f"seam defect {rep.seam_defect:.3e}")
            ok &= rep.ok
        return 0 if ok else 1
    with open(path) as fh:
        cfg = parse_config(fh.read(), args.override or [])
    print(f"config ok: {cfg.experiment} on {cfg.initial_soliton}")
    return 0


def _checkpoint_names(path):
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
        return list(header["states"])
    except (zipfile.BadZipFile, KeyError, OSError, ValueError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc


def export_state_csv(state, path) -> None:
    """One row per node: indices, coordinates, then every component of G, a, g."""
    dom = state.domain
    N, n = state.N, state.n
    cols = [f"i{k}" for k in range(dom.dim)] if dom.is_grid else []
    cols += [f"x{k}" for k in range(dom.dim)] if dom.is_grid else []
    cols += [f"G_{i}{j}" for i in range(N) for j in range(N)]
    cols += [f"a_{i}_{al}" for i in range(N) for al in range(n)]
    cols += [f"g_{a}{b}" for a in range(n) for b in range(n)]
    coords = dom.coordinates() if dom.is_grid else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", repr(float(state.t))])
        w.writerow(cols)
        for idx in np.ndindex(*dom.shape):
            row = list(idx) + [repr(float(c[idx])) for c in coords]
            row += [repr(float(x)) for x in np.ravel(state.G[idx])]
            row += [repr(float(x)) for x in np.ravel(state.a[idx])]
            row += [repr(float(x)) for x in np.ravel(state.g[idx])]
            w.writerow(row)


def _cmd_export(args) -> int:
    out = args.out or os.path.splitext(args.path)[0] + "-csv"
    os.makedirs(out, exist_ok=True)
    for name in _checkpoint_names(args.path):
        st = load_checkpoint(args.path, name)
        target = os.path.join(out, f"{name}.csv")
        export_state_csv(st, target)
        print(target)
    return 0


def _parser():
    p = argparse.ArgumentParser(prog="bundleflow",
                                description="Reduced Ricci flow on twisted torus bundles.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_path):
        if with_path:
            sp.add_argument("path")
        sp.add_argument("--config")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--override", action="append", metavar="KEY=VALUE")

    common(sub.add_parser("run", help="run the configured experiment"), False)
    common(sub.add_parser("validate", help="check a config file or a checkpoint"), True)
    common(sub.add_parser("resume", help="continue a run from its checkpoint"), True)
    common(sub.add_parser("export", help="dump checkpoint fields to CSV"), True)
    return p


_HANDLERS = {"run": _cmd_run, "validate": _cmd_validate, "resume": _cmd_resume,
             "export": _cmd_export}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, CheckpointError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StepCollapse as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
