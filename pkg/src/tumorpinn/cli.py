"""Command-line front end: ``tumorpinn <subcommand> --help`` for details.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, obsdata, solver, trainer
from .errors import ConfigurationError, DataError, ModeError, NumericalError
from .net import CONSTANT_V, SPATIAL_V1V2, V_AND_A, PhysicalParams

log = logging.getLogger("tumorpinn")


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _pairs(text: str) -> list[tuple[float, float]]:
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            eps, sigma = (float(v) for v in item.split(":"))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"expected eps:sigma pairs, got {item!r}") from exc
        out.append((eps, sigma))
    return out


def _meta(args, extra: dict | None = None) -> dict:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    digest = hashlib.sha256(json.dumps(flags, sort_keys=True, default=str).encode()).hexdigest()[:16]
    return {"tool": f"tumorpinn {__version__}", "config_hash": digest, "command": args.command, **(extra or {})}


def _write_csv(path: Path, header: dict, columns, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return path


def _phys_from_args(args) -> PhysicalParams:
    if getattr(args, "final", None):
        return trainer.read_final(args.final)
    if args.v1 is not None or args.v2 is not None:
        if args.v1 is None or args.v2 is None:
            raise UsageError("--v1 and --v2 must be given together")
        return PhysicalParams(SPATIAL_V1V2, (args.v1, args.v2))
    if args.v is None:
        raise UsageError("give --v, --v1/--v2 or --final")
    if args.a is not None:
        return PhysicalParams(V_AND_A, (args.v, args.a))
    return PhysicalParams(CONSTANT_V, (args.v,))


def _train_config(args) -> trainer.TrainConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} not found")
        config = trainer.load_config(path)
    else:
        config = trainer.preset(args.preset or "synthetic-v2.0")
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides.update(init_seed=args.seed, sample_seed=args.seed + 1, data_seed=args.seed + 2,
                         noise_seed=args.seed + 3)
    if getattr(args, "guess", None):
        overrides["guess"] = tuple(args.guess)
    if getattr(args, "data", None):
        overrides["data_file"] = args.data
    if getattr(args, "log_every", None):
        overrides["log_every"] = args.log_every
    return config.replace(**overrides) if overrides else config


# -- subcommands ------------------------------------------------------------------------

def cmd_generate(args) -> int:
    phys = _phys_from_args(args)
    times = tuple(args.times) if args.times else tuple(np.round(np.linspace(0, args.t_end, 11), 12))
    config = trainer.solve_config_for(phys, times)
    grid = solver.Grid2D(args.nx, args.nx)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fields = solver.solve(config, grid)
    header = _meta(args)
    for f in fields:
        stem = f"snapshot_t{f.t:.4f}"
        if args.format == "csv":
            solver.write_snapshot_csv(f, out / f"{stem}.csv", config, header)
        else:
            solver.write_snapshot_binary(f, out / f"{stem}.f64", config, header)
    obs = solver.synthetic_dataset(config, grid, args.n_data, args.seed, fields=fields)
    if args.noise_eps > 0:
        obs = solver.add_noise(obs, args.noise_eps, args.noise_sigma, args.seed + 1)
    path = obsdata.write_observations_csv(obs, out / "dataset.csv", header)
    print(f"wrote {len(fields)} snapshots and {len(obs.values)} data rows to {path}")
    return 0


def _print_final(result: trainer.TrainResult):
    names = result.phys.names
    print(" ".join(f"{n}={v:.6g}" for n, v in zip(names, result.phys.values)))


def cmd_train(args) -> int:
    config = _train_config(args)
    result = trainer.train(config, out_dir=args.out, resume=args.resume)
    _print_final(result)
    print(f"trajectory: {Path(args.out) / 'trajectory.csv'}")
    return 0


def cmd_multi_start(args) -> int:
    config = _train_config(args)
    if not args.guesses:
        raise UsageError("--guesses must list at least one value")
    guesses = [(g,) if len(config.guess) == 1 else (g, *config.guess[1:]) for g in args.guesses]
    finals = trainer.multi_start(config, guesses, workers=args.workers)
    rows = [(float(g[0]), *map(float, p.values)) for g, p in zip(guesses, finals)]
    first = np.array([p.values[0] for p in finals])
    spread = float(first.max() - first.min())
    header = _meta(args, {"spread": repr(spread)})
    path = _write_csv(Path(args.out) / "multi_start.csv", header, ["guess", *finals[0].names], rows)
    for r in rows:
        print(" ".join(f"{x:.6g}" for x in r))
    print(f"spread of {finals[0].names[0]}: {spread:.4g}  ({path})")
    return 0


def cmd_noise_sweep(args) -> int:
    pairs = args.pairs if args.pairs is not None else list(trainer.NOISE_GRID)
    if not pairs:
        raise UsageError("noise sweep needs at least one eps:sigma pair")
    base = trainer.preset("noise-e0.5-s0.2").replace(v_true=args.v_true)
    if args.epochs is not None:
        base = base.replace(epochs=args.epochs)
    if args.seed is not None:
        base = base.replace(init_seed=args.seed, sample_seed=args.seed + 1, data_seed=args.seed + 2,
                            noise_seed=args.seed + 3)
    out = Path(args.out)
    header = _meta(args)
    summary = []
    for eps, sigma in pairs:
        config = base.replace(noise_eps=eps, noise_sigma=sigma)
        result = trainer.train(config, out_dir=out / f"e{eps:g}-s{sigma:g}")
        rows = [(r.epoch, r.params[0], abs(r.params[0] - args.v_true) / args.v_true) for r in result.records]
        _write_csv(out / f"error_e{eps:g}_s{sigma:g}.csv", header, ["epoch", "v", "relative_error"], rows)
        summary.append((eps, sigma, rows[-1][1], rows[-1][2]))
        print(f"eps={eps:g} sigma={sigma:g}: v={rows[-1][1]:.6g} relative error {100 * rows[-1][2]:.3f}%")
    _write_csv(out / "summary.csv", header, ["eps", "sigma", "v", "relative_error"], summary)
    for eps in sorted({e for e, *_ in summary}):
        errs = [err for e, _, _, err in sorted(summary) if e == eps]
        if len(errs) > 1:
            mono = all(b >= a for a, b in zip(errs, errs[1:]))
            print(f"eps={eps:g}: error {'non-decreasing' if mono else 'NOT monotone'} in sigma")
    return 0


def cmd_predict(args) -> int:
    phys = _phys_from_args(args)
    times = args.times or [0.875, 1.0]
    grid = solver.Grid2D(args.nx, args.nx)
    series = obsdata.read_radius_csv(args.radii) if args.radii else obsdata.builtin_radius_table()
    rows = []
    for t, r in trainer.predict_forward(phys, times, grid, args.threshold):
        try:
            obs = series.radius_at(t)
            rows.append((t, r, obs, obsdata.relative_error(r, obs)))
        except DataError:
            rows.append((t, r, "", ""))
    print("t,radius,observed,relative_error")
    for t, r, o, e in rows:
        print(f"{t:g},{r:.6g},{o if o == '' else f'{o:g}'},{e if e == '' else f'{100 * e:.3f}%'}")
    if args.out:
        _write_csv(Path(args.out), _meta(args), ["t", "radius", "observed", "relative_error"], rows)
    return 0


def cmd_radius(args) -> int:
    path = Path(args.snapshot)
    if not path.exists():
        raise FileNotFoundError(f"snapshot {path} not found")
    field = solver.read_snapshot_binary(path)
    print(f"{field.t:g},{obsdata.extract_radius(field, args.threshold):.6g}")
    return 0


def cmd_validate(args) -> int:
    from . import validate
    ok = validate.run_all(seed=args.seed or 0, verbose=True)
    return 0 if ok else 1


# -- parser -------------------------------------------------------------------------------

def _add_phys(p):
    p.add_argument("--v", type=float, help="constant proliferation rate")
    p.add_argument("--v1", type=float, help="spatial mode: constant part")
    p.add_argument("--v2", type=float, help="spatial mode: coefficient of sin(r)")
    p.add_argument("--a", type=float, help="initial plateau height (default 1)")


def _add_train(p, guess=True):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(trainer.presets()), help="named experiment")
    src.add_argument("--config", help="key = value config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--log-every", type=int)
    p.add_argument("--data", help="observations CSV (t,x,y,value or t,x,y,label)")
    if guess:
        p.add_argument("--guess", type=_floats, help="initial physical parameters, comma separated")
    p.add_argument("--out", default="run", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tumorpinn", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"tumorpinn {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="forward-solve and sample a synthetic dataset")
    _add_phys(p)
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--times", type=_floats, help="snapshot times (default 11 evenly spaced)")
    p.add_argument("--n-data", type=int, default=200)
    p.add_argument("--nx", type=int, default=201)
    p.add_argument("--noise-eps", type=float, default=0.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--format", choices=("csv", "binary"), default="binary")
    p.add_argument("--out", default="generated")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one configuration")
    _add_train(p)
    p.add_argument("--resume", help="checkpoint written by an earlier run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("multi-start", help="train from several initial guesses")
    _add_train(p, guess=False)
    p.add_argument("--guesses", type=_floats, default=[1, 2, 3, 4, 5])
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_multi_start)

    p = sub.add_parser("noise-sweep", help="train against noisy synthetic data for several (eps, sigma)")
    p.add_argument("--pairs", type=_pairs, help="eps:sigma list, e.g. 0.5:0.2,0.5:0.5")
    p.add_argument("--v-true", type=float, default=2.1)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", default="noise_sweep")
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("predict", help="forward radii from inferred parameters")
    _add_phys(p)
    p.add_argument("--final", help="final.json from a training run")
    p.add_argument("--times", type=_floats)
    p.add_argument("--nx", type=int, default=201)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--radii", help="observed radius CSV (t,radius); defaults to the built-in table")
    p.add_argument("--out", help="write the table as CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("radius", help="threshold radius of a binary snapshot")
    p.add_argument("snapshot")
    p.add_argument("--threshold", type=float, default=0.1)
    p.set_defaults(func=cmd_radius)

    p = sub.add_parser("validate", help="run the quick invariant checks")
    p.set_defaults(func=cmd_validate)

    for action in sub.choices.values():
        action.add_argument("--seed", type=int, default=None if action.prog.endswith(("train", "multi-start", "noise-sweep")) else 0,
                            help="base random seed")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, ModeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
