"""Command-line entry point: ``resmpc <command> [options]``.

Every command that produces files writes them under ``--out`` together with a
``manifest.json`` holding the resolved arguments, derived values, seeds,
library versions and sha256 digests of inputs and outputs. ``resmpc replay``
re-executes a manifest into a fresh directory and checks the digests.

Exit codes: 0 success, 1 runtime or solver failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .closedloop import POLICIES, SMPC, RunSettings, run_receding_horizon, write_trajectory_csv
from .controller import (
    QUADRATIC,
    SUM_OF_NORMS,
    ScenarioBound,
    required_scenarios,
    scenario_count_report,
)
from .errors import (
    ConfigError,
    GapError,
    InsufficientDataError,
    InvalidInputError,
    ParseError,
    ResmpcError,
    ValidationError,
)
from .evaluation import (
    DRY_WINTER_H0,
    MonteCarloSetup,
    SynthSpec,
    dry_winter_config,
    evaluate_trajectory,
    monte_carlo_compare,
    synth_dataset,
)
from .hydrology import (
    ONE_HOUR,
    as_hour,
    config_from_mapping,
    format_timestamp,
    level_to_volume,
    load_inflow_csv,
    read_config_file,
    write_config,
    write_demand_csv,
    write_inflow_csv,
)
from .scenarios import (
    FitConfig,
    fit,
    fit_diagnostics,
    load_model,
    nominal_forecast,
    sample_scenarios,
    save_model,
    write_scenario_csv,
)

log = logging.getLogger("resmpc")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

INPUT_ERRORS = (InvalidInputError, ParseError, GapError, ValidationError, ConfigError, InsufficientDataError)
MANIFEST_NAME = "manifest.json"


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    out = {"resmpc": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "kernel_backend": kernels.BACKEND}
    try:
        import numba
        out["numba"] = numba.__version__
    except ImportError:
        out["numba"] = None
    return out


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds").replace("+00:00", "Z")


def _abs(path):
    return None if path is None else str(Path(path).resolve())


def _parse_time(text, flag):
    if text is None:
        return None
    try:
        return as_hour(text)
    except (InvalidInputError, ValueError) as exc:
        raise UsageError(f"{flag}: {exc}") from None


def _seasonality(text):
    try:
        period, order = text.split(":")
        return int(period), int(order)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected PERIOD:ORDER, got {text!r}") from None


def _fit_config(args) -> FitConfig:
    seas = tuple(args.seasonality) if args.seasonality else FitConfig().seasonalities
    try:
        return FitConfig(n_changepoints=args.changepoints, changepoint_range=args.changepoint_range,
                         seasonalities=seas, ridge=args.ridge)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None


def _fit_config_dict(fc: FitConfig) -> dict:
    return {"n_changepoints": fc.n_changepoints, "changepoint_range": fc.changepoint_range,
            "seasonalities": [list(s) for s in fc.seasonalities], "ridge": fc.ridge}


def _scenario_count(args) -> tuple[int, dict]:
    if args.scenarios is not None:
        if args.scenarios < 1:
            raise UsageError("--scenarios must be >= 1")
        return args.scenarios, {"source": "--scenarios"}
    try:
        bound = ScenarioBound(args.epsilon, args.beta, args.horizon)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    return required_scenarios(bound), {"source": "epsilon/beta", "epsilon": args.epsilon, "beta": args.beta}


def _check_horizon(args):
    if args.horizon < 1:
        raise UsageError("--horizon must be >= 1")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, *, inputs=(), outputs=(), derived=None, stats=None, started=None):
    record = {
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k not in ("command", "out", "verbose")},
        "derived": derived or {},
        "stats": stats or {},
        "versions": _versions(),
        "started": started,
        "finished": _now(),
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None},
        "outputs": {name: _sha256(out / name) for name in outputs},
    }
    (out / MANIFEST_NAME).write_text(json.dumps(record, indent=2, default=_json_default) + "\n")
    return record


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (tuple, Path)):
        return list(obj) if isinstance(obj, tuple) else str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _load_reservoir(args):
    """Config from ``--config`` with ``--set key=value`` overrides, or the dry-winter preset."""
    if args.config is None:
        if args.set:
            raise UsageError("--set needs --config")
        return dry_winter_config(), {"h0": DRY_WINTER_H0}
    path = Path(args.config)
    try:
        raw = read_config_file(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for item in args.set or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = (p.strip() for p in item.split("=", 1))
        raw[key] = value
    return config_from_mapping(raw, base_dir=path.parent)


def _initial_volume(args, cfg, extras):
    h0 = args.h0 if args.h0 is not None else extras.get("h0")
    if h0 is None:
        return None, None
    return level_to_volume(h0, cfg), h0


# -- commands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    started = _now()
    out = _out_dir(args)
    spec = SynthSpec.dry_winter(years=args.years) if args.preset == "dry-winter" else SynthSpec(years=args.years)
    series = synth_dataset(spec, seed=args.seed)
    write_inflow_csv(series, out / "inflow.csv")
    cfg = dry_winter_config()
    write_demand_csv(cfg.demand, out / "demand.csv", daily=True)
    write_config(cfg, out / "reservoir.cfg", "demand.csv", h0=DRY_WINTER_H0)
    _write_manifest(out, args, outputs=("inflow.csv", "demand.csv", "reservoir.cfg"),
                    derived={"hours": len(series), "start": format_timestamp(series.start)},
                    started=started)
    print(f"wrote {len(series)} hours to {out / 'inflow.csv'}")
    return EXIT_OK


def cmd_fit(args) -> int:
    started = _now()
    fc = _fit_config(args)
    series = load_inflow_csv(args.inflow)
    start = _parse_time(args.train_start, "--train-start") or series.start
    stop = _parse_time(args.train_end, "--train-end") or series.end
    window = series.window(start, stop)
    model = fit(window, fc)
    diag = fit_diagnostics(model, window)
    out = _out_dir(args)
    save_model(model, out / "model.json")
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2) + "\n")
    _write_manifest(out, args, inputs=(_abs(args.inflow),), outputs=("model.json", "diagnostics.json"),
                    derived={"fit_config": _fit_config_dict(fc), "train_start": format_timestamp(window.start),
                             "train_end": format_timestamp(window.end)},
                    stats=diag, started=started)
    print(f"residual std {diag['residual_std']:.6g} over {diag['n_samples']} hours")
    return EXIT_OK


def cmd_forecast(args) -> int:
    started = _now()
    _check_horizon(args)
    K, k_info = _scenario_count(args)
    model = load_model(args.model)
    origin = _parse_time(args.origin, "--origin") or model.train_end
    # --no-noise turns off every random component, so columns equal the nominal forecast
    noise = not args.no_noise
    changepoints = not (args.no_noise or args.no_changepoints)
    sm = sample_scenarios(model, origin, args.horizon, K, args.seed, noise=noise, changepoints=changepoints)
    nominal = nominal_forecast(model, origin, args.horizon)
    out = _out_dir(args)
    write_scenario_csv(sm, out / "scenarios.csv", nominal=nominal)
    _write_manifest(out, args, inputs=(_abs(args.model),), outputs=("scenarios.csv",),
                    derived={"K": K, "K_from": k_info, "origin": format_timestamp(origin),
                             "noise": noise, "changepoints": changepoints},
                    started=started)
    print(f"wrote {args.horizon} x {K} scenarios from {format_timestamp(origin)}")
    return EXIT_OK


def _settings(args, K) -> RunSettings:
    try:
        return RunSettings(horizon=args.horizon, scenarios=K, refit_period=args.refit_period, seed=args.seed,
                           c=args.c, objective=args.objective, lam=args.lam, tol=args.tol,
                           max_iters=args.max_iters)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None


def cmd_run(args) -> int:
    started = _now()
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    _check_horizon(args)
    K, k_info = _scenario_count(args)
    settings = _settings(args, K)
    fc = _fit_config(args)
    cfg, extras = _load_reservoir(args)
    inflow = load_inflow_csv(args.inflow)
    train_start = _parse_time(args.train_start, "--train-start") or inflow.start
    train_end = _parse_time(args.train_end, "--train-end")
    sim_start = _parse_time(args.sim_start, "--sim-start")
    if sim_start is None:
        sim_start = train_end if train_end is not None else inflow.end - args.steps * ONE_HOUR
    elif train_end is not None and train_end != sim_start:
        raise UsageError("--train-end must equal --sim-start; the window grows from the simulation start")
    s0, h0 = _initial_volume(args, cfg, extras)

    traj = run_receding_horizon(args.policy, inflow, cfg, fc, args.steps, sim_start, train_start=train_start,
                                s0=s0, settings=settings)
    ev = evaluate_trajectory(traj, cfg)
    out = _out_dir(args)
    write_trajectory_csv(traj, out / "trajectory.csv")
    stats = {
        "solver_iters_total": int(traj.solver_iters.sum()),
        "solver_iters_max": int(traj.solver_iters.max()),
        "unconverged_steps": list(traj.unconverged_steps),
        "refit_failures": list(traj.refit_failures),
        "mass_balance_error_m3": traj.mass_balance_error(),
        "elapsed_s": traj.elapsed,
        "metrics": ev.metrics(),
    }
    derived = {
        "K": K if args.policy == SMPC else 1, "K_from": k_info, "fit_config": _fit_config_dict(fc),
        "train_start": format_timestamp(train_start), "sim_start": format_timestamp(sim_start),
        "s0": traj.s0, "h0": h0, "scenario_seed_scheme": "derive(seed, 'scenarios', step)",
        "reservoir": {k: getattr(cfg, k) for k in
                      ("s_min", "s_max", "u_min", "u_max", "surface_area", "s_ref", "h_dry", "h_flood")},
    }
    inputs = [_abs(args.inflow)] + ([_abs(args.config)] if args.config else [])
    _write_manifest(out, args, inputs=inputs, outputs=("trajectory.csv",), derived=derived, stats=stats,
                    started=started)
    m = ev.metrics()
    print(f"{args.policy}: cumJ {m['cumJ']:.6g}, dry hours {m['dry_hours']}, deficit hours {m['deficit_hours']}")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    started = _now()
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if args.replicates < 2:
        raise UsageError("--replicates must be >= 2")
    _check_horizon(args)
    policies = tuple(dict.fromkeys(args.policies.split(",")))
    bad = [p for p in policies if p not in POLICIES]
    if bad:
        raise UsageError(f"unknown policies {bad}; choose from {', '.join(POLICIES)}")
    K, k_info = _scenario_count(args)
    settings = _settings(args, K)
    fc = _fit_config(args)
    cfg, extras = _load_reservoir(args)
    if args.inflow is not None:
        history = load_inflow_csv(args.inflow)
    else:
        history = synth_dataset(SynthSpec.dry_winter(), seed=args.data_seed)
    s0, h0 = _initial_volume(args, cfg, extras)
    t0 = time.perf_counter()
    generator = fit(history, fc)
    setup = MonteCarloSetup(history=history, generator=generator, cfg=cfg, fit_cfg=fc, settings=settings,
                            T=args.steps, s0=s0, policies=policies)
    report = monte_carlo_compare(args.replicates, setup, seed=args.seed, threads=args.threads)
    elapsed = time.perf_counter() - t0
    out = _out_dir(args)
    report.write(out)
    outputs = ["report.json", "report.csv"] + [
        f"curves/replicate_{r.index:03d}.csv" for r in report.ok
    ]
    inputs = [p for p in (_abs(args.inflow), _abs(args.config)) if p]
    _write_manifest(out, args, inputs=inputs, outputs=outputs,
                    derived={"K": K, "K_from": k_info, "h0": h0, "s0": s0, "fit_config": _fit_config_dict(fc),
                             "history": "inflow file" if args.inflow else "synthetic dry-winter",
                             "seed_scheme": "truth: derive(seed, 'truth', r); policy: derive(seed, 'policy', r)"},
                    stats={"elapsed_s": elapsed, "failures": report.failures}, started=started)
    for p in policies:
        v = report.normalized(p)
        if v.size:
            print(f"{p:13s} mean normJ {v.mean():.5f}  median {np.median(v):.5f}")
    if report.failures:
        print(f"{len(report.failures)} replicate(s) failed; see report.json", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_kcount(args) -> int:
    _check_horizon(args)
    try:
        k = required_scenarios(ScenarioBound(args.epsilon, args.beta, args.horizon))
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    rows = scenario_count_report()
    if args.json:
        print(json.dumps({"epsilon": args.epsilon, "beta": args.beta, "horizon": args.horizon, "K": k,
                          "reference": rows}, indent=2))
        return EXIT_OK
    print(f"K = {k}  (epsilon={args.epsilon:g}, beta={args.beta:g}, H={args.horizon})")
    print("reference pairs (formula vs reference):")
    for r in rows:
        print(f"  {r['case']:11s} eps={r['epsilon']:g} beta={r['beta']:g} H={r['horizon']}: "
              f"formula {r['formula_value']:.3f} -> K={r['formula_K']}, reference {r['reference_K']}, "
              f"difference {r['difference']:+d}")
    return EXIT_OK


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    command = manifest.get("command")
    if command not in COMMANDS or command == "replay":
        raise UsageError(f"manifest command {command!r} cannot be replayed")
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).exists() or _sha256(path) != digest:
            raise UsageError(f"input {path} is missing or changed since the manifest was written")
    ns = argparse.Namespace(**manifest["args"], command=command, out=args.out, verbose=args.verbose)
    for key in ("seasonality",):
        if getattr(ns, key, None):
            setattr(ns, key, [tuple(s) for s in getattr(ns, key)])
    code = COMMANDS[command](ns)
    if code != EXIT_OK:
        return code
    fresh = json.loads((Path(args.out) / MANIFEST_NAME).read_text())["outputs"]
    diff = sorted(k for k in manifest["outputs"] if fresh.get(k) != manifest["outputs"][k])
    if diff:
        print(f"replay differs in {len(diff)} file(s): {', '.join(diff)}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"replay reproduced {len(manifest['outputs'])} file(s) exactly")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "run": cmd_run,
    "montecarlo": cmd_montecarlo,
    "kcount": cmd_kcount,
    "replay": cmd_replay,
}


# -- parser --------------------------------------------------------------------

def _add_fit_options(p):
    g = p.add_argument_group("additive model")
    g.add_argument("--changepoints", type=int, default=25, help="potential trend changepoints (default 25)")
    g.add_argument("--changepoint-range", type=float, default=0.8,
                   help="fraction of the window holding changepoints (default 0.8)")
    g.add_argument("--seasonality", type=_seasonality, action="append", metavar="PERIOD:ORDER",
                   help="Fourier block in hours; repeatable (default 8760:10 and 24:3)")
    g.add_argument("--ridge", type=float, default=1.0, help="ridge weight on slope changes")


def _add_scenario_options(p, horizon=True):
    if horizon:
        p.add_argument("--horizon", type=int, default=24, help="prediction horizon H in hours (default 24)")
    p.add_argument("--epsilon", type=float, default=0.2, help="violation level for the scenario count")
    p.add_argument("--beta", type=float, default=1e-6, help="confidence parameter for the scenario count")
    p.add_argument("--scenarios", type=int, help="scenario count K; overrides --epsilon/--beta")
    p.add_argument("--seed", type=int, default=0, help="base seed (default 0)")


def _add_controller_options(p):
    p.add_argument("--refit-period", type=int, default=24, help="steps between model refits (default 24)")
    p.add_argument("--objective", choices=(SUM_OF_NORMS, QUADRATIC), default=SUM_OF_NORMS)
    p.add_argument("--c", type=float, default=1e-4, help="volume term weight (default 1e-4)")
    p.add_argument("--lam", type=float, default=1.0, help="demand weight of the quadratic objective")
    p.add_argument("--tol", type=float, default=1e-8, help="solver tolerance")
    p.add_argument("--max-iters", type=int, default=20000, help="solver iteration cap")


def _add_reservoir_options(p):
    p.add_argument("--config", help="reservoir config file (default: dry-winter preset)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry; repeatable")
    p.add_argument("--h0", type=float, help="initial level in m; overrides the config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resmpc", description="Scenario MPC for reservoir release.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic inflow record with demand and reservoir config")
    p.add_argument("--preset", choices=("dry-winter", "plain"), default="dry-winter")
    p.add_argument("--years", type=int, default=3)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit the additive inflow model")
    p.add_argument("--inflow", required=True, help="CSV with header timestamp,inflow_m3s")
    p.add_argument("--train-start")
    p.add_argument("--train-end", help="exclusive end of the training window")
    _add_fit_options(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("forecast", help="sample an H x K inflow scenario matrix")
    p.add_argument("--model", required=True, help="model.json written by fit")
    p.add_argument("--origin", help="first forecast hour (default: end of training window)")
    _add_scenario_options(p)
    p.add_argument("--no-noise", action="store_true", help="no random components: every column is nominal")
    p.add_argument("--no-changepoints", action="store_true", help="keep noise, drop future trend changes")
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="closed-loop simulation of one policy")
    p.add_argument("--policy", choices=POLICIES, required=True)
    p.add_argument("--inflow", required=True)
    p.add_argument("--train-start")
    p.add_argument("--train-end")
    p.add_argument("--sim-start")
    p.add_argument("--steps", type=int, required=True, help="simulated hours T")
    _add_reservoir_options(p)
    _add_scenario_options(p)
    _add_controller_options(p)
    _add_fit_options(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("montecarlo", help="compare policies over generator realisations")
    p.add_argument("--inflow", help="history CSV (default: synthetic dry-winter record)")
    p.add_argument("--data-seed", type=int, default=1, help="seed of the synthetic history")
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--steps", type=int, default=720)
    p.add_argument("--policies", default=",".join(POLICIES))
    p.add_argument("--threads", type=int, help="worker processes (default: REPO_THREADS or all cores)")
    _add_reservoir_options(p)
    _add_scenario_options(p)
    _add_controller_options(p)
    _add_fit_options(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("kcount", help="scenario count for a violation level and confidence")
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--beta", type=float, default=1e-6)
    p.add_argument("--horizon", type=int, default=24)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"resmpc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except INPUT_ERRORS as exc:
        print(f"resmpc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"resmpc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResmpcError as exc:
        print(f"resmpc {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
