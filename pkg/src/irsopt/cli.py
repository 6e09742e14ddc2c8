"""Command-line driver: ``irsopt <command> [options]``.

Commands: generate, simulate, estimate, optimize, evaluate, export,
validate, pipeline. Options can also come from a flat JSON ``--config``
file whose keys mirror :class:`ScenarioConfig` and
:class:`OptimizationSettings` (plus ``repetitions`` and ``noiseless``);
command-line flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datafile as df
from .core import DimensionError, SystemDims
from .estimator import estimate_channel
from .evaluator import compare_report
from .optimizer import (
    ConfigurationResult,
    OptimizationSettings,
    SubmissionError,
    export_submission,
    optimize_wideband,
)
from .simulator import (
    PilotDataset,
    ScenarioConfig,
    build_hadamard_pilots,
    generate_scenario,
    pilot_symbol,
    simulate_pilot_phase,
    simulate_user,
)

log = logging.getLogger("irsopt")

DEFAULT_DIMS = (500, 20, 4096)
SUBMISSION_USERS = 50
_SETTINGS_KEYS = ("phase_grid_size", "max_flip_passes", "improvement_tolerance", "max_starts", "refine_starts")


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return cfg


def _option(args, cfg, flag, key=None, default=None):
    value = getattr(args, flag, None)
    if value is not None:
        return value
    return cfg.get(key or flag, default)


def _dims(args, cfg) -> SystemDims:
    if getattr(args, "dims", None):
        return SystemDims.parse(args.dims)
    value = cfg.get("dims", DEFAULT_DIMS)
    return SystemDims.parse(value) if isinstance(value, str) else SystemDims(*value)


def _scenario_config(args, cfg) -> ScenarioConfig:
    known = {k: v for k, v in cfg.items()
             if k not in ("dims", "repetitions", "noiseless", *_SETTINGS_KEYS)}
    known.update(
        dims=_dims(args, cfg),
        seed=int(_option(args, cfg, "seed", default=0)),
        num_users=int(_option(args, cfg, "users", "num_users", SUBMISSION_USERS)),
    )
    for flag, key in (("noise_psd", "noise_psd"), ("power", "power"), ("bandwidth", "bandwidth")):
        value = getattr(args, flag, None)
        if value is not None:
            known[key] = value
    return ScenarioConfig.from_dict(known)


def _settings(args, cfg, noise_variance: float, power: float, bandwidth: float) -> OptimizationSettings:
    if not noise_variance > 0:
        raise ValueError("noise level is zero; pass --noise-psd for noiseless estimates")
    extra = {k: cfg[k] for k in _SETTINGS_KEYS if k in cfg}
    return OptimizationSettings(snr_scale=power / noise_variance, bandwidth=bandwidth, **extra)


def _report_io(kind: str, path, digest=None):
    digest = digest or df.file_digest(path)
    print(f"{kind:<4} {path} sha256:{digest[:16]}")


def _header(dims: SystemDims, seed):
    print(f"dims K={dims.K} M={dims.M} N={dims.N}  seed {seed}")


def cmd_generate(args, cfg):
    config = _scenario_config(args, cfg)
    scenario = generate_scenario(config)
    _header(config.dims, config.seed)
    digest = df.write_dataset(args.out, df.scenario_to_file(scenario))
    _report_io("out", args.out, digest)
    print(f"noise_psd {scenario.config.noise_psd:.6e} W/Hz, LoS users {int(scenario.los_flags.sum())}"
          f"/{scenario.num_users}")


def cmd_simulate(args, cfg):
    ds = df.read_dataset(args.scenario, "scenario")
    scenario = df.scenario_from_file(ds)
    reps = int(_option(args, cfg, "repetitions", default=1))
    noiseless = bool(args.noiseless or cfg.get("noiseless", False))
    _header(scenario.dims, scenario.config.seed)
    _report_io("in", args.scenario)
    pilots = build_hadamard_pilots(scenario.dims, reps)
    dataset = simulate_pilot_phase(scenario, pilots, power=_option(args, cfg, "power"), noiseless=noiseless)
    _report_io("out", args.out, df.write_dataset(args.out, df.pilots_to_file(dataset)))


def cmd_estimate(args, cfg):
    ds = df.read_dataset(args.pilots, "pilots")
    dataset = df.pilots_from_file(ds)
    _header(dataset.dims, dataset.seed)
    _report_io("in", args.pilots)
    estimates = [estimate_channel(dataset, u) for u in range(dataset.num_users)]
    _report_io("out", args.out, df.write_dataset(args.out, df.estimates_to_file(estimates)))


def cmd_optimize(args, cfg):
    ds = df.read_dataset(args.estimate, "estimate")
    estimates = df.estimates_from_file(ds)
    _header(ds.dims, _option(args, cfg, "seed"))
    _report_io("in", args.estimate)
    power = float(_option(args, cfg, "power", default=1.0))
    bandwidth = float(_option(args, cfg, "bandwidth", default=1e7))
    noise_psd = _option(args, cfg, "noise_psd")
    results = []
    for est in estimates:
        variance = noise_psd * bandwidth if noise_psd is not None else est.noise_variance_estimate
        results.append(optimize_wideband(est, _settings(args, cfg, variance, power, bandwidth)))
    theta = export_submission(results, num_users=len(results))
    _report_io("out", args.out, df.write_dataset(args.out, df.submission_to_file(ds.dims, theta, results)))


def cmd_export(args, cfg):
    ds = df.read_dataset(args.results, "submission")
    users = int(_option(args, cfg, "users", "num_users", SUBMISSION_USERS))
    theta = export_submission(list(np.asarray(ds["theta"]).T), num_users=users)
    _header(ds.dims, ds.meta.get("seed"))
    _report_io("in", args.results)
    _report_io("out", args.out, df.write_dataset(args.out, df.submission_to_file(ds.dims, theta)))


def cmd_validate(args, cfg):
    users = int(_option(args, cfg, "users", "num_users", SUBMISSION_USERS))
    problems = df.validate_submission(args.submission, num_users=users)
    for p in problems:
        print(p)
    if problems:
        print(f"{len(problems)} violation(s)")
        return 1
    print("ok")
    return 0


def _baselines(args, N):
    labels = ["random", "all-ones"]
    if args.oracle:
        if N <= 20:
            labels.append("oracle")
        else:
            log.warning("oracle baseline skipped: N=%d > 20", N)
    return labels


def _write_report(args, dims, report, out):
    digest = df.write_dataset(out, df.report_to_file(dims, report))
    _report_io("out", out, digest)
    json_path = Path(out).with_suffix(".json")
    json_path.write_text(report.to_json() + "\n")
    _report_io("out", json_path)


def cmd_evaluate(args, cfg):
    scenario = df.scenario_from_file(df.read_dataset(args.scenario, "scenario"))
    sub = df.read_dataset(args.submission, "submission")
    _header(scenario.dims, scenario.config.seed)
    _report_io("in", args.scenario)
    _report_io("in", args.submission)
    theta = np.asarray(sub["theta"])
    if theta.shape != (scenario.dims.N, scenario.num_users):
        raise DimensionError(f"submission shape {theta.shape} does not match scenario "
                             f"({scenario.dims.N}, {scenario.num_users})")
    if "predictedRate" in sub.arrays:
        methods = sub.meta.get("methods", ["?"] * theta.shape[1])
        results = [ConfigurationResult(theta[:, u].copy(), float(sub["predictedRate"][u]), methods[u])
                   for u in range(theta.shape[1])]
    else:
        results = [theta[:, u].copy() for u in range(theta.shape[1])]
    report = compare_report(scenario, results, _baselines(args, scenario.dims.N), baseline_seed=scenario.config.seed)
    print(report.to_table())
    _write_report(args, scenario.dims, report, args.out)


def run_stages(config: ScenarioConfig, repetitions: int = 1, noiseless: bool = False,
               settings_overrides=None, keep_received: bool = False):
    """Generate, simulate, estimate and optimize every user of one scenario.

    Users are processed one at a time so the full received array exists only
    when ``keep_received`` is set. The optimizer's noise level is the
    estimated one, or the true one for noiseless runs.

    Returns ``(scenario, pilots, estimates, results, received_or_None)``.
    """
    scenario = generate_scenario(config)
    cfg_s = scenario.config
    dims = cfg_s.dims
    pilots = build_hadamard_pilots(dims, repetitions)
    xbar = pilot_symbol(dims, cfg_s.power)
    received = None
    if keep_received:
        received = np.empty((dims.K, pilots.shape[1], scenario.num_users), dtype=np.complex128, order="F")
    estimates, results = [], []
    for u in range(scenario.num_users):
        z = simulate_user(scenario, u, pilots, xbar, noiseless)
        if received is not None:
            received[:, :, u] = z
        est = estimate_channel(PilotDataset(dims, pilots, xbar, z[:, :, None], seed=cfg_s.seed), 0)
        estimates.append(est)
        variance = cfg_s.noise_variance if noiseless else est.noise_variance_estimate
        if not variance > 0:
            raise ValueError("estimated noise level is zero")
        settings = OptimizationSettings(snr_scale=cfg_s.power / variance, bandwidth=cfg_s.bandwidth,
                                        **(settings_overrides or {}))
        results.append(optimize_wideband(est, settings))
        log.info("user %d: %s, predicted %.4f Mbit/s", u, results[-1].method, results[-1].predicted_rate / 1e6)
    return scenario, pilots, estimates, results, received


def cmd_pipeline(args, cfg):
    config = _scenario_config(args, cfg)
    reps = int(_option(args, cfg, "repetitions", default=1))
    noiseless = bool(args.noiseless or cfg.get("noiseless", False))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dims = config.dims
    _header(dims, config.seed)

    overrides = {k: cfg[k] for k in _SETTINGS_KEYS if k in cfg}
    scenario, pilots, estimates, results, received = run_stages(
        config, reps, noiseless, overrides, keep_received=args.write_pilots)
    _report_io("out", out / "scenario.irsd", df.write_dataset(out / "scenario.irsd", df.scenario_to_file(scenario)))
    cfg_s = scenario.config
    xbar = pilot_symbol(dims, cfg_s.power)
    if received is not None:
        dataset = PilotDataset(dims, pilots, xbar, received, seed=cfg_s.seed)
        _report_io("out", out / "pilots.irsd", df.write_dataset(out / "pilots.irsd", df.pilots_to_file(dataset)))
    _report_io("out", out / "estimate.irsd",
               df.write_dataset(out / "estimate.irsd", df.estimates_to_file(estimates)))
    theta = export_submission(results, num_users=scenario.num_users)
    meta = {"seed": cfg_s.seed}
    _report_io("out", out / "results.irsd",
               df.write_dataset(out / "results.irsd", df.submission_to_file(dims, theta, results, meta)))
    _report_io("out", out / "submission.irsd",
               df.write_dataset(out / "submission.irsd", df.submission_to_file(dims, theta, meta=meta)))
    report = compare_report(scenario, results, _baselines(args, dims.N), baseline_seed=cfg_s.seed)
    print(report.to_table())
    _write_report(args, dims, report, out / "report.irsd")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irsopt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=False):
        p.add_argument("--config", help="flat JSON key-value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--power", type=float, help="transmit power P in W")
        p.add_argument("--bandwidth", type=float, help="bandwidth B in Hz")
        p.add_argument("--noise-psd", dest="noise_psd", type=float, help="noise PSD N0 in W/Hz")
        if scenario:
            p.add_argument("--dims", help="K,M,N")
            p.add_argument("--users", type=int)

    p = sub.add_parser("generate", help="draw a ground-truth scenario")
    common(p, scenario=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("simulate", help="simulate the pilot phase")
    common(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--repetitions", type=int, choices=(1, 4))
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate channels from a pilots file")
    common(p)
    p.add_argument("--pilots", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("optimize", help="select configurations from an estimate file")
    common(p)
    p.add_argument("--estimate", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", help="score a submission on the ground truth")
    common(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--submission", required=True)
    p.add_argument("--oracle", action="store_true", help="add the exhaustive baseline (N <= 20)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="write the validated theta-only submission matrix")
    common(p)
    p.add_argument("--results", required=True)
    p.add_argument("--users", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("validate", help="check a submission file")
    p.add_argument("--config")
    p.add_argument("submission")
    p.add_argument("--users", type=int)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("pipeline", help="run every stage with one seed")
    common(p, scenario=True)
    p.add_argument("--repetitions", type=int, choices=(1, 4))
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--write-pilots", action="store_true", help="also write the (large) pilots file")
    p.add_argument("--out", default="irsopt-run", help="output directory")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        status = args.func(args, cfg)
    except df.FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except (DimensionError, SubmissionError, ValueError, KeyError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
