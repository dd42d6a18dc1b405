"""Command-line front end and deterministic CSV emission.

Every CSV starts with the schema version comment ``#fedopl-csv-v1``.
Floats are written in shortest round-trip form, so identical runs produce
byte-identical files. Exit codes: 0 success, 1 configuration/usage error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import rng as rngmod
from .aipw import cross_fit_scores, policy_value_estimate
from .datagen import allocate, sample_counterfactual_batch
from .diagnostics import skewness
from .errors import ConfigurationError, FedoplError, InvalidArgumentError
from .experiments import (
    ExperimentManifest,
    ExperimentResult,
    build_env_specs,
    heterogeneous_manifest,
    homogeneous_manifest,
    lambda_for_counts,
    run_experiment,
)
from .federation import RoundConfig, run_fedopl
from .rng import StreamKey
from .types import ClientSamplingDistribution

__all__ = ["main", "entry_point"]

CSV_VERSION = "#fedopl-csv-v1"

REGRET_HEADER = "scenario,n,seed,policy,client,metric,value,se"
SKEWNESS_HEADER = "scenario,n,quantity,client,value"
SHIFT_HEADER = "scenario,c,k,quantity,value"
TRAINING_LOG_HEADER = "round,participants,mean_local_loss,theta_norm"
FAILURES_HEADER = "scenario,n,seed,error"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header: str, rows: Iterable[Sequence]) -> None:
    lines = [CSV_VERSION, header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _regret_rows(result: ExperimentResult) -> list[tuple]:
    scenario = result.manifest.scenario
    rows = []
    for report in result.reports:
        entries = [("global", report.global_entry)] + [
            (str(e.client), e) for e in report.local_entries
        ]
        for client, e in entries:
            rows.append(
                (scenario, report.n, report.seed, report.policy_tag, client, "regret",
                 e.regret, e.regret_se)
            )
            rows.append(
                (scenario, report.n, report.seed, report.policy_tag, client, "value",
                 e.value, e.value_se)
            )
    rows.sort(key=lambda r: (r[1], r[2], r[3], r[4], r[5]))
    return rows


def _skewness_rows(result: ExperimentResult) -> list[tuple]:
    scenario = result.manifest.scenario
    rows = []
    for n in sorted(result.skewness_by_n):
        rep = result.skewness_by_n[n]
        lam = result.lambda_by_n[n]
        for c in range(len(lam)):
            rows.append((scenario, n, "lambda", c, lam[c]))
            rows.append((scenario, n, "nbar", c, float(rep.nbar[c])))
        rows.append((scenario, n, "skewness", "global", rep.skewness))
        rows.append((scenario, n, "chi2", "global", rep.chi2))
        # the rate-scaling overlay sqrt(skewness / n); constants are unknown
        rows.append((scenario, n, "sqrt_skewness_over_n", "global",
                     float(np.sqrt(rep.skewness / n))))
    return rows


def _shift_rows(result: ExperimentResult) -> list[tuple]:
    scenario = result.manifest.scenario
    rows = []
    if result.shift is None:
        return rows
    for pair in result.shift.pairs:
        c, k = pair.client_c, pair.client_k
        rows.append((scenario, c, k, "kl_context", pair.kl_context))
        rows.append((scenario, c, k, "kl_propensity", pair.kl_propensity))
        rows.append((scenario, c, k, "kl_reward", pair.kl_reward))
        rows.append((scenario, c, k, "kl_reward_se", pair.kl_reward_se))
        rows.append((scenario, c, k, "sqrt_kl_sum", pair.sqrt_sum))
    for c, bound in enumerate(result.shift.tv_upper):
        rows.append((scenario, c, "", "tv_upper", float(bound)))
    return rows


def write_experiment_outputs(result: ExperimentResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest_resolved.json").write_text(
        json.dumps(result.resolved_manifest(), indent=2, sort_keys=True) + "\n"
    )
    _write_csv(out_dir / "regret.csv", REGRET_HEADER, _regret_rows(result))
    _write_csv(out_dir / "skewness.csv", SKEWNESS_HEADER, _skewness_rows(result))
    _write_csv(out_dir / "shift.csv", SHIFT_HEADER, _shift_rows(result))
    if result.failures:
        _write_csv(
            out_dir / "failures.csv",
            FAILURES_HEADER,
            [
                (result.manifest.scenario, f.n, f.seed, f.message.replace("\n", " | "))
                for f in result.failures
            ],
        )


def _build_manifest(args: argparse.Namespace) -> ExperimentManifest:
    if args.manifest:
        data = json.loads(Path(args.manifest).read_text())
        data.pop("theta_star", None)
        manifest = ExperimentManifest.from_dict(data)
        base = manifest.to_dict()
    elif args.scenario:
        if args.scenario == "homogeneous":
            base = homogeneous_manifest().to_dict()
        else:
            base = heterogeneous_manifest().to_dict()
    else:
        raise ConfigurationError("provide --scenario or --manifest")

    if args.seed is not None:
        base["master_seed"] = args.seed
    if args.seeds is not None:
        base["seeds"] = args.seeds
    if args.grid is not None:
        base["grid"] = [int(v) for v in args.grid.split(",") if v]
    if args.lambda_mode is not None:
        base["lambda_mode"] = args.lambda_mode
    if args.alpha is not None:
        base["alpha"] = args.alpha
    if args.rounds is not None:
        base["rounds"] = args.rounds
    if args.local_steps is not None:
        base["local_steps"] = args.local_steps
    if args.batch is not None:
        base["batch_size"] = args.batch
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        base[key] = _coerce_field(key, raw)
    return ExperimentManifest.from_dict(base)


def _coerce_field(key: str, raw: str):
    fields = {f.name: f for f in dataclasses.fields(ExperimentManifest)}
    if key not in fields:
        raise ConfigurationError(f"unknown manifest field {key!r}")
    hint = str(fields[key].type)
    if "tuple" in hint:
        parts = [p for p in raw.split(",") if p]
        if key in ("grid",):
            return [int(p) for p in parts]
        if key in ("sigma2", "rho2"):
            return [float(p) for p in parts]
        return parts
    if "int" in hint:
        return int(raw)
    if "float" in hint:
        return float(raw)
    return raw


def _threads(args: argparse.Namespace) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("FEDOPL_THREADS", "")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigurationError(f"bad FEDOPL_THREADS value {env!r}") from exc
    return 1


def cmd_experiment(args: argparse.Namespace) -> int:
    manifest = _build_manifest(args)
    out_dir = Path(args.out)
    result = run_experiment(manifest, threads=_threads(args))
    write_experiment_outputs(result, out_dir)
    n_rows = sum(1 + len(r.local_entries) for r in result.reports) * 2
    print(f"wrote {out_dir}/regret.csv ({n_rows} rows), skewness.csv, shift.csv")
    if result.failures:
        print(f"{len(result.failures)} cell(s) failed; see failures.csv", file=sys.stderr)
    return 0


def _single_run_inputs(args: argparse.Namespace):
    if args.scenario == "homogeneous":
        manifest = homogeneous_manifest(master_seed=args.seed or 0)
    else:
        manifest = heterogeneous_manifest(
            master_seed=args.seed or 0,
            lambda_mode=args.lambda_mode or "empirical",
        )
    if args.alpha is not None:
        manifest = ExperimentManifest.from_dict({**manifest.to_dict(), "alpha": args.alpha})
    specs = build_env_specs(manifest)
    counts = allocate(manifest.allocation_rule(), args.n, manifest.clients)
    root = StreamKey(manifest.master_seed)
    datasets = [
        sample_counterfactual_batch(spec, counts[c], root.child(rngmod.DATAGEN, c).rng())
        .logged_dataset()
        for c, spec in enumerate(specs)
    ]
    scored = [
        cross_fit_scores(
            ds,
            manifest.actions,
            n_folds=min(manifest.folds, ds.n_c),
            config=manifest.nuisance_config(),
            rng=root.child(rngmod.FOLDS, c).rng(),
        )
        for c, ds in enumerate(datasets)
    ]
    lam = lambda_for_counts(manifest, counts)
    return manifest, specs, datasets, scored, lam, root


def cmd_fedopl(args: argparse.Namespace) -> int:
    manifest, _, _, scored, lam, root = _single_run_inputs(args)
    cfg = RoundConfig(
        lam=lam,
        rounds=args.rounds or manifest.rounds,
        local_steps=args.local_steps or manifest.local_steps,
        batch_size=args.batch or manifest.batch_size,
        schedule=manifest.schedule(),
    )
    result = run_fedopl(scored, cfg, root.child(rngmod.FEDOPL), threads=_threads(args))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out_dir / "training_log.csv",
        TRAINING_LOG_HEADER,
        [
            (rec.round_index, ";".join(str(c) for c in rec.participants),
             rec.mean_local_loss, rec.theta_norm)
            for rec in result.history
        ],
    )
    policy = {
        "theta": [[float(v) for v in row] for row in result.policy.theta],
        "intercept": [float(v) for v in result.policy.intercept],
    }
    (out_dir / "policy.json").write_text(json.dumps(policy, indent=2) + "\n")
    value = policy_value_estimate(scored, result.policy, lam)
    print(f"estimated policy value: {_fmt(value)}")
    return 0


def cmd_aipw(args: argparse.Namespace) -> int:
    manifest, _, datasets, scored, _, _ = _single_run_inputs(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    p = datasets[0].contexts.shape[1]
    d = manifest.actions
    x_cols = ",".join(f"x{j}" for j in range(p))
    data_rows = []
    for ds in datasets:
        for i in range(ds.n_c):
            prop = "" if ds.propensities is None else ds.propensities[i]
            data_rows.append(
                (ds.client_id, i, int(ds.actions[i]), ds.rewards[i], prop,
                 *ds.contexts[i].tolist())
            )
    _write_csv(
        out_dir / "dataset.csv",
        f"client_id,index,action,reward,logged_propensity,{x_cols}",
        data_rows,
    )
    score_cols = ",".join(f"score_{a}" for a in range(d))
    score_rows = []
    for sc in scored:
        for i in range(len(sc)):
            score_rows.append(
                (sc.client_id, int(sc.fold_of[i]), *sc.contexts[i].tolist(),
                 *sc.scores[i].tolist())
            )
    _write_csv(out_dir / "scores.csv", f"client_id,fold,{x_cols},{score_cols}", score_rows)
    print(f"wrote {out_dir}/dataset.csv and scores.csv")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote = []
    if args.lam is not None or args.counts is not None:
        if args.lam is None or args.counts is None:
            raise ConfigurationError("diagnose needs both --lambda and --counts")
        weights = [float(v) for v in args.lam.split(",") if v]
        counts = [int(v) for v in args.counts.split(",") if v]
        lam = ClientSamplingDistribution(np.array(weights))
        rep = skewness(lam, counts)
        n = sum(counts)
        rows = []
        for c in range(len(lam)):
            rows.append(("diagnose", n, "lambda", c, lam[c]))
            rows.append(("diagnose", n, "nbar", c, float(rep.nbar[c])))
        rows.append(("diagnose", n, "skewness", "global", rep.skewness))
        rows.append(("diagnose", n, "chi2", "global", rep.chi2))
        rows.append(("diagnose", n, "sqrt_skewness_over_n", "global",
                     float(np.sqrt(rep.skewness / n))))
        _write_csv(out_dir / "skewness.csv", SKEWNESS_HEADER, rows)
        print(f"skewness: {_fmt(rep.skewness)} (chi2: {_fmt(rep.chi2)})")
        wrote.append("skewness.csv")
    if args.scenario:
        manifest = (
            homogeneous_manifest(master_seed=args.seed or 0)
            if args.scenario == "homogeneous"
            else heterogeneous_manifest(master_seed=args.seed or 0)
        )
        from .diagnostics import shift_report  # local import avoids cycle at module load

        specs = build_env_specs(manifest)
        counts = allocate(manifest.allocation_rule(), manifest.n_max, manifest.clients)
        lam = lambda_for_counts(manifest, counts)
        root = StreamKey(manifest.master_seed)
        shift = shift_report(specs, lam, manifest.shift_mc_draws, root.child(rngmod.SHIFT).rng())
        result = ExperimentResult(manifest, specs[0].theta_star)
        result.shift = shift
        _write_csv(out_dir / "shift.csv", SHIFT_HEADER, _shift_rows(result))
        print(f"wrote {out_dir}/shift.csv")
        wrote.append("shift.csv")
    if not wrote:
        raise ConfigurationError("diagnose needs --lambda/--counts or --scenario")
    return 0


class _CliArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _CliArgumentError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="fedopl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser, needs_n: bool = False) -> None:
        p.add_argument("--scenario", choices=["homogeneous", "heterogeneous"])
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (or FEDOPL_THREADS)")
        p.add_argument("--lambda-mode", dest="lambda_mode",
                       choices=["empirical", "skewed"], default=None)
        p.add_argument("--alpha", type=float, default=None, help="skew tilt in [0,1)")
        p.add_argument("--rounds", type=int, default=None)
        p.add_argument("--local-steps", dest="local_steps", type=int, default=None)
        p.add_argument("--batch", type=int, default=None)
        if needs_n:
            p.add_argument("--n", type=int, required=True, help="total training samples")

    p_exp = sub.add_parser("experiment", help="run a full grid-and-seeds study")
    common(p_exp)
    p_exp.add_argument("--manifest", default=None, help="manifest JSON path")
    p_exp.add_argument("--grid", default=None, help="comma-separated sample sizes")
    p_exp.add_argument("--seeds", type=int, default=None, help="number of seed runs")
    p_exp.add_argument("--set", action="append", default=None, metavar="KEY=VALUE",
                       help="override any manifest field")
    p_exp.set_defaults(func=cmd_experiment)

    p_fed = sub.add_parser("fedopl", help="one federated training run")
    common(p_fed, needs_n=True)
    p_fed.set_defaults(func=cmd_fedopl)

    p_aipw = sub.add_parser("aipw", help="generate data and export scores")
    common(p_aipw, needs_n=True)
    p_aipw.set_defaults(func=cmd_aipw)

    p_diag = sub.add_parser("diagnose", help="skewness / distribution shift reports")
    common(p_diag)
    p_diag.add_argument("--lambda", dest="lam", default=None,
                        help="comma-separated client weights")
    p_diag.add_argument("--counts", default=None, help="comma-separated sample counts")
    p_diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _CliArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigurationError, InvalidArgumentError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except FedoplError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entry_point() -> None:
    sys.exit(main(sys.argv[1:]))
