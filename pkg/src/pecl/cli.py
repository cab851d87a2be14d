"""Command-line front end.

Subcommands: run, audit, compose, metrics, sweep.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric failure.  Partial outputs of a failed
command are removed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .artifacts import (
    check_bundle,
    read_matrix_csv,
    write_audit_csv,
    write_run_bundle,
)
from .config import config_from_dict, config_to_dict, parse_config
from .corpus import compute_corpus_stats, load_corpus
from .errors import DataError, NumericError, PeclError
from .privacy import PrivacyLedger, assign_budgets, compose_sequence
from .sensitivity import build_profile
from .synthetic import synthetic_stream
from .trainer import RunConfig, metrics_summary, run_continual
from .tinylm import init_adapter, init_lm


class UsageError(PeclError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's default 2
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="pecl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train sequentially and write the results bundle")
    run_p.add_argument("--config", type=Path, default=None)
    run_p.add_argument("--out", type=Path, required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--mode", choices=("pecl", "seqft", "uniform_dp"), default=None)
    run_p.add_argument("--self-check", action="store_true",
                       help="validate every emitted file against its schema")

    audit_p = sub.add_parser("audit", help="write the per-token sensitivity report")
    audit_p.add_argument("--config", type=Path, default=None)
    audit_p.add_argument("--out", type=Path, required=True)
    audit_p.add_argument("--seed", type=int, default=None)

    comp_p = sub.add_parser("compose", help="compose a ledger into a total budget")
    comp_p.add_argument("--ledger", type=Path, required=True)
    comp_p.add_argument("--delta", type=float, default=1e-6)
    comp_p.add_argument("--delta-prime", type=float, default=1e-6)

    met_p = sub.add_parser("metrics", help="recompute bwt/last/avg from a matrix.csv")
    met_p.add_argument("--matrix", type=Path, required=True)

    sweep_p = sub.add_parser("sweep", help="seeded grid over one hyperparameter")
    sweep_p.add_argument("--config", type=Path, default=None)
    sweep_p.add_argument("--out", type=Path, required=True)
    sweep_p.add_argument("--sweep-param", required=True,
                         choices=("alpha", "theta", "lambda_unlearn"))
    sweep_p.add_argument("--sweep-values", required=True,
                         help="comma-separated numeric values")
    sweep_p.add_argument("--seed", type=int, default=None)
    return parser


def _load_run_config(args) -> RunConfig:
    config = parse_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        overrides["mode"] = args.mode
    if overrides:
        merged = config_to_dict(config)
        merged.update(overrides)
        config = config_from_dict(merged)
    return config


def _resolve_corpora(config: RunConfig):
    if config.corpus == "synthetic":
        stream = synthetic_stream(
            num_tasks=config.num_tasks,
            train_per_task=config.train_per_task,
            eval_per_task=config.eval_per_task,
            seed=config.seed,
        )
        return stream.tasks
    return load_corpus(config.corpus)


class _Outputs:
    """Track created files so a failed command leaves nothing behind."""

    def __init__(self):
        self.paths: list[Path] = []

    def extend(self, paths) -> None:
        self.paths.extend(paths)

    def discard(self) -> None:
        for p in self.paths:
            try:
                Path(p).unlink(missing_ok=True)
            except OSError:
                pass


def _cmd_run(args) -> int:
    config = _load_run_config(args)
    corpora = _resolve_corpora(config)
    outputs = _Outputs()
    try:
        result = run_continual(config, corpora)
        outputs.extend(write_run_bundle(args.out, result, config))
        if args.self_check:
            for name in check_bundle(args.out):
                print(f"schema ok: {name}")
        summary = metrics_summary(result.matrix)
        print(f"bwt={summary['bwt']!r} last={summary['last']!r} avg={summary['avg']!r}")
        print(f"ledger records: {len(result.ledger)}")
        return 0
    except BaseException:
        outputs.discard()
        raise


def _cmd_audit(args) -> int:
    config = _load_run_config(args)
    corpora = _resolve_corpora(config)
    vocab = corpora[0].vocab
    sens_cfg = config.sensitivity.bind(vocab)
    stats = compute_corpus_stats(corpora, config.tau)
    model = init_lm((len(vocab), config.d_emb, config.n_ctx, config.d_hidden), config.seed)
    adapter = init_adapter(model, config.rank, config.seed, task_id=corpora[0].task_id)

    rows = []
    for task in corpora:
        for seq in task.train:
            profile = assign_budgets(
                build_profile(model, adapter, stats, seq, sens_cfg), config.privacy
            )
            for pos in range(len(profile)):
                rows.append(
                    {
                        "position": pos + 1,
                        "surface": vocab.surface_of(profile.tokens[pos]),
                        "score1": float(profile.score1[pos]),
                        "score2": float(profile.score2[pos]),
                        "score": float(profile.score[pos]),
                        "epsilon": float(profile.epsilon[pos]),
                        "sigma": float(profile.sigma[pos]),
                        "stopword": bool(profile.is_stopword[pos]),
                    }
                )
    outputs = _Outputs()
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "audit.csv"
        outputs.extend([path])
        write_audit_csv(path, rows)
        print(f"wrote {path} ({len(rows)} token rows)")
        return 0
    except BaseException:
        outputs.discard()
        raise


def _cmd_compose(args) -> int:
    ledger = PrivacyLedger.from_csv(args.ledger, delta=args.delta,
                                    delta_prime=args.delta_prime)
    eps_total, delta_total = compose_sequence(ledger, args.delta_prime)
    print(f"epsilon_total={eps_total!r} delta_total={delta_total!r} L={len(ledger)}")
    return 0


def _cmd_metrics(args) -> int:
    matrix = read_matrix_csv(args.matrix)
    summary = metrics_summary(matrix)
    print(f"bwt={summary['bwt']!r} last={summary['last']!r} avg={summary['avg']!r}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_run_config(args)
    try:
        values = [float(v) for v in args.sweep_values.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--sweep-values must be numeric: {exc}") from exc
    if not values:
        raise UsageError("--sweep-values is empty")

    base = config_to_dict(config)
    outputs = _Outputs()
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "sweep.csv"
        outputs.extend([path])
        lines = ["param,value,bwt,last,avg"]
        for value in values:
            point = dict(base)
            point[args.sweep_param] = value
            point_config = config_from_dict(point)
            result = run_continual(point_config, _resolve_corpora(point_config))
            summary = metrics_summary(result.matrix)
            lines.append(
                f"{args.sweep_param},{value!r},{summary['bwt']!r},"
                f"{summary['last']!r},{summary['avg']!r}"
            )
            print(lines[-1])
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return 0
    except BaseException:
        outputs.discard()
        raise


_COMMANDS = {
    "run": _cmd_run,
    "audit": _cmd_audit,
    "compose": _cmd_compose,
    "metrics": _cmd_metrics,
    "sweep": _cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
