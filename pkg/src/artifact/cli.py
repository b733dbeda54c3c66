"""Command-line front end: train, score, report, simulate.

Values resolve in two layers: the INI config file (if given) sets the run
parameters, then explicit command-line flags override individual values.
Every command is deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from artifact.ingest import write_jsonl
from artifact.pipeline import (
    PipelineConfig,
    PipelineError,
    load_pipeline_config,
    score,
    train,
)
from artifact.scenario import (
    ConfigError,
    default_scenario,
    generate_scenario,
    load_scenario_config,
)

logger = logging.getLogger(__name__)

SCORE_HEADER = [
    "window_start_utc",
    "window_end_utc",
    "score",
    "flagged",
    "alert_count",
    "aux_argmax_flips",
    "top_contributions",
]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="INI config file")
    p.add_argument("--out", type=Path, default=None,
                   help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=None,
                   help="master RNG seed")
    p.add_argument("-v", "--verbose", action="store_true",
                   help="chatty logging")


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--snort", action="append", type=Path, default=[],
                   metavar="PATH", help="snort fast-format alert file (repeatable)")
    p.add_argument("--ossec", action="append", type=Path, default=[],
                   metavar="PATH", help="ossec alerts.log file (repeatable)")
    p.add_argument("--jsonl", action="append", type=Path, default=[],
                   metavar="PATH", help="normalized JSONL alert file (repeatable)")
    p.add_argument("--hostmap", type=Path, default=None,
                   help="hostname-to-IP map file")
    p.add_argument("--snort-year", type=int, default=None,
                   help="year for snort timestamps (the format omits it)")
    p.add_argument("--source", choices=("snort", "ossec"), default=None,
                   help="keep only alerts from one IDS")


def _add_window_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window-hours", type=float, default=None,
                   help="window length in hours (default 8)")
    p.add_argument("--training-days", type=float, default=None,
                   help="training span in days (default 7)")
    p.add_argument("--origin-utc", type=str, default=None,
                   help="window grid origin, ISO-8601 UTC")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="artifact",
        description="Role-dynamics anomaly detection over IDS alert streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a role model bundle")
    _add_common(p_train)
    _add_input_flags(p_train)
    _add_window_flags(p_train)
    p_train.add_argument("--max-depth", type=int, default=None,
                         help="feature recursion depth")
    p_train.add_argument("--prune-tolerance", type=float, default=None,
                         help="relative residual below which a feature is redundant")
    p_train.add_argument("--max-roles", type=int, default=None,
                         help="largest role count in the grid search")
    p_train.add_argument("--max-bits", type=int, default=None,
                         help="largest bit width in the grid search")

    p_score = sub.add_parser("score", help="score windows against a bundle")
    _add_common(p_score)
    _add_input_flags(p_score)
    p_score.add_argument("--model", type=Path, required=True,
                         help="trained bundle directory")
    p_score.add_argument("--threshold", type=float, default=None,
                         help="flagging threshold on the role-change score (default 0.05)")
    p_score.add_argument("--layer", default=None,
                         help="restrict the score to one node layer (e.g. logfile)")

    p_report = sub.add_parser("report", help="render a score CSV")
    _add_common(p_report)
    p_report.add_argument("scores_csv", type=Path, help="scores.csv from `score`")

    p_sim = sub.add_parser("simulate", help="generate a synthetic alert stream")
    _add_common(p_sim)
    return parser


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    if args.config is not None:
        cfg = load_pipeline_config(args.config)
    else:
        cfg = PipelineConfig()
    for flag, attr in (
        ("snort", "snort_paths"), ("ossec", "ossec_paths"), ("jsonl", "jsonl_paths"),
    ):
        values = getattr(args, flag, [])
        if values:
            setattr(cfg, attr, list(values))
    overrides = (
        ("hostmap", "hostmap_path"),
        ("snort_year", "snort_year"),
        ("window_hours", "window_hours"),
        ("training_days", "training_days"),
        ("max_depth", "max_depth"),
        ("prune_tolerance", "prune_tolerance"),
        ("max_roles", "max_roles"),
        ("max_bits", "max_bits"),
        ("threshold", "threshold"),
        ("layer", "layer"),
        ("source", "source"),
        ("seed", "seed"),
        ("out", "out_dir"),
    )
    for flag, attr in overrides:
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    if getattr(args, "origin_utc", None) is not None:
        cfg.origin = datetime.fromisoformat(
            args.origin_utc.replace("Z", "+00:00")
        ).timestamp()
    return cfg


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    result = train(cfg)
    sys.stdout.write(result.summary)
    print(f"bundle: {result.bundle_dir}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    result = score(cfg, args.model)
    print(f"scored {len(result.scores)} windows -> {result.csv_path}")
    if result.flagged_windows:
        print(f"flagged windows: {', '.join(map(str, result.flagged_windows))}")
    else:
        print("no windows above threshold")
    return 0


# -- report -------------------------------------------------------------------


def _read_scores_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fp:
        reader = csv.reader(fp)
        try:
            header = next(reader)
        except StopIteration:
            raise PipelineError(f"{path} is empty") from None
        if header != SCORE_HEADER:
            raise PipelineError(
                f"{path} does not look like a scores CSV "
                f"(expected columns {SCORE_HEADER}, found {header})"
            )
        rows = []
        for line in reader:
            if len(line) != len(SCORE_HEADER):
                raise PipelineError(
                    f"{path}: row has {len(line)} cells, expected {len(SCORE_HEADER)}"
                )
            rows.append(dict(zip(SCORE_HEADER, line)))
        return rows


def _epoch(utc: str) -> float:
    return datetime.fromisoformat(utc.replace("Z", "+00:00")).timestamp()


def cmd_report(args: argparse.Namespace) -> int:
    rows = _read_scores_csv(args.scores_csv)
    try:
        for row in rows:  # cheap validation pass before writing anything
            float(row["score"])
            int(row["flagged"])
            int(row["alert_count"])
            _epoch(row["window_start_utc"])
    except ValueError as exc:
        raise PipelineError(f"{args.scores_csv}: unreadable cell ({exc})") from None

    out = args.out if args.out is not None else Path("out")
    out.mkdir(parents=True, exist_ok=True)
    plot_path = out / "plot.dat"
    with open(plot_path, "w", encoding="utf-8") as fp:
        fp.write("# index start_epoch score flagged alert_count\n")
        for i, row in enumerate(rows):
            fp.write(
                f"{i} {_epoch(row['window_start_utc'])!r} {row['score']} "
                f"{row['flagged']} {row['alert_count']}\n"
            )

    flagged = [r for r in rows if r["flagged"] == "1"]
    lines = [
        f"windows scored: {len(rows)}",
        f"windows flagged: {len(flagged)}",
    ]
    for row in flagged:
        lines.append(
            f"  {row['window_start_utc']} .. {row['window_end_utc']}  "
            f"score={float(row['score']):.6f}  alerts={row['alert_count']}"
        )
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(f"plot data: {plot_path}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.config is not None:
        cfg = load_scenario_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
    else:
        cfg = default_scenario(seed=args.seed if args.seed is not None else 7)
    stream = generate_scenario(cfg)
    out = args.out if args.out is not None else Path("out")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "alerts.jsonl"
    write_jsonl(stream, path)
    print(f"wrote {len(stream)} alerts to {path}")
    if cfg.attack is not None:
        print(f"attack windows: {sorted(cfg.attack.windows())}"
              f" ({cfg.attack.total_alerts()} alerts)")
    if cfg.spike is not None:
        print(f"volume-spike window: {cfg.spike.window} "
              f"(x{cfg.spike.multiplier})")
    return 0


COMMANDS = {
    "train": cmd_train,
    "score": cmd_score,
    "report": cmd_report,
    "simulate": cmd_simulate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (PipelineError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
