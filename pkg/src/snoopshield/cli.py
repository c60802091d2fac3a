"""Command-line front end: generate / attack / shape / evaluate.

Exit codes: 0 success, 2 invalid experiment spec or usage, 3 malformed
trace input, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .harness import (
    ExperimentSpec,
    SpecError,
    attack,
    dump_json,
    evaluate,
    read_corpus,
    write_corpus,
)
from .infer import write_activities
from .shield import (
    Discipline,
    ShapingConfig,
    cellify,
    overhead_report,
    shape,
)
from .trace import MICROS, Direction, TraceFormatError, parse_trace

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_PARSE = 3
EXIT_RUNTIME = 4


def _load_spec(args) -> ExperimentSpec:
    spec = ExperimentSpec.from_file(args.spec) if args.spec else ExperimentSpec.default()
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    return spec


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def cmd_generate(args) -> int:
    spec = _load_spec(args)
    paths = write_corpus(spec, args.out)
    for path in paths:
        print(path)
    return EXIT_OK


def cmd_attack(args) -> int:
    corpus, truth = read_corpus(args.traces)
    spec = _load_spec(args)
    if args.sample_seconds:
        spec = ExperimentSpec.from_dict({
            **spec.to_dict(),
            "attack": {
                "sample_seconds": list(_int_list(args.sample_seconds)),
                "window_seconds": list(_int_list(args.window_seconds))
                if args.window_seconds else list(spec.window_grid),
                "k": args.k if args.k is not None else spec.k,
                "folds": args.folds if args.folds is not None else spec.folds,
            },
        })
    report, activities = attack(corpus, spec, truth)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "attack_report.json").write_text(dump_json(report))
    merged = sorted((a for acts in activities.values() for a in acts),
                    key=lambda a: (a.time_us, a.device_label))
    with open(outdir / "activities.jsonl", "w") as fp:
        write_activities(merged, fp)
    print(outdir / "attack_report.json")
    print(outdir / "activities.jsonl")
    return EXIT_OK


def cmd_shape(args) -> int:
    text = Path(args.trace).read_text()
    records = parse_trace(text)
    direction = Direction.UPLOAD if args.direction == "up" else Direction.DOWNLOAD
    cfg = ShapingConfig(
        rate=args.rate,
        cell_size=args.cell_size,
        discipline=Discipline(args.discipline),
        vit_mean=args.vit_mean,
        vit_stddev=args.vit_stddev,
        seed=args.seed if args.seed is not None else 0,
        direction=direction,
    )
    leg = [p for p in records if p.direction is direction]
    span = (records[-1].timestamp / MICROS) if records else 0.0
    horizon = args.horizon if args.horizon is not None else span
    if horizon < span:
        raise SpecError(f"horizon {horizon}s is shorter than the trace span {span}s")
    schedule = shape(cellify(leg, cfg.cell_size), cfg, horizon)
    report = overhead_report(schedule, horizon if horizon > 0 else 1.0)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "schedule.csv", "w") as fp:
        schedule.write_csv(fp)
    (outdir / "overhead.json").write_text(report.to_json())
    print(outdir / "schedule.csv")
    print(outdir / "overhead.json")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    spec = _load_spec(args)
    report, activities = evaluate(spec)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "evaluation_report.json").write_text(report.to_json())
    merged = sorted((a for acts in activities.values() for a in acts),
                    key=lambda a: (a.time_us, a.device_label))
    with open(outdir / "activities.jsonl", "w") as fp:
        write_activities(merged, fp)
    print(outdir / "evaluation_report.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snoopshield",
        description="Evaluate smart-home traffic-metadata attacks and "
                    "link-padding defenses on synthetic traces.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="synthesize a labeled trace corpus")
    p_gen.add_argument("--spec", help="experiment spec JSON (default: packaged spec)")
    p_gen.add_argument("--seed", type=int, help="override the spec seed")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.set_defaults(func=cmd_generate)

    p_att = sub.add_parser("attack", help="run identification + inference on traces")
    p_att.add_argument("--traces", required=True, help="directory of trace CSVs")
    p_att.add_argument("--spec", help="experiment spec JSON for attack parameters")
    p_att.add_argument("--seed", type=int, help="override the spec seed")
    p_att.add_argument("--out", required=True, help="output directory")
    p_att.add_argument("--sample-seconds", help="comma list, e.g. 1,5,10")
    p_att.add_argument("--window-seconds", help="comma list, e.g. 60,300,600")
    p_att.add_argument("--k", type=int, help="neighbor count (odd)")
    p_att.add_argument("--folds", type=int, help="cross-validation folds")
    p_att.set_defaults(func=cmd_attack)

    p_shp = sub.add_parser("shape", help="shape one trace and report overhead")
    p_shp.add_argument("--trace", required=True, help="trace CSV to shape")
    p_shp.add_argument("--out", required=True, help="output directory")
    p_shp.add_argument("--rate", type=float, help="shaped rate in bytes/s (CIT)")
    p_shp.add_argument("--cell-size", type=int, default=512)
    p_shp.add_argument("--discipline", choices=["cit", "vit"], default="cit")
    p_shp.add_argument("--vit-mean", type=float, default=1.0)
    p_shp.add_argument("--vit-stddev", type=float, default=0.010)
    p_shp.add_argument("--seed", type=int, default=0)
    p_shp.add_argument("--horizon", type=float, help="seconds (default: trace span)")
    p_shp.add_argument("--direction", choices=["up", "down"], default="up")
    p_shp.set_defaults(func=cmd_shape)

    p_eval = sub.add_parser("evaluate", help="full raw/tunnel/shaped comparison")
    p_eval.add_argument("--spec", help="experiment spec JSON (default: packaged spec)")
    p_eval.add_argument("--seed", type=int, help="override the spec seed")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except TraceFormatError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
