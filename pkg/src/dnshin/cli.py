"""Command line entry points.

Subcommands:
  run           full windowed pipeline over real or generated inputs
  synth         generate a synthetic scene to a directory
  sweep-labels  accuracy as the retained label fraction varies
  sweep-noise   accuracy as retained labels are randomly flipped
  per-metapath  each similarity on its own against the weighted blend
  eval          recompute metrics from a verdict file and truth labels

Every pipeline subcommand accepts --config pointing at a JSON file plus
individual flag overrides; flags win over the file.  Exit status is 0 on
success and 1 on any input, configuration, or processing error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .classify import evaluate_assignments, read_verdicts, resolve_priors
from .config import EngineConfig, load_config, override_config
from .errors import DnshinError
from .ingest import load_labels
from .synth import default_scenario, generate, scenario_from_dict


def _config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="JSON engine config")
    paths = parser.add_argument_group("input and output paths")
    paths.add_argument("--logs", metavar="FILE", help="DNS query log (TSV)")
    paths.add_argument("--pdns", metavar="FILE", help="passive DNS records (JSONL)")
    paths.add_argument("--labels", metavar="FILE", action="append",
                       help="label CSV; repeat for several files")
    paths.add_argument("--segment-map", metavar="FILE",
                       help="client to network segment CSV")
    paths.add_argument("--truth", metavar="FILE",
                       help="ground-truth label CSV for evaluation")
    paths.add_argument("--out", metavar="DIR", dest="out_dir",
                       help="output directory")
    engine = parser.add_argument_group("engine settings")
    engine.add_argument("--mode", choices=("binary", "multiclass", "two-stage"))
    engine.add_argument("--classes", dest="n_classes", type=int,
                        help="number of classes including benign")
    engine.add_argument("--seed", type=int)
    engine.add_argument("--window-seconds", type=int)
    engine.add_argument("--name-clusters", type=int,
                        help="clusters for the lexical grouping step")
    engine.add_argument("--score-knn", type=int,
                        help="neighborhood size for metapath weighting")
    engine.add_argument("--label-conflict", choices=("drop", "randomize"))
    engine.add_argument("--prior-weight", type=float,
                        help="pull strength of the labeled priors")
    engine.add_argument("--solid-margin", type=float,
                        help="confidence needed to call a verdict solid")
    engine.add_argument("--tol", type=float)
    engine.add_argument("--max-iter", type=int)
    filtering = parser.add_argument_group("graph filtering")
    filtering.add_argument("--popular-pct", type=float)
    filtering.add_argument("--heavy-client-pct", type=float)
    filtering.add_argument("--min-client-domains", type=int)


_OVERRIDE_KEYS = (
    "logs", "pdns", "labels", "segment_map", "truth", "out_dir",
    "mode", "n_classes", "seed", "window_seconds", "name_clusters",
    "score_knn", "label_conflict", "prior_weight", "solid_margin",
    "tol", "max_iter", "popular_pct", "heavy_client_pct",
    "min_client_domains",
)


def _resolve_config(args: argparse.Namespace) -> EngineConfig:
    config = load_config(args.config) if args.config else EngineConfig()
    updates = {k: getattr(args, k) for k in _OVERRIDE_KEYS}
    return override_config(config, **updates)


def _cmd_run(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    summary = pipeline.run(config)
    if not summary.windows:
        print("no windows")
        return 0
    for w in summary.windows:
        line = (
            f"window [{w.window_start}, {w.window_end}): "
            f"{w.n_domains} domains, {w.n_solid} solid, "
            f"{w.n_unreached} unreached"
        )
        if w.metrics is not None:
            line += f", accuracy {w.metrics.accuracy:.4f}"
        print(line)
    print(f"reports written to {config.paths.out_dir}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    if args.spec:
        payload = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        if args.seed is not None:
            payload["seed"] = args.seed
        if args.windows is not None:
            payload["windows"] = args.windows
        spec = scenario_from_dict(payload)
    else:
        spec = default_scenario(
            seed=args.seed if args.seed is not None else 0,
            windows=args.windows if args.windows is not None else 1,
        )
    files = generate(spec, args.out_dir)
    for path in (files.log_path, files.pdns_path, files.segment_path,
                 files.truth_path):
        print(path)
    return 0


def _parse_float_list(text: str, flag: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise DnshinError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def _cmd_sweep_labels(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    fractions = (
        _parse_float_list(args.fractions, "--fractions")
        if args.fractions else (0.9, 0.7, 0.5, 0.3, 0.1)
    )
    table = pipeline.experiment_label_sweep(config, fractions, args.repeats)
    print(table.to_text(), end="")
    return 0


def _cmd_sweep_noise(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    percents = (
        _parse_float_list(args.noise, "--noise")
        if args.noise else (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)
    )
    table = pipeline.experiment_noise(config, percents, args.repeats, args.retain)
    print(table.to_text(), end="")
    return 0


def _cmd_per_metapath(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    table = pipeline.experiment_per_metapath(config, args.repeats, args.retain)
    print(table.to_text(), end="")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    domains, verdict_set = read_verdicts(args.verdicts)
    truth_entries = load_labels(args.truth)
    if args.binary:
        truth_entries = pipeline.collapse_to_binary(truth_entries)
        n_classes = 2
    else:
        n_classes = args.n_classes
    truth = resolve_priors(domains, truth_entries, n_classes)
    metrics = evaluate_assignments(
        verdict_set.class_ids, truth, n_classes, unreached=verdict_set.unreached
    )
    text = metrics.to_json()
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(text + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dnshin",
        description="Classify domains from windowed DNS activity",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="process every window and write reports")
    _config_flags(p_run)
    p_run.set_defaults(handler=_cmd_run)

    p_synth = sub.add_parser("synth", help="generate a synthetic scene")
    p_synth.add_argument("--out", metavar="DIR", dest="out_dir", default="scene")
    p_synth.add_argument("--seed", type=int)
    p_synth.add_argument("--windows", type=int)
    p_synth.add_argument("--spec", metavar="FILE",
                         help="scenario JSON; overrides the default scene")
    p_synth.set_defaults(handler=_cmd_synth)

    p_sweep = sub.add_parser("sweep-labels",
                             help="vary the retained label fraction")
    _config_flags(p_sweep)
    p_sweep.add_argument("--fractions", metavar="LIST",
                         help="comma-separated fractions in (0, 1]")
    p_sweep.add_argument("--repeats", type=int, default=10)
    p_sweep.set_defaults(handler=_cmd_sweep_labels)

    p_noise = sub.add_parser("sweep-noise",
                             help="flip a share of labels to wrong classes")
    _config_flags(p_noise)
    p_noise.add_argument("--noise", metavar="LIST",
                         help="comma-separated flip percentages in [0, 100]")
    p_noise.add_argument("--repeats", type=int, default=10)
    p_noise.add_argument("--retain", type=float, default=0.7)
    p_noise.set_defaults(handler=_cmd_sweep_noise)

    p_per = sub.add_parser("per-metapath",
                           help="compare each similarity to the blend")
    _config_flags(p_per)
    p_per.add_argument("--repeats", type=int, default=10)
    p_per.add_argument("--retain", type=float, default=0.7)
    p_per.set_defaults(handler=_cmd_per_metapath)

    p_eval = sub.add_parser("eval",
                            help="score a verdict file against truth labels")
    p_eval.add_argument("--verdicts", metavar="FILE", required=True)
    p_eval.add_argument("--truth", metavar="FILE", required=True)
    p_eval.add_argument("--classes", dest="n_classes", type=int, default=2)
    p_eval.add_argument("--binary", action="store_true",
                        help="collapse family labels to one malicious class")
    p_eval.add_argument("--out", metavar="DIR", dest="out_dir")
    p_eval.set_defaults(handler=_cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (DnshinError, OSError, json.JSONDecodeError) as exc:
        print(f"dnshin: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
