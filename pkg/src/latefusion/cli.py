"""Command line entry point: ``latefusion {synth,eval,compare}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .fusion import METHODS, FusionConfig
from .harness import (
    ExperimentPlan,
    best_unimodal,
    config_label,
    emit_report,
    per_class_report,
    render_comparison,
    run_plan,
)
from .ingestion import (
    ModalityRegistry,
    file_digest,
    load_catalog,
    load_group_file,
    load_predictions,
    write_catalog,
    write_predictions,
)
from .metrics import GROUPS, assign_groups
from .synth import (
    ModalityProfile,
    SynthSettings,
    generate,
    imbalanced_weights,
    synthetic_catalog,
)

OUTPUT_DIR_ENV = "LATEFUSION_OUTPUT_DIR"

log = logging.getLogger("latefusion")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _default_out_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, ".")


def _add_input_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--predictions", required=True, help="prediction dump (JSON Lines)")
    p.add_argument("--catalog", required=True, help="class catalog (CSV/TSV)")
    p.add_argument("--group-file", help="explicit rare/common assignment; overrides the threshold")
    p.add_argument("--rare-threshold", type=int, help="classes with fewer training examples are rare")
    p.add_argument("--lenient", action="store_true",
                   help="evaluate samples on the modalities they have and warn on unknown fields")
    p.add_argument("--renormalize", action="store_true", help="rescale score vectors to sum to 1")
    p.add_argument("--tolerance", type=float, default=1e-4, help="allowed deviation of score sums from 1")
    p.add_argument("--seed", type=int, default=0, help="seed of the modality permutation")
    p.add_argument("--borda-k", type=int, default=FusionConfig.borda_k)
    p.add_argument("--rrf-m", type=int, default=FusionConfig.rrf_m)
    p.add_argument("--gamma", type=float, default=FusionConfig.product_gamma)
    p.add_argument("--product-floor", type=float, default=0.0)
    p.add_argument("--workers", type=int, default=1, help="threads used for grid cells")
    p.add_argument("--out-dir", default=None, help=f"output directory (default ${OUTPUT_DIR_ENV} or .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latefusion", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic prediction dump and catalog")
    ps.add_argument("--classes", type=int, default=10)
    ps.add_argument("--samples", type=int, default=1000)
    ps.add_argument("--modalities", type=int, default=8)
    ps.add_argument("--accuracy", type=_float_list, default=[0.6],
                    help="one accuracy target, or one per modality")
    ps.add_argument("--concentration", type=float, default=4.0)
    ps.add_argument("--evidence", type=float, default=1.0)
    ps.add_argument("--disjoint-confusion", action="store_true",
                    help="each modality confuses a class with a different neighbour")
    ps.add_argument("--profiles", help="JSON list of modality profiles (overrides the flags above)")
    ps.add_argument("--imbalance", type=float, default=1.0,
                    help="ratio between the most and least frequent class")
    ps.add_argument("--rare-threshold", type=int, help="write a group column using this threshold")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out-dir", default=None)

    pe = sub.add_parser("eval", help="evaluate the fusion grid on a prediction dump")
    _add_input_args(pe)
    pe.add_argument("--methods", type=_str_list, default=METHODS)
    pe.add_argument("--modality-counts", type=_int_list, default=None)
    pe.add_argument("--topk", type=_int_list, default=(1, 5))
    pe.add_argument("--groups", type=_str_list, default=GROUPS)
    pe.add_argument("--format", type=_str_list, default=("csv",), help="csv, markdown or both")
    pe.add_argument("--per-class", action="store_true", help="include per-class accuracies")

    pc = sub.add_parser("compare", help="per-class unimodal vs multimodal comparison")
    _add_input_args(pc)
    pc.add_argument("--unimodal", help="modality to compare (default: best balanced top-1)")
    pc.add_argument("--method", default="product")
    pc.add_argument("--modality-count", type=int, default=None,
                    help="size of the fused subset (default: all modalities)")
    pc.add_argument("--format", type=_str_list, default=("csv",))
    return parser


def _load_inputs(args):
    catalog = load_catalog(args.catalog)
    if args.group_file:
        catalog = assign_groups(catalog, explicit=load_group_file(args.group_file, catalog))
    elif args.rare_threshold is not None:
        catalog = assign_groups(catalog, args.rare_threshold)
    samples = load_predictions(
        args.predictions, catalog, renormalize=args.renormalize,
        tolerance=args.tolerance, strict=not args.lenient,
    )
    inputs = {
        Path(args.predictions).name: file_digest(args.predictions),
        Path(args.catalog).name: file_digest(args.catalog),
    }
    if args.group_file:
        inputs[Path(args.group_file).name] = file_digest(args.group_file)
    return catalog, samples, inputs


def _config(args) -> FusionConfig:
    return FusionConfig(
        borda_k=args.borda_k, rrf_m=args.rrf_m,
        product_gamma=args.gamma, product_floor=args.product_floor,
    )


def cmd_synth(args) -> int:
    if args.profiles:
        raw = json.loads(Path(args.profiles).read_text(encoding="utf-8"))
        profiles = []
        for obj in raw:
            bias = obj.pop("confusion_bias", None)
            if bias is not None:
                bias = {int(k): [int(x) for x in v] for k, v in bias.items()}
            profiles.append(ModalityProfile(confusion_bias=bias, **obj))
    else:
        settings = SynthSettings(
            modalities=args.modalities, accuracies=args.accuracy,
            concentration=args.concentration, evidence=args.evidence,
            disjoint_confusion=args.disjoint_confusion,
        )
        profiles = settings.profiles(args.classes)
    weights = None if args.imbalance == 1.0 else imbalanced_weights(args.classes, args.imbalance)
    samples = generate(profiles, args.classes, args.samples, args.seed, weights)
    catalog = synthetic_catalog(samples, args.classes, args.rare_threshold)
    out = Path(args.out_dir or _default_out_dir())
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(samples, out / "predictions.jsonl")
    write_catalog(catalog, out / "catalog.csv")
    print(out / "predictions.jsonl")
    print(out / "catalog.csv")
    return 0


def cmd_eval(args) -> int:
    catalog, samples, inputs = _load_inputs(args)
    plan = ExperimentPlan(
        methods=tuple(args.methods), modality_counts=args.modality_counts,
        subset_seed=args.seed, topk=tuple(args.topk), groups=tuple(args.groups),
        config=_config(args), strict=not args.lenient, tolerance=args.tolerance,
    )
    report = run_plan(plan, samples, catalog, workers=args.workers, inputs=inputs)
    paths = emit_report(report, args.format, args.out_dir or _default_out_dir(), args.per_class)
    for p in paths:
        print(p)
    return 0


def cmd_compare(args) -> int:
    catalog, samples, inputs = _load_inputs(args)
    registry = ModalityRegistry.from_samples(samples)
    count = len(registry) if args.modality_count is None else args.modality_count
    plan = ExperimentPlan(
        methods=(args.method,), modality_counts=(count,), subset_seed=args.seed,
        topk=(1,), groups=("all",), config=_config(args),
        strict=not args.lenient, tolerance=args.tolerance,
    )
    report = run_plan(plan, samples, catalog, registry, workers=args.workers, inputs=inputs)
    uni = args.unimodal or best_unimodal(report)
    rows = per_class_report(report, uni, args.method, count)
    out = Path(args.out_dir or _default_out_dir())
    out.mkdir(parents=True, exist_ok=True)
    suffix = {"csv": ".csv", "markdown": ".md"}
    for fmt in args.format:
        if fmt not in suffix:
            raise ValueError(f"unknown format {fmt!r}")
        text = render_comparison(rows, fmt, uni, config_label(args.method, count))
        path = out / f"comparison{suffix[fmt]}"
        path.write_text(text, encoding="utf-8")
        print(path)
    return 0


COMMANDS = {"synth": cmd_synth, "eval": cmd_eval, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError, TypeError) as exc:
        err = {"error": type(exc).__name__, "command": args.command, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
