"""Command-line surface for the open-set recognition pipeline.

Commands mirror the three evaluation phases (enroll, calibrate, identify)
plus data generation, protocol splitting, toy-head training, full evaluation,
and the loss/k ablation sweeps. Seeds are mandatory on every stochastic
command so runs are reproducible; identical flags and seeds produce identical
artifacts except for measured timings.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from . import formats
from .collection import EmbeddingCollection
from .core import compute_prototype
from .decision import (
    CRITERION_FPR_AT_MOST,
    CRITERION_MAX_CCR_MINUS_FPR,
    Decision,
    DecisionRule,
    decide,
)
from .errors import OpenVeinError, UnattainableTargetError
from .metrics import aggregate_reports
from .pipeline import (
    HeadTrainingSpec,
    calibrate_on_split,
    embed_with_head,
    enroll_gallery,
    execute_protocol,
    run_end_to_end,
)
from .protocol import (
    SPLIT_PRESETS,
    SplitConfig,
    build_protocol,
    manifest_bytes,
    split_from_manifest,
    subjects_from_collection,
)
from .synth import SynthConfig, generate_clusters, generate_raw_features
from .training import LOSS_CHOICES, SamplerConfig, ToyHead, train_toy_head


def _add_split_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--known-fraction", type=float, default=0.7,
                        help="fraction of subjects treated as known (default 0.7)")
    parser.add_argument("--fractions", default=None, metavar="TRAIN,VAL,TEST",
                        help="train/val/test fractions over known classes, e.g. 0.6,0.1,0.3")
    parser.add_argument("--preset", choices=sorted(SPLIT_PRESETS),
                        help="named train/val/test fraction preset")
    parser.add_argument("--n-enroll", type=int, default=7,
                        help="enrollment samples per class in sample mode (default 7)")
    parser.add_argument("--mode", choices=("sample_based", "session_based"),
                        default="sample_based")


def _split_config(args) -> SplitConfig:
    if args.fractions and args.preset:
        raise ValueError("--fractions and --preset are mutually exclusive")
    if args.preset:
        train, val, test = SPLIT_PRESETS[args.preset]
    elif args.fractions:
        parts = [float(x) for x in args.fractions.split(",")]
        if len(parts) != 3:
            raise ValueError("--fractions needs exactly three comma-separated values")
        train, val, test = parts
    else:
        train, val, test = SPLIT_PRESETS["60-10-30"]
    return SplitConfig(
        known_fraction=args.known_fraction,
        train_fraction=train,
        val_fraction=val,
        test_fraction=test,
        n_enroll=args.n_enroll,
        mode=args.mode,
        seed=args.seed,
    )


def _add_training_flags(parser: argparse.ArgumentParser, require_loss: bool) -> None:
    parser.add_argument("--loss" if require_loss else "--train-loss",
                        choices=LOSS_CHOICES, required=require_loss, default=None,
                        help="metric-learning loss for the toy head")
    parser.add_argument("--dim-out", type=int, default=None,
                        help="embedding dimension produced by the toy head")
    parser.add_argument("--lr", type=float, default=0.5, help="learning rate (default 0.5)")
    parser.add_argument("--epochs", type=int, default=200, help="training epochs (default 200)")
    parser.add_argument("--p", type=int, default=16, help="identities per batch (default 16)")
    parser.add_argument("--k-per-class", type=int, default=4,
                        help="samples per identity per batch (default 4)")
    parser.add_argument("--head-seed", type=int, default=0,
                        help="weight initialization seed (default 0)")


def _load_collection(path, head_path=None) -> EmbeddingCollection:
    col = (formats.read_embeddings_csv(path) if str(path).endswith(".csv")
           else formats.read_embeddings(path))
    if head_path is not None:
        head = formats.read_head(head_path)
        col = embed_with_head(col, head)
    return col


def _split_provenance(split_blob: bytes, cfg: SplitConfig) -> dict:
    return {
        "split_manifest_sha256": hashlib.sha256(split_blob).hexdigest(),
        "seeds": {"split": cfg.seed},
    }


# -- commands ---------------------------------------------------------------------

def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        num_classes=args.classes,
        dim=args.dim,
        samples_per_class=args.samples_per_class,
        noise_sigma=args.noise_sigma,
        raw_feature_dim=args.raw_dim,
        seed=args.seed,
    )
    col = generate_clusters(cfg)
    formats.write_embeddings(col, args.out)
    print(f"wrote {len(col)} embeddings (dim {col.dimension}) to {args.out}")
    if args.raw_out:
        if args.raw_dim is None:
            raise ValueError("--raw-out needs --raw-dim")
        raw = generate_raw_features(cfg)
        formats.write_embeddings(raw, args.raw_out)
        print(f"wrote {len(raw)} raw feature rows (dim {raw.dimension}) to {args.raw_out}")
    manifest = args.manifest or f"{args.out}.subjects.json"
    by_subject: dict[str, list[str]] = {}
    for label, subject in zip(col.labels, col.subjects):
        classes = by_subject.setdefault(subject, [])
        if label not in classes:
            classes.append(label)
    doc = {"format": "openvein-subjects", "subjects": by_subject}
    Path(manifest).write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote subject manifest to {manifest}")
    return 0


def _cmd_split(args) -> int:
    col = _load_collection(args.embeddings)
    cfg = _split_config(args)
    split = build_protocol(subjects_from_collection(col), cfg)
    Path(args.out).write_bytes(manifest_bytes(split))
    print(
        f"split: {len(split.known_subjects)} known / {len(split.unknown_subjects)} unknown "
        f"subjects; {len(split.train_classes)}/{len(split.val_classes)}/"
        f"{len(split.test_classes)} train/val/test classes -> {args.out}"
    )
    return 0


def _cmd_train_toy(args) -> int:
    features = _load_collection(args.features)
    if args.split:
        split = split_from_manifest(json.loads(Path(args.split).read_bytes()))
        train_rows = [
            s.ref for c in split.train_classes for s in split.class_samples[c]
        ]
        features = features.take(train_rows)
    dim_out = args.dim_out or features.dimension
    head = ToyHead.initialize(
        dim_in=features.dimension,
        dim_out=dim_out,
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.head_seed,
    )
    sampler = SamplerConfig(P=args.p, K=args.k_per_class, seed=args.seed)
    trained, trace = train_toy_head(features, head, loss=args.loss, sampler=sampler)
    formats.write_head(trained, args.out)
    print(f"trained {args.loss} head for {args.epochs} epochs; "
          f"loss {trace[0]:.6f} -> {trace[-1]:.6f}; wrote {args.out}")
    if args.trace:
        formats.write_loss_trace_csv(trace, args.trace)
        print(f"wrote loss trace to {args.trace}")
    return 0


def _cmd_enroll(args) -> int:
    if args.append:
        if not (args.gallery and args.class_id):
            raise ValueError("--append needs --gallery and --class-id")
        gallery, threshold, rule_k, provenance = formats.read_gallery(args.gallery)
        col = _load_collection(args.embeddings, args.head)
        rows = col.rows_for_class(args.class_id)
        if rows.size == 0:
            raise ValueError(f"class {args.class_id!r} not present in {args.embeddings}")
        prototype = compute_prototype(args.class_id, col.vectors[rows])
        gallery = gallery.append(prototype)
        provenance = dict(provenance)
        provenance.setdefault("appended", []).append(args.class_id)
        out = args.out or args.gallery
        formats.write_gallery(gallery, out, threshold=threshold, rule_k=rule_k,
                              provenance=provenance)
        print(f"appended prototype for {args.class_id!r}; gallery now "
              f"{len(gallery)} classes -> {out}")
        return 0
    if not args.split:
        raise ValueError("enroll needs --split (or --append)")
    col = _load_collection(args.embeddings, args.head)
    split_blob = Path(args.split).read_bytes()
    split = split_from_manifest(json.loads(split_blob))
    gallery = enroll_gallery(col, split, split.test_classes)
    provenance = _split_provenance(split_blob, split.config)
    out = args.out or args.gallery
    if not out:
        raise ValueError("enroll needs --out")
    formats.write_gallery(gallery, out, threshold=None, rule_k=args.k,
                          provenance=provenance)
    print(f"enrolled {len(gallery)} prototypes (dim {gallery.dimension}) -> {out}")
    return 0


def _cmd_calibrate(args) -> int:
    gallery, _, rule_k, provenance = formats.read_gallery(args.gallery)
    col = _load_collection(args.embeddings, args.head)
    split = split_from_manifest(json.loads(Path(args.split).read_bytes()))
    k = args.k if args.k is not None else rule_k
    result = calibrate_on_split(
        col, split, k,
        criterion=args.criterion,
        fpr_target=args.fpr_target,
    )
    if result.target_unattainable:
        raise UnattainableTargetError(
            f"no threshold satisfies FPR <= {args.fpr_target}"
        )
    out = args.out or args.gallery
    formats.write_gallery(gallery, out, threshold=result.threshold, rule_k=k,
                          provenance=provenance)
    print(f"calibrated tau = {result.threshold:.6f} "
          f"(CCR {result.achieved_ccr:.4f}, FPR {result.achieved_fpr:.4f}) -> {out}")
    if args.trace:
        formats.write_sweep_trace_csv(result, args.trace)
        print(f"wrote sweep trace to {args.trace}")
    return 0


def _decision_row(index: int, decision: Decision) -> str:
    outcome = "accept" if decision.accepted else "reject"
    class_id = decision.class_id or ""
    runner_up = "" if decision.runner_up_score is None else repr(decision.runner_up_score)
    return f"{index},{outcome},{class_id},{repr(decision.score)},{runner_up}"


def _cmd_identify(args) -> int:
    gallery, threshold, rule_k, _ = formats.read_gallery(args.gallery)
    if args.threshold is not None:
        threshold = args.threshold
    if threshold is None:
        raise ValueError(
            "gallery has no calibrated threshold; run calibrate or pass --threshold"
        )
    k = args.k if args.k is not None else rule_k
    probes = _load_collection(args.probes, args.head)
    rule = DecisionRule(k=k, threshold=threshold)
    lines = ["probe_index,outcome,class_id,score,runner_up"]
    accepted = 0
    for i in range(len(probes)):
        decision = decide(probes.vectors[i], gallery, rule)
        accepted += decision.accepted
        lines.append(_decision_row(i, decision))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"identified {len(probes)} probes ({accepted} accepted, "
          f"{len(probes) - accepted} rejected) -> {args.out}")
    return 0


def _eval_one(col, cfg: SplitConfig, args):
    split = build_protocol(subjects_from_collection(col), cfg)
    return execute_protocol(
        col, split, k=args.k,
        criterion=args.criterion, fpr_target=args.fpr_target,
    )


def _collection_for_eval(args) -> EmbeddingCollection:
    if args.train_loss:
        if not args.raw_features:
            raise ValueError("--train-loss needs --raw-features")
        if args.embeddings:
            raise ValueError("--embeddings and --raw-features are mutually exclusive")
        raw = _load_collection(args.raw_features)
        # subject-disjoint: the head sees only train-class rows
        cfg = _split_config(args)
        split = build_protocol(subjects_from_collection(raw), cfg)
        train_rows = [s.ref for c in split.train_classes for s in split.class_samples[c]]
        head = ToyHead.initialize(
            dim_in=raw.dimension,
            dim_out=args.dim_out or raw.dimension,
            learning_rate=args.lr,
            epochs=args.epochs,
            seed=args.head_seed,
        )
        sampler = SamplerConfig(P=args.p, K=args.k_per_class, seed=args.seed)
        head, _ = train_toy_head(raw.take(train_rows), head, loss=args.train_loss,
                                 sampler=sampler)
        return embed_with_head(raw, head)
    if not args.embeddings:
        raise ValueError("eval needs --embeddings (or --raw-features with --train-loss)")
    return _load_collection(args.embeddings)


def _cmd_eval(args) -> int:
    col = _collection_for_eval(args)
    reports = []
    base_cfg = _split_config(args)
    for i in range(args.num_splits):
        cfg = dataclasses.replace(base_cfg, seed=base_cfg.seed + i) if i else base_cfg
        reports.append(_eval_one(col, cfg, args))

    report = reports[0]
    if args.num_splits > 1:
        mean, sd = aggregate_reports(reports)
        doc = formats.report_to_doc(mean)
        doc["splits"] = [formats.report_to_doc(r) for r in reports]
        doc["sd"] = sd
        Path(args.out).write_bytes(
            (json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
             + "\n").encode("utf-8")
        )
        row_report = mean
    else:
        formats.write_report(report, args.out)
        row_report = report
    print(f"wrote report to {args.out}")
    if args.roc_csv:
        formats.write_curve_csv(report.roc.fpr, report.roc.tpr, args.roc_csv,
                                header="fpr,tpr")
        print(f"wrote ROC curve to {args.roc_csv}")
    if args.oscr_csv:
        formats.write_curve_csv(report.oscr.fpr, report.oscr.ccr, args.oscr_csv,
                                header="fpr,ccr")
        print(f"wrote OSCR curve to {args.oscr_csv}")
    print(formats.format_report_header())
    print(formats.format_report_row(row_report))
    return 0


def _cmd_ablate(args) -> int:
    rows: list[tuple[str, object]] = []
    if args.sweep == "k":
        if not args.embeddings:
            raise ValueError("ablate --sweep k needs --embeddings")
        col = _load_collection(args.embeddings)
        cfg = _split_config(args)
        split = build_protocol(subjects_from_collection(col), cfg)
        for k in args.k_values:
            report = execute_protocol(col, split, k=k, criterion=args.criterion,
                                      fpr_target=args.fpr_target)
            rows.append((str(k), report))
        first_col = "k"
    else:
        if not args.raw_features:
            raise ValueError("ablate --sweep loss needs --raw-features")
        raw = _load_collection(args.raw_features)
        cfg = _split_config(args)
        split = build_protocol(subjects_from_collection(raw), cfg)
        train_rows = [s.ref for c in split.train_classes for s in split.class_samples[c]]
        sampler = SamplerConfig(P=args.p, K=args.k_per_class, seed=args.seed)
        for loss in LOSS_CHOICES:
            head = ToyHead.initialize(
                dim_in=raw.dimension,
                dim_out=args.dim_out or raw.dimension,
                learning_rate=args.lr,
                epochs=args.epochs,
                seed=args.head_seed,
            )
            head, _ = train_toy_head(raw.take(train_rows), head, loss=loss,
                                     sampler=sampler)
            col = embed_with_head(raw, head)
            report = execute_protocol(col, split, k=args.k, criterion=args.criterion,
                                      fpr_target=args.fpr_target)
            rows.append((loss, report))
        first_col = "loss"

    width = max(len(first_col), max(len(name) for name, _ in rows))
    table = [f"{first_col:<{width}s}  " + formats.format_report_header()]
    for name, report in rows:
        table.append(f"{name:<{width}s}  " + formats.format_report_row(report))
    text = "\n".join(table)
    print(text)
    if args.table:
        Path(args.table).write_text(text + "\n", encoding="utf-8")
        print(f"wrote comparison table to {args.table}")
    if args.out:
        doc = {
            "format": "openvein-ablation",
            "sweep": args.sweep,
            "variants": {name: formats.report_to_doc(r) for name, r in rows},
        }
        Path(args.out).write_bytes(
            (json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
             + "\n").encode("utf-8")
        )
        print(f"wrote ablation report to {args.out}")
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openvein",
        description="Open-set recognition pipeline: enrollment, calibrated "
                    "rejection, and evaluation over embedding files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic embedding clusters")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--samples-per-class", type=int, required=True)
    p.add_argument("--noise-sigma", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output embedding file")
    p.add_argument("--raw-dim", type=int, default=None)
    p.add_argument("--raw-out", default=None, help="optional raw feature file")
    p.add_argument("--manifest", default=None,
                   help="subject manifest JSON (default: <out>.subjects.json)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("split", help="build a subject-disjoint protocol split")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_split_flags(p)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train-toy", help="train the toy linear embedding head")
    p.add_argument("--features", required=True, help="raw feature file")
    p.add_argument("--split", default=None,
                   help="optional split manifest; restricts training to train classes")
    p.add_argument("--seed", type=int, required=True, help="sampler seed")
    p.add_argument("--out", required=True, help="output head file")
    p.add_argument("--trace", default=None, help="optional loss trace CSV")
    _add_training_flags(p, require_loss=True)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("enroll", help="build a prototype gallery from a split")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--gallery", default=None, help="existing gallery (for --append)")
    p.add_argument("--append", action="store_true",
                   help="append one prototype to an existing gallery")
    p.add_argument("--class-id", default=None, help="class to append")
    p.add_argument("--head", default=None, help="toy head applied to raw features")
    p.add_argument("--k", type=int, default=1, help="decision rule k stored in the gallery")
    p.set_defaults(func=_cmd_enroll)

    p = sub.add_parser("calibrate", help="calibrate the rejection threshold")
    p.add_argument("--gallery", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--k", type=int, default=None,
                   help="decision rule k (default: the gallery's stored k)")
    p.add_argument("--criterion", choices=(CRITERION_MAX_CCR_MINUS_FPR, CRITERION_FPR_AT_MOST),
                   default=CRITERION_MAX_CCR_MINUS_FPR)
    p.add_argument("--fpr-target", type=float, default=None)
    p.add_argument("--trace", default=None, help="sweep trace CSV")
    p.add_argument("--out", default=None, help="output gallery (default: update in place)")
    p.add_argument("--head", default=None)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("identify", help="decide accept/reject for each probe")
    p.add_argument("--gallery", required=True)
    p.add_argument("--probes", required=True)
    p.add_argument("--out", required=True, help="decisions CSV")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None,
                   help="override the gallery's calibrated threshold")
    p.add_argument("--head", default=None)
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("eval", help="run the full protocol and write a report")
    p.add_argument("--embeddings", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--criterion", choices=(CRITERION_MAX_CCR_MINUS_FPR, CRITERION_FPR_AT_MOST),
                   default=CRITERION_MAX_CCR_MINUS_FPR)
    p.add_argument("--fpr-target", type=float, default=None)
    p.add_argument("--roc-csv", default=None)
    p.add_argument("--oscr-csv", default=None)
    p.add_argument("--num-splits", type=int, default=1,
                   help="average over N splits with seeds seed..seed+N-1")
    p.add_argument("--raw-features", default=None,
                   help="raw feature file (enables the toy-head training stage)")
    _add_split_flags(p)
    _add_training_flags(p, require_loss=False)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="repeat eval across losses or k values")
    p.add_argument("--sweep", choices=("k", "loss"), required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--raw-features", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--k", type=int, default=1, help="decision k for the loss sweep")
    p.add_argument("--k-values", type=int, nargs="+", default=[1, 3, 5])
    p.add_argument("--criterion", choices=(CRITERION_MAX_CCR_MINUS_FPR, CRITERION_FPR_AT_MOST),
                   default=CRITERION_MAX_CCR_MINUS_FPR)
    p.add_argument("--fpr-target", type=float, default=None)
    p.add_argument("--out", default=None, help="ablation report JSON")
    p.add_argument("--table", default=None, help="comparison table text file")
    _add_split_flags(p)
    _add_training_flags(p, require_loss=False)
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OpenVeinError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
