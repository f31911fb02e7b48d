"""The ``content-probe`` command line.

One binary, subcommands per tool: ``perturb``, ``correlate``,
``hashtags``, ``rmac``, ``knn``, ``probe``, ``report`` and ``pipeline``.
Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
Relative image paths inside a manifest resolve against the manifest
file's directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import (
    AttributionConfig,
    HeatMap,
    ImageAttribution,
    correlation_matrix,
    read_matrix_csv,
    write_matrix_csv,
)
from .core_io import (
    parse_manifest,
    read_raster,
    read_tensor,
    write_raster,
    write_tensor,
)
from .errors import ToolkitError, ValidationError
from .hashtag import (
    Dictionary,
    EmbeddingTable,
    aggregate_image_hashtags,
    filter_hashtags,
    normalize_hashtag,
    word_break,
)
from .perturb import Family, Fill, PerturbationSpec, Target, apply_perturbation
from .pipeline import (
    PipelineConfig,
    config_from_mapping,
    parse_config_file,
    run_pipeline,
)
from .probe import (
    ProbeModel,
    TrainConfig,
    aggregate_runs,
    macro_f1,
    normalize_target,
    train_probe,
)
from .report.figures import render_bars, render_heatgrid
from .report.svg import emit_bars, emit_heatgrid
from .report.tables import load_bar_series
from .retrieval import build_index, link_hashtags, load_index, knn_query, rmac, save_index
from .rng import per_image_seed

log = logging.getLogger("content_probe")


def _resolve_image_path(manifest_path: Path, image_path: str) -> Path:
    path = Path(image_path)
    return path if path.is_absolute() else manifest_path.parent / path


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])


# ---------------------------------------------------------------- perturb

def _cmd_perturb(args) -> int:
    manifest_path = Path(args.manifest)
    records = parse_manifest(manifest_path)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    family = Family(args.family)
    target = Target(args.target)
    for rec in records:
        image = read_raster(_resolve_image_path(manifest_path, rec.image_path))
        spec = PerturbationSpec(
            target=target,
            family=family,
            level=args.level,
            seed=per_image_seed(args.seed, rec.image_id),
            fill=Fill(args.fill),
        )
        modified = apply_perturbation(
            image, rec.bboxes, spec,
            tex_levels=args.tex_levels, tex_iters=args.tex_iters,
        )
        name = f"{rec.image_id}__{family.value}{args.level}_{target.value}.png"
        write_raster(modified, out_dir / name)
        log.debug("wrote %s", name)
    log.info("perturbed %d images into %s", len(records), out_dir)
    return 0


# -------------------------------------------------------------- correlate

def _cmd_correlate(args) -> int:
    manifest_path = Path(args.manifest)
    records = parse_manifest(manifest_path)
    cam_dir = Path(args.cam_dir)
    pano_dir = Path(args.pano_dir)
    dataset = []
    for rec in records:
        labels = tuple(sorted(k for k, v in rec.label_counts.items() if v > 0))
        cam_maps = {}
        for label in labels:
            path = cam_dir / f"{rec.image_id}__{label}.f32"
            if not path.exists():
                if args.permissive:
                    continue
                raise ValidationError(f"image {rec.image_id!r}: missing activation map {path}")
            cam_maps[label] = HeatMap(read_tensor(path))
        pano_maps = {}
        for path in sorted(pano_dir.glob(f"{rec.image_id}__*.f32")):
            pano_class = path.stem[len(rec.image_id) + 2 :]
            pano_maps[pano_class] = HeatMap(read_tensor(path))
        dataset.append(ImageAttribution(rec.image_id, labels, cam_maps, pano_maps))
    cfg = AttributionConfig(tau_cam=args.tau_cam, tau_p=args.tau_p, pooled=args.pooled)
    matrix = correlation_matrix(dataset, cfg, permissive=args.permissive)
    write_matrix_csv(matrix, args.out)
    log.info(
        "wrote %dx%d matrix to %s", len(matrix.pano_classes), len(matrix.intent_classes), args.out
    )
    return 0


# --------------------------------------------------------------- hashtags

def _cmd_hashtags_segment(args) -> int:
    dictionary = Dictionary.load(args.dict)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        with open(args.infile, "r", encoding="utf-8") as handle:
            for raw in handle:
                raw = raw.strip()
                if not raw:
                    continue
                tokens = word_break(normalize_hashtag(raw), dictionary)
                if tokens is None or len(tokens) > args.max_tokens:
                    out.write(f"{raw}\t<rejected>\n")
                else:
                    out.write(f"{raw}\t{' '.join(tokens)}\n")
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_hashtags_embed(args) -> int:
    dictionary = Dictionary.load(args.dict)
    table = EmbeddingTable.load(args.table)
    records = parse_manifest(args.manifest)
    rows = []
    empty = []
    for rec in records:
        accepted = filter_hashtags(list(rec.hashtags or ()), dictionary, args.max_tokens)
        vec, used = aggregate_image_hashtags(accepted, table)
        if used == 0:
            empty.append(rec.image_id)
        rows.append(vec)
    write_tensor(np.vstack(rows), args.out)
    if empty:
        log.warning("%d image(s) with no usable hashtags (zero vector): %s",
                    len(empty), ", ".join(empty))
    log.info("wrote %dx%d hashtag features to %s", len(rows), table.dim, args.out)
    return 0


# ------------------------------------------------------------------- rmac

def _cmd_rmac(args) -> int:
    acts_dir = Path(args.acts_dir)
    paths = sorted(p for p in acts_dir.glob("*.f32") if not p.name.endswith(".shape"))
    if not paths:
        raise ValidationError(f"{acts_dir}: no .f32 activation tensors found")
    ids = []
    rows = []
    for path in paths:
        act = read_tensor(path)
        if act.ndim != 3:
            raise ValidationError(f"{path}: expected a C x H x W tensor, got shape {act.shape}")
        rows.append(rmac(act, scales=args.scales))
        ids.append(path.stem)
    write_tensor(np.vstack(rows), args.out)
    ids_path = Path(str(args.out) + ".ids")
    ids_path.write_text("\n".join(ids) + "\n", encoding="utf-8")
    log.info("wrote %d descriptors to %s (ids: %s)", len(ids), args.out, ids_path)
    return 0


# -------------------------------------------------------------------- knn

def _read_ids(path: str | Path) -> list[str]:
    with open(path, "r", encoding="utf-8") as handle:
        return [line.strip() for line in handle if line.strip()]


def _cmd_knn_build(args) -> int:
    vectors = read_tensor(args.desc)
    if vectors.ndim != 2:
        raise ValidationError(f"{args.desc}: expected an N x D tensor, got {vectors.shape}")
    ids = _read_ids(args.ids)
    if len(ids) != vectors.shape[0]:
        raise ValidationError(
            f"{args.ids} lists {len(ids)} ids but {args.desc} holds {vectors.shape[0]} vectors"
        )
    index = build_index(zip(ids, vectors))
    save_index(index, args.out)
    log.info("indexed %d vectors of dim %d into %s", len(index), index.dim, args.out)
    return 0


def _cmd_knn_query(args) -> int:
    index = load_index(args.index)
    queries = read_tensor(args.query)
    if queries.ndim == 1:
        queries = queries[np.newaxis, :]
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for qi in range(queries.shape[0]):
            for item_id, sim in knn_query(index, queries[qi], args.k):
                out.write(f"{qi}\t{item_id}\t{sim:.6f}\n")
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_knn_link(args) -> int:
    index = load_index(args.index)
    queries = read_tensor(args.query_desc)
    if queries.ndim == 1:
        queries = queries[np.newaxis, :]
    query_ids = _read_ids(args.query_ids)
    if len(query_ids) != queries.shape[0]:
        raise ValidationError(
            f"{args.query_ids} lists {len(query_ids)} ids but {args.query_desc} "
            f"holds {queries.shape[0]} vectors"
        )
    records = parse_manifest(args.neighbors_manifest)
    neighbor_tags = {rec.image_id: list(rec.hashtags or ()) for rec in records}
    linked = link_hashtags(
        index,
        zip(query_ids, queries),
        neighbor_tags,
        args.k,
    )
    with open(args.out, "w", encoding="utf-8") as handle:
        for entry in linked:
            handle.write(json.dumps(entry, sort_keys=True) + "\n")
    log.info("linked hashtags for %d queries into %s", len(linked), args.out)
    return 0


# ------------------------------------------------------------------ probe

def _classes_path(model_path: str | Path) -> Path:
    return Path(str(model_path) + ".classes")


def _manifest_classes(records) -> list[str]:
    classes = sorted({name for rec in records for name in rec.label_counts})
    if not classes:
        raise ValidationError("no intent classes present in the manifest")
    return classes


def _manifest_targets(records, classes) -> np.ndarray:
    rows = []
    for rec in records:
        counts = np.array([rec.label_counts.get(c, 0) for c in classes], dtype=np.float64)
        rows.append(normalize_target(counts, rec.annotator_total).target)
    return np.vstack(rows)


def _manifest_truths(records, classes) -> np.ndarray:
    truth = np.zeros((len(records), len(classes)), dtype=bool)
    for i, rec in enumerate(records):
        for j, name in enumerate(classes):
            truth[i, j] = rec.label_counts.get(name, 0) > 0
    return truth


def _cmd_probe_train(args) -> int:
    features = read_tensor(args.features)
    records = parse_manifest(args.manifest)
    if features.ndim != 2 or features.shape[0] != len(records):
        raise ValidationError(
            f"features {features.shape} do not match {len(records)} manifest records"
        )
    classes = _manifest_classes(records)
    targets = _manifest_targets(records, classes)
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch=args.batch,
                      seed=args.seed, l2=args.l2)
    model = train_probe(features, targets, cfg)
    write_tensor(model.weights, args.out)
    _classes_path(args.out).write_text("\n".join(classes) + "\n", encoding="utf-8")
    log.info("trained probe (final loss %.6f) -> %s", model.final_loss, args.out)
    return 0


def _load_model(path: str | Path) -> tuple[ProbeModel, list[str]]:
    weights = read_tensor(path)
    if weights.ndim != 2:
        raise ValidationError(f"{path}: model tensor must be 2-D, got {weights.shape}")
    classes = _read_ids(_classes_path(path))
    if len(classes) != weights.shape[0]:
        raise ValidationError(
            f"{path}: {weights.shape[0]} weight rows vs {len(classes)} classes"
        )
    return ProbeModel(weights=np.asarray(weights, dtype=np.float64)), classes


def _cmd_probe_eval(args) -> int:
    model, classes = _load_model(args.model)
    features = read_tensor(args.features)
    records = parse_manifest(args.manifest)
    truths = _manifest_truths(records, classes)
    tau = args.tau_pred if args.tau_pred > 0 else None
    summary = macro_f1(model.predict_proba(features), truths, tau)
    lines = [["class", "f1"]]
    for j, name in enumerate(classes):
        lines.append([name, f"{summary.per_class_f1[j]:.6f}"])
    lines.append(["macro", f"{summary.macro_f1:.6f}"])
    _write_csv(args.out, lines)
    print(f"macro_f1\t{summary.macro_f1:.6f}")
    return 0


def _cmd_probe_runs(args) -> int:
    features = read_tensor(args.features)
    records = parse_manifest(args.manifest)
    classes = _manifest_classes(records)
    targets = _manifest_targets(records, classes)
    eval_features = read_tensor(args.eval_features) if args.eval_features else features
    eval_records = parse_manifest(args.eval_manifest) if args.eval_manifest else records
    truths = _manifest_truths(eval_records, classes)
    tau = args.tau_pred if args.tau_pred > 0 else None
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ValidationError("no run seeds given")
    summaries = []
    for seed in seeds:
        cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch=args.batch, seed=seed, l2=args.l2)
        model = train_probe(features, targets, cfg)
        summaries.append(macro_f1(model.predict_proba(eval_features), truths, tau, run_seed=seed))
    agg = aggregate_runs(summaries)
    lines = [["label", "mean", "std"]]
    for j, name in enumerate(classes):
        lines.append([name, f"{agg.per_class_mean[j]:.6f}", f"{agg.per_class_std[j]:.6f}"])
    lines.append(["macro", f"{agg.macro_mean:.6f}", f"{agg.macro_std:.6f}"])
    _write_csv(args.out, lines)
    print(f"macro_f1\t{agg.macro_mean:.6f}\t{agg.macro_std:.6f}")
    return 0


def _write_csv(path: str, rows: list[list[str]]) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as handle:
        csv.writer(handle).writerows(rows)


# ----------------------------------------------------------------- report

def _cmd_report_bars(args) -> int:
    series = load_bar_series(args.csv, baseline=args.baseline)
    emit_bars(series, args.out)
    if args.png:
        render_bars(series, args.png)
    log.info("wrote %s", args.out)
    return 0


def _cmd_report_heatgrid(args) -> int:
    matrix = read_matrix_csv(args.matrix)
    emit_heatgrid(matrix, args.out)
    if args.png:
        render_heatgrid(matrix, args.png)
    log.info("wrote %s", args.out)
    return 0


# --------------------------------------------------------------- pipeline

_PIPELINE_FLAGS = (
    ("manifest", str), ("out", str), ("seed", int), ("threads", int),
    ("val_fraction", float), ("runs", int), ("lr", float), ("epochs", int),
    ("batch", int), ("l2", float), ("tau_pred", float),
    ("baseline_trials", int), ("tex_iters", int), ("tex_levels", int),
    ("grid", int), ("hist_bins", int), ("families", str), ("targets", str),
    ("fill", str),
)


def _cmd_pipeline(args, parser: argparse.ArgumentParser) -> int:
    mapping: dict[str, str] = {}
    if args.config:
        mapping.update(parse_config_file(args.config))
    for name, _type in _PIPELINE_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            mapping[name] = str(value)
    try:
        cfg: PipelineConfig = config_from_mapping(mapping)
    except (ValueError, ToolkitError) as exc:
        parser.error(str(exc))  # exits 2
        return 2
    if not cfg.manifest or not cfg.out:
        parser.error("pipeline requires 'manifest' and 'out' (flag or config file)")
        return 2
    return run_pipeline(cfg)


# ------------------------------------------------------------------ wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="content-probe",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perturb", help="apply one perturbation to every manifest image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--family", required=True, choices=[f.value for f in Family])
    p.add_argument("--target", required=True, choices=[t.value for t in Target])
    p.add_argument("--level", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fill", default="gray", choices=[f.value for f in Fill])
    p.add_argument("--tex-iters", type=int, default=10)
    p.add_argument("--tex-levels", type=int, default=3)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("correlate", help="attention/segmentation correlation matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cam-dir", required=True)
    p.add_argument("--pano-dir", required=True)
    p.add_argument("--tau-cam", type=float, default=0.6)
    p.add_argument("--tau-p", type=float, default=0.5)
    p.add_argument("--pooled", action="store_true",
                   help="pool pixels across images instead of averaging per-image ratios")
    p.add_argument("--permissive", action="store_true",
                   help="skip images with missing/broken maps instead of aborting")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser("hashtags", help="hashtag segmentation and embedding")
    hsub = p.add_subparsers(dest="hashtags_command", required=True)
    ps = hsub.add_parser("segment", help="segment hashtags, one per input line")
    ps.add_argument("--dict", required=True)
    ps.add_argument("--in", dest="infile", required=True)
    ps.add_argument("--max-tokens", type=int, default=6)
    ps.add_argument("--out", default=None)
    _add_common(ps)
    ps.set_defaults(func=_cmd_hashtags_segment)
    pe = hsub.add_parser("embed", help="aggregate hashtag embeddings per manifest image")
    pe.add_argument("--dict", required=True)
    pe.add_argument("--table", required=True)
    pe.add_argument("--manifest", required=True)
    pe.add_argument("--max-tokens", type=int, default=6)
    pe.add_argument("--out", required=True)
    _add_common(pe)
    pe.set_defaults(func=_cmd_hashtags_embed)

    p = sub.add_parser("rmac", help="pool activation tensors into descriptors")
    p.add_argument("--acts-dir", required=True)
    p.add_argument("--scales", type=int, default=3)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_rmac)

    p = sub.add_parser("knn", help="exact nearest-neighbor index and queries")
    ksub = p.add_subparsers(dest="knn_command", required=True)
    kb = ksub.add_parser("build", help="build an index from descriptors and ids")
    kb.add_argument("--desc", required=True)
    kb.add_argument("--ids", required=True)
    kb.add_argument("--out", required=True)
    _add_common(kb)
    kb.set_defaults(func=_cmd_knn_build)
    kq = ksub.add_parser("query", help="query an index")
    kq.add_argument("--index", required=True)
    kq.add_argument("--query", required=True)
    kq.add_argument("--k", type=int, required=True)
    kq.add_argument("--out", default=None)
    _add_common(kq)
    kq.set_defaults(func=_cmd_knn_query)
    kl = ksub.add_parser("link", help="transfer neighbor hashtags to query images")
    kl.add_argument("--index", required=True)
    kl.add_argument("--query-desc", required=True)
    kl.add_argument("--query-ids", required=True)
    kl.add_argument("--neighbors-manifest", required=True)
    kl.add_argument("--k", type=int, required=True)
    kl.add_argument("--out", required=True)
    _add_common(kl)
    kl.set_defaults(func=_cmd_knn_link)

    p = sub.add_parser("probe", help="train and evaluate the linear probe")
    psub = p.add_subparsers(dest="probe_command", required=True)
    pt = psub.add_parser("train", help="train on features + manifest targets")
    pt.add_argument("--features", required=True)
    pt.add_argument("--manifest", required=True)
    pt.add_argument("--lr", type=float, default=0.5)
    pt.add_argument("--epochs", type=int, default=40)
    pt.add_argument("--batch", type=int, default=32)
    pt.add_argument("--l2", type=float, default=1e-4)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--out", required=True)
    _add_common(pt)
    pt.set_defaults(func=_cmd_probe_train)
    pv = psub.add_parser("eval", help="score a trained probe")
    pv.add_argument("--model", required=True)
    pv.add_argument("--features", required=True)
    pv.add_argument("--manifest", required=True)
    pv.add_argument("--tau-pred", type=float, default=0.0)
    pv.add_argument("--out", required=True)
    _add_common(pv)
    pv.set_defaults(func=_cmd_probe_eval)
    pr = psub.add_parser("runs", help="train over several seeds, report mean/std")
    pr.add_argument("--features", required=True)
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--seeds", required=True, help="comma-separated run seeds")
    pr.add_argument("--eval-features", default=None)
    pr.add_argument("--eval-manifest", default=None)
    pr.add_argument("--lr", type=float, default=0.5)
    pr.add_argument("--epochs", type=int, default=40)
    pr.add_argument("--batch", type=int, default=32)
    pr.add_argument("--l2", type=float, default=1e-4)
    pr.add_argument("--tau-pred", type=float, default=0.0)
    pr.add_argument("--out", required=True)
    _add_common(pr)
    pr.set_defaults(func=_cmd_probe_runs)

    p = sub.add_parser("report", help="render CSV outputs as charts")
    rsub = p.add_subparsers(dest="report_command", required=True)
    rb = rsub.add_parser("bars", help="grouped bars with error bars")
    rb.add_argument("--csv", required=True)
    rb.add_argument("--baseline", type=float, default=None)
    rb.add_argument("--out", required=True)
    rb.add_argument("--png", default=None, help="also render a matplotlib PNG here")
    _add_common(rb)
    rb.set_defaults(func=_cmd_report_bars)
    rh = rsub.add_parser("heatgrid", help="correlation heat grid")
    rh.add_argument("--matrix", required=True)
    rh.add_argument("--out", required=True)
    rh.add_argument("--png", default=None, help="also render a matplotlib PNG here")
    _add_common(rh)
    rh.set_defaults(func=_cmd_report_heatgrid)

    p = sub.add_parser("pipeline", help="run the full perturb/train/score/report loop")
    p.add_argument("--config", default=None, help="key=value config file; flags win")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--runs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--tau-pred", dest="tau_pred", type=float)
    p.add_argument("--baseline-trials", dest="baseline_trials", type=int)
    p.add_argument("--tex-iters", dest="tex_iters", type=int)
    p.add_argument("--tex-levels", dest="tex_levels", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--hist-bins", dest="hist_bins", type=int)
    p.add_argument("--families", help="comma-separated: amount,jigsaw,blur,texture")
    p.add_argument("--targets", help="comma-separated: object,context")
    p.add_argument("--fill", choices=[f.value for f in Fill])
    _add_common(p)
    p.set_defaults(func=None, pipeline=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, getattr(args, "log_level", "info").upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if getattr(args, "pipeline", False):
            return _cmd_pipeline(args, parser)
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
