"""End-to-end run: perturb -> featurize -> probe -> score -> report.

The probes are trained once per run seed on the unmodified training
split and then scored against every perturbed validation set, so each
results row measures how far that condition's images have drifted from
the content the probes learned on. One results CSV row is produced per
(family, target, level), plus per-family bar charts (SVG and PNG), a
random-guess baseline, and a ``run.json`` provenance record. Outputs
contain no timestamps: a rerun with the same config is byte-identical.

Features come from a built-in featurizer (block-mean pixel grid plus
per-channel histograms) so the loop needs no external model; feature
files produced elsewhere can replace it through the library API.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .core_io import ManifestRecord, RasterImage, parse_manifest, read_raster
from .errors import ToolkitError, ValidationError
from .perturb import (
    Family,
    Fill,
    PerturbationSpec,
    Target,
    apply_perturbation,
    levels,
)
from .probe import (
    TrainConfig,
    aggregate_runs,
    macro_f1,
    normalize_target,
    random_guess_f1,
    train_probe,
)
from .report.figures import render_bars
from .report.svg import BarSeries, emit_bars
from .rng import fnv1a64, per_image_seed

log = logging.getLogger(__name__)

_SPLIT_SALT = ":split"


def featurize(image: RasterImage, grid: int = 8, hist_bins: int = 16) -> np.ndarray:
    """Block-mean pixel grid plus per-channel histograms, all in [0, 1]."""
    px = image.pixels.astype(np.float64)
    h, w, c = px.shape
    y_edges = (np.arange(grid + 1) * h) // grid
    x_edges = (np.arange(grid + 1) * w) // grid
    rows = np.add.reduceat(px, y_edges[:-1], axis=0)
    cells = np.add.reduceat(rows, x_edges[:-1], axis=1)
    areas = np.maximum(1, np.diff(y_edges))[:, None] * np.maximum(1, np.diff(x_edges))[None, :]
    cell_means = cells / areas[:, :, None] / 255.0
    step = 256 // hist_bins
    hists = [
        np.bincount(image.pixels[:, :, ch].ravel() // step, minlength=hist_bins) / (h * w)
        for ch in range(c)
    ]
    return np.concatenate([cell_means.ravel(), np.concatenate(hists)])


@dataclass
class PipelineConfig:
    """Everything a run needs; mirrors the key=value config-file format."""

    manifest: str = ""
    out: str = ""
    seed: int = 0
    threads: int = 0  # 0 = auto
    log_level: str = "info"
    families: tuple[Family, ...] = (Family.AMOUNT,)
    targets: tuple[Target, ...] = (Target.OBJECT, Target.CONTEXT)
    fill: Fill = Fill.GRAY128
    val_fraction: float = 0.3
    runs: int = 5
    lr: float = 0.5
    epochs: int = 40
    batch: int = 32
    l2: float = 1e-4
    tau_pred: float = 0.0  # 0 = default 1/M
    baseline_trials: int = 200
    tex_iters: int = 10
    tex_levels: int = 3
    grid: int = 8
    hist_bins: int = 16
    dict_path: str = ""
    table_path: str = ""

    def resolved_threads(self) -> int:
        env = os.environ.get("CONTENT_PROBE_THREADS", "").strip()
        if env:
            return max(1, int(env))
        if self.threads > 0:
            return self.threads
        return min(8, os.cpu_count() or 1)

    def canonical_text(self) -> str:
        pairs = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(v.value if hasattr(v, "value") else str(v) for v in value)
            elif hasattr(value, "value"):
                value = value.value
            pairs.append(f"{f.name}={value}")
        return "\n".join(pairs) + "\n"


_CONFIG_ALIASES = {"dict": "dict_path", "table": "table_path"}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read ``key=value`` lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValidationError(f"{path}:{lineno}: expected key=value, got {text!r}")
            key, value = text.split("=", 1)
            key = key.strip().replace("-", "_")
            out[_CONFIG_ALIASES.get(key, key)] = value.strip()
    return out


def config_from_mapping(mapping: dict[str, str]) -> PipelineConfig:
    cfg = PipelineConfig()
    for key, raw in mapping.items():
        if not hasattr(cfg, key):
            raise ValidationError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if key == "families":
            value: object = tuple(Family(v.strip()) for v in raw.split(",") if v.strip())
        elif key == "targets":
            value = tuple(Target(v.strip()) for v in raw.split(",") if v.strip())
        elif key == "fill":
            value = Fill(raw)
        elif isinstance(current, bool):
            value = raw.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        else:
            value = raw
        setattr(cfg, key, value)
    return cfg


def split_ids(ids: list[str], val_fraction: float) -> tuple[list[str], list[str]]:
    """Deterministic train/val split by hashing each id with a salt.

    Both halves come back sorted by image id, so downstream work (and
    its parallel merge order) never depends on manifest line order.
    """
    if not 0 < val_fraction < 1:
        raise ValidationError(f"val_fraction must be in (0, 1), got {val_fraction}")
    threshold = int(val_fraction * 2**32)
    train, val = [], []
    for image_id in ids:
        bucket = fnv1a64(image_id + _SPLIT_SALT) % 2**32
        (val if bucket < threshold else train).append(image_id)
    if not train or not val:
        raise ValidationError(
            f"split produced {len(train)} train / {len(val)} val records; need both non-empty"
        )
    return sorted(train), sorted(val)


def _load_images(
    records: list[ManifestRecord], manifest_dir: Path
) -> dict[str, RasterImage]:
    images = {}
    for rec in records:
        path = Path(rec.image_path)
        if not path.is_absolute():
            path = manifest_dir / path
        images[rec.image_id] = read_raster(path)
    return images


def _truth_matrix(records: list[ManifestRecord], classes: list[str]) -> np.ndarray:
    truth = np.zeros((len(records), len(classes)), dtype=bool)
    for i, rec in enumerate(records):
        for j, name in enumerate(classes):
            if rec.label_counts.get(name, 0) > 0:
                truth[i, j] = True
    return truth


def _target_matrix(records: list[ManifestRecord], classes: list[str]) -> np.ndarray:
    rows = []
    for rec in records:
        counts = np.array([rec.label_counts.get(name, 0) for name in classes], dtype=np.float64)
        rows.append(normalize_target(counts, rec.annotator_total).target)
    return np.vstack(rows)


def _write_failure(out_dir: Path, stage: str, error: Exception) -> None:
    try:
        (out_dir / "FAILED").write_text(f"stage: {stage}\nerror: {error}\n", encoding="utf-8")
    except OSError:
        pass


class _Stage:
    """Context that converts an exception into a marker file + logged stage name."""

    def __init__(self, out_dir: Path, name: str, statuses: dict[str, str]):
        self.out_dir = out_dir
        self.name = name
        self.statuses = statuses

    def __enter__(self):
        log.info("stage %s: start", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            self.statuses[self.name] = "ok"
            log.info("stage %s: ok", self.name)
            return False
        self.statuses[self.name] = f"failed: {exc}"
        _write_failure(self.out_dir, self.name, exc)
        log.error("stage %s: failed: %s", self.name, exc)
        return False


def run_pipeline(cfg: PipelineConfig) -> int:
    """Execute every stage; returns 0 only if all of them succeeded."""
    if not cfg.manifest or not cfg.out:
        raise ValidationError("pipeline config needs both 'manifest' and 'out'")
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    statuses: dict[str, str] = {}
    manifest_path = Path(cfg.manifest)
    threads = cfg.resolved_threads()

    try:
        with _Stage(out_dir, "load", statuses):
            records = parse_manifest(manifest_path)
            if not records:
                raise ValidationError(f"{cfg.manifest}: manifest is empty")
            classes = sorted({name for rec in records for name in rec.label_counts})
            if not classes:
                raise ValidationError("no intent classes present in the manifest")
            images = _load_images(records, manifest_path.parent)
            by_id = {rec.image_id: rec for rec in records}
            train_ids, val_ids = split_ids([rec.image_id for rec in records], cfg.val_fraction)

        with _Stage(out_dir, "train", statuses):
            def feats_of(ids: list[str]) -> np.ndarray:
                def one(image_id: str) -> np.ndarray:
                    return featurize(images[image_id], cfg.grid, cfg.hist_bins)

                if threads > 1:
                    with ThreadPoolExecutor(max_workers=threads) as pool:
                        return np.vstack(list(pool.map(one, ids)))
                return np.vstack([one(i) for i in ids])

            train_feats = feats_of(train_ids)
            train_targets = _target_matrix([by_id[i] for i in train_ids], classes)
            val_records = [by_id[i] for i in val_ids]
            val_truths = _truth_matrix(val_records, classes)
            models = []
            for run in range(cfg.runs):
                train_cfg = TrainConfig(
                    lr=cfg.lr,
                    epochs=cfg.epochs,
                    batch=cfg.batch,
                    seed=cfg.seed + run,
                    l2=cfg.l2,
                )
                models.append((cfg.seed + run, train_probe(train_feats, train_targets, train_cfg)))
            log.info(
                "trained %d probes on %d records (%d features)",
                len(models), len(train_ids), train_feats.shape[1],
            )

        with _Stage(out_dir, "baseline", statuses):
            priors = train_targets.mean(axis=0)
            priors = priors / priors.sum()
            base_mean, base_std = random_guess_f1(
                priors, val_truths, trials=cfg.baseline_trials, seed=cfg.seed
            )
            log.info("random-guess baseline: %.4f +/- %.4f", base_mean, base_std)

        tau = cfg.tau_pred if cfg.tau_pred > 0 else None
        results: list[dict] = []
        with _Stage(out_dir, "evaluate", statuses):
            for family in cfg.families:
                for target in cfg.targets:
                    for level in levels(family):
                        def perturbed_features(image_id: str) -> np.ndarray:
                            rec = by_id[image_id]
                            spec = PerturbationSpec(
                                target=target,
                                family=family,
                                level=level,
                                seed=per_image_seed(cfg.seed, image_id),
                                fill=cfg.fill,
                            )
                            modified = apply_perturbation(
                                images[image_id],
                                rec.bboxes,
                                spec,
                                tex_levels=cfg.tex_levels,
                                tex_iters=cfg.tex_iters,
                            )
                            return featurize(modified, cfg.grid, cfg.hist_bins)

                        if threads > 1:
                            with ThreadPoolExecutor(max_workers=threads) as pool:
                                feats = np.vstack(list(pool.map(perturbed_features, val_ids)))
                        else:
                            feats = np.vstack([perturbed_features(i) for i in val_ids])
                        summaries = [
                            macro_f1(model.predict_proba(feats), val_truths, tau, run_seed=run_seed)
                            for run_seed, model in models
                        ]
                        agg = aggregate_runs(summaries)
                        results.append(
                            {
                                "family": family.value,
                                "target": target.value,
                                "x": level,
                                "agg": agg,
                            }
                        )
                        log.info(
                            "%s/%s x=%d: macro F1 %.4f +/- %.4f",
                            family.value, target.value, level, agg.macro_mean, agg.macro_std,
                        )

        with _Stage(out_dir, "report", statuses):
            results_path = out_dir / "results.csv"
            write_results_csv(results, classes, results_path)
            with open(out_dir / "baseline.csv", "w", encoding="utf-8", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(["label", "mean", "std"])
                writer.writerow(["random_guess", f"{base_mean:.6f}", f"{base_std:.6f}"])
            for family in cfg.families:
                series = []
                for target in cfg.targets:
                    rows = [r for r in results if r["family"] == family.value and r["target"] == target.value]
                    rows.sort(key=lambda r: r["x"])
                    series.append(
                        BarSeries(
                            labels=tuple(str(r["x"]) for r in rows),
                            values=tuple(r["agg"].macro_mean for r in rows),
                            errors=tuple(r["agg"].macro_std for r in rows),
                            name=f"{family.value}/{target.value}",
                            baseline=base_mean,
                        )
                    )
                emit_bars(series, out_dir / f"f1_{family.value}.svg")
                render_bars(series, out_dir / f"f1_{family.value}.png", title=f"{family.value}")

        with _Stage(out_dir, "provenance", statuses):
            write_provenance(
                out_dir / "run.json",
                cfg,
                classes,
                len(train_ids),
                len(val_ids),
                (base_mean, base_std),
                statuses,
            )
    except (ToolkitError, OSError):
        # marker already written by the failing stage
        _finalize_provenance_best_effort(out_dir, cfg, statuses)
        return 1
    return 0


def write_results_csv(results: list[dict], classes: list[str], path: Path) -> None:
    header = ["family", "target", "x", "macro_f1_mean", "macro_f1_std"]
    for name in classes:
        header.append(f"f1_{name}_mean")
        header.append(f"f1_{name}_std")
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        ordered = sorted(results, key=lambda r: (r["family"], r["target"], r["x"]))
        for row in ordered:
            agg = row["agg"]
            fields = [row["family"], row["target"], str(row["x"])]
            fields.append(f"{agg.macro_mean:.6f}")
            fields.append(f"{agg.macro_std:.6f}")
            for j in range(len(classes)):
                fields.append(f"{agg.per_class_mean[j]:.6f}")
                fields.append(f"{agg.per_class_std[j]:.6f}")
            writer.writerow(fields)


def write_provenance(
    path: Path,
    cfg: PipelineConfig,
    classes: list[str],
    n_train: int,
    n_val: int,
    baseline: tuple[float, float],
    statuses: dict[str, str],
) -> None:
    import matplotlib
    import PIL
    import scipy

    canonical = cfg.canonical_text()
    payload = {
        "config": {
            line.split("=", 1)[0]: line.split("=", 1)[1]
            for line in canonical.strip().splitlines()
        },
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "seed": cfg.seed,
        "classes": classes,
        "splits": {"train": n_train, "val": n_val},
        "baseline": {"mean": round(baseline[0], 6), "std": round(baseline[1], 6)},
        "stages": statuses,
        "versions": {
            "content_probe": __version__,
            "numpy": np.__version__,
            "pillow": PIL.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _finalize_provenance_best_effort(out_dir: Path, cfg: PipelineConfig, statuses: dict) -> None:
    try:
        write_provenance(out_dir / "run.json", cfg, [], 0, 0, (0.0, 0.0), statuses)
    except Exception:  # provenance must never mask the stage failure
        pass
