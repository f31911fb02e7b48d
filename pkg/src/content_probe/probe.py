"""Soft-target classification: loss, linear probe, and the evaluation protocol.

Annotator votes become a probability target by dividing each class
count by the sum of counts (annotations are multi-label, so the sum may
differ from the nominal annotator total; the softmax objective needs a
true distribution either way). The probe is a bias-augmented linear
softmax model trained by seeded mini-batch gradient descent; it stands
in for network fine-tuning so the perturb -> train -> score loop runs at
desk scale.

Evaluation follows the multi-run protocol: macro F1 (classes predicted
at probability >= tau, default 1/M) per run, mean and sample standard
deviation across run seeds, and a Monte-Carlo random-guess baseline
matched to per-example positive counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ParameterError, ValidationError


@dataclass(frozen=True)
class LabelDistribution:
    """Per-class annotator counts and the probability target they induce."""

    counts: np.ndarray
    target: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]


def normalize_target(counts, annotator_total: int | None = None) -> LabelDistribution:
    """Vote counts -> probability distribution (divide by the sum of counts).

    ``annotator_total`` is accepted for interface completeness and
    sanity-checked, but normalization always uses the count sum so the
    target sums to exactly 1.
    """
    arr = np.asarray(counts, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"counts must be 1-D, got shape {arr.shape}")
    if np.any(arr < 0):
        raise ValidationError("negative annotator count")
    total = arr.sum()
    if total <= 0:
        raise ValidationError("all-zero annotator counts cannot form a target")
    if annotator_total is not None and annotator_total < arr.max():
        raise ValidationError(
            f"annotator_total {annotator_total} below max class count {arr.max():.0f}"
        )
    arr.flags.writeable = False
    target = arr / total
    target.flags.writeable = False
    return LabelDistribution(counts=arr, target=target)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax (max subtraction)."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    expz = np.exp(shifted)
    return expz / expz.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def soft_ce_loss(logits, target: LabelDistribution | np.ndarray) -> float:
    """Cross-entropy between the softmax of ``logits`` and a soft target."""
    probs = target.target if isinstance(target, LabelDistribution) else np.asarray(target)
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValidationError("non-finite logits")
    return float(-(probs * log_softmax(z)).sum())


def loss_grad(logits, target: LabelDistribution | np.ndarray, features) -> np.ndarray:
    """Analytic weight gradient of the soft cross-entropy for one example.

    Logit gradient is ``softmax(logits) - target``; the weight gradient
    is its outer product with the bias-augmented feature vector, shape
    (M, D+1).
    """
    probs = target.target if isinstance(target, LabelDistribution) else np.asarray(target)
    delta = softmax(logits) - probs
    feats = np.asarray(features, dtype=np.float64).ravel()
    augmented = np.concatenate([feats, [1.0]])
    return np.outer(delta, augmented)


@dataclass(frozen=True)
class ProbeModel:
    """Linear softmax classifier; ``weights`` is (M, D+1) with a bias column."""

    weights: np.ndarray
    final_loss: float = float("nan")
    epoch_losses: tuple[float, ...] = ()

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1] - 1

    def logits(self, features: np.ndarray) -> np.ndarray:
        feats = np.asarray(features, dtype=np.float64)
        single = feats.ndim == 1
        if single:
            feats = feats[np.newaxis, :]
        if feats.shape[1] != self.feature_dim:
            raise ValidationError(
                f"feature dim {feats.shape[1]} != model dim {self.feature_dim}"
            )
        out = feats @ self.weights[:, :-1].T + self.weights[:, -1]
        return out[0] if single else out

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.logits(features))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    epochs: int = 50
    batch: int = 32
    seed: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1:
            raise ParameterError("epochs and batch must be >= 1")
        if self.lr < 0 or self.l2 < 0:
            raise ParameterError("lr and l2 must be non-negative")


def _targets_matrix(targets, num_classes: int | None = None) -> np.ndarray:
    if isinstance(targets, np.ndarray):
        mat = np.asarray(targets, dtype=np.float64)
    else:
        mat = np.vstack([t.target for t in targets])
    if num_classes is not None and mat.shape[1] != num_classes:
        raise ValidationError(f"target width {mat.shape[1]} != class count {num_classes}")
    return mat


def train_probe(features, targets, cfg: TrainConfig) -> ProbeModel:
    """Mini-batch gradient descent with seeded init and shuffling.

    L2 decay applies to weights, not the bias column. Deterministic for
    a fixed config; a non-finite epoch loss raises DivergenceError
    naming the epoch.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValidationError(f"features must be (N, D) with N >= 1, got {feats.shape}")
    tmat = _targets_matrix(targets)
    if tmat.shape[0] != feats.shape[0]:
        raise ValidationError("feature and target counts differ")
    n, dim = feats.shape
    m = tmat.shape[1]
    rng = np.random.default_rng(cfg.seed & (2**64 - 1))
    weights = rng.normal(0.0, 0.01, size=(m, dim + 1))
    augmented = np.hstack([feats, np.ones((n, 1))])
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            rows = order[start : start + cfg.batch]
            batch = augmented[rows]
            logits = batch @ weights.T
            logp = log_softmax(logits)
            total += float(-(tmat[rows] * logp).sum())
            delta = np.exp(logp) - tmat[rows]
            grad = delta.T @ batch / rows.size
            if cfg.l2 > 0:
                grad[:, :-1] += cfg.l2 * weights[:, :-1]
            weights -= cfg.lr * grad
        mean_loss = total / n
        if not math.isfinite(mean_loss):
            raise DivergenceError(f"training loss became non-finite at epoch {epoch}", epoch=epoch)
        history.append(mean_loss)
    frozen = weights.copy()
    frozen.flags.writeable = False
    return ProbeModel(weights=frozen, final_loss=history[-1], epoch_losses=tuple(history))


@dataclass(frozen=True)
class RunSummary:
    """Per-class F1, their unweighted mean, and the run's seed."""

    per_class_f1: np.ndarray
    macro_f1: float
    run_seed: int = 0
    undefined_classes: tuple[int, ...] = ()


def macro_f1(predictions, truths, tau_pred: float | None = None, run_seed: int = 0) -> RunSummary:
    """Threshold probabilities, then average per-class F1.

    A class is predicted when its probability reaches ``tau_pred``
    (default 1/M). Classes with no predictions and no positives score 0
    by convention and are listed in ``undefined_classes``.
    """
    probs = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truths)
    if probs.shape != truth.shape or probs.ndim != 2:
        raise ValidationError(f"shape mismatch: predictions {probs.shape}, truths {truth.shape}")
    m = probs.shape[1]
    if tau_pred is None:
        tau_pred = 1.0 / m
    predicted = probs >= tau_pred
    positive = truth.astype(bool)
    tp = (predicted & positive).sum(axis=0).astype(np.float64)
    fp = (predicted & ~positive).sum(axis=0).astype(np.float64)
    fn = (~predicted & positive).sum(axis=0).astype(np.float64)
    denom = 2 * tp + fp + fn
    undefined = tuple(int(i) for i in np.nonzero(denom == 0)[0])
    f1 = np.where(denom > 0, 2 * tp / np.where(denom == 0, 1.0, denom), 0.0)
    f1.flags.writeable = False
    return RunSummary(
        per_class_f1=f1,
        macro_f1=float(f1.mean()),
        run_seed=run_seed,
        undefined_classes=undefined,
    )


def random_guess_f1(
    class_priors,
    eval_truths,
    trials: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte-Carlo baseline: prior-sampled label sets, matched to positives.

    Each trial draws, for every example, as many class labels from the
    prior as the example has ground-truth positives (duplicates collapse),
    scores macro F1 against the truths, and reports mean and sample std
    over the trials.
    """
    priors = np.asarray(class_priors, dtype=np.float64)
    if priors.ndim != 1 or np.any(priors < 0):
        raise ValidationError("priors must be a non-negative vector")
    if abs(priors.sum() - 1.0) > 1e-6:
        raise ValidationError(f"priors sum to {priors.sum():.6f}, expected 1")
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    truth = np.asarray(eval_truths).astype(bool)
    n, m = truth.shape
    draws_per_example = truth.sum(axis=1).astype(np.int64)
    rng = np.random.default_rng(seed & (2**64 - 1))
    groups = [(k, np.nonzero(draws_per_example == k)[0]) for k in np.unique(draws_per_example)]
    scores = np.empty(trials)
    for t in range(trials):
        predicted = np.zeros((n, m), dtype=bool)
        for k, rows in groups:  # one batched draw per positive-count group
            if k > 0 and rows.size:
                picks = rng.choice(m, size=(rows.size, int(k)), p=priors)
                predicted[rows[:, np.newaxis], picks] = True
        summary = macro_f1(predicted.astype(np.float64), truth, tau_pred=0.5)
        scores[t] = summary.macro_f1
    mean = float(scores.mean())
    std = float(scores.std(ddof=1)) if trials > 1 else 0.0
    return mean, std


@dataclass(frozen=True)
class RunAggregate:
    """Mean and sample std per class and for the macro score."""

    per_class_mean: np.ndarray
    per_class_std: np.ndarray
    macro_mean: float
    macro_std: float
    runs: int
    single_run: bool


def aggregate_runs(summaries: list[RunSummary]) -> RunAggregate:
    """Unbiased (n-1) mean/std across runs; one run reports std 0, flagged."""
    if not summaries:
        raise ValidationError("no runs to aggregate")
    width = summaries[0].per_class_f1.shape[0]
    if any(s.per_class_f1.shape[0] != width for s in summaries):
        raise ValidationError("runs disagree on class count")
    per_class = np.vstack([s.per_class_f1 for s in summaries])
    macros = np.array([s.macro_f1 for s in summaries])
    single = len(summaries) == 1
    if single:
        std = np.zeros(width)
        macro_std = 0.0
    else:
        std = per_class.std(axis=0, ddof=1)
        macro_std = float(macros.std(ddof=1))
    return RunAggregate(
        per_class_mean=per_class.mean(axis=0),
        per_class_std=std,
        macro_mean=float(macros.mean()),
        macro_std=macro_std,
        runs=len(summaries),
        single_run=single,
    )
