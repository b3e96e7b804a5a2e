"""Evaluation protocol: predictor accuracy, post-hoc adversarial probing,
relative-error deltas, and 2D projection export.

A_y comes from the jointly trained predictor. A_s comes from a fresh
two-layer probe trained on the frozen invariant embeddings of the
training split and scored on the test split; for true invariance it
should land at chance (nuisance s) or the majority share (biasing s).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nets import MLP
from .tensor import Adam, Tensor, TrainingDiverged

DELTA_SENTINEL = "–"


@dataclass
class ProbeSpec:
    """Post-hoc adversary: a fixed two-layer head and training budget."""

    hidden: int = 64
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 128
    seed: int = 0

    def budget(self):
        return {"hidden": self.hidden, "epochs": self.epochs,
                "learning_rate": self.learning_rate,
                "batch_size": self.batch_size, "seed": self.seed}


@dataclass
class EvalReport:
    a_y: float
    a_s: float
    a_s_optimal: float
    s_kind: str
    task: int = 0
    n_test: int = 0
    probe_failed: bool = False
    delta_vs_baseline: object = None
    confusion_y: list = field(default_factory=list)
    confusion_s: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.a_s_optimal < 1.0:
            raise ValueError("a_s_optimal must lie strictly inside (0, 1)")
        for name, v in (("a_y", self.a_y), ("a_s", self.a_s)):
            if not (np.isnan(v) or 0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def a_s_gap(self):
        return abs(self.a_s - self.a_s_optimal)


def _confusion(true, pred, k):
    out = np.zeros((k, k), dtype=int)
    for t, p in zip(true, pred):
        out[t, p] += 1
    return out.tolist()


def train_probe(z_train, s_train, n_classes, spec):
    """Fit the two-layer adversary on frozen embeddings.

    Returns (probe, diverged); a diverged probe is unusable.
    """
    rng = np.random.default_rng(spec.seed)
    probe = MLP("probe", [z_train.shape[1], spec.hidden, n_classes], rng)
    opt = Adam(probe.named_params(), learning_rate=spec.learning_rate, decay=0.0)
    n = z_train.shape[0]
    try:
        for _ in range(spec.epochs):
            order = rng.permutation(n)
            for start in range(0, n, spec.batch_size):
                idx = order[start:start + spec.batch_size]
                tape = T.Tape()
                logits = probe(Tensor(z_train[idx]), tape)
                loss = T.cross_entropy_logits(logits, s_train[idx], tape)
                if not np.isfinite(loss.data):
                    return probe, True
                opt.zero_grads()
                T.backward(tape, loss)
                opt.step()
    except TrainingDiverged:
        return probe, True
    return probe, False


def probe_accuracy(z_train, s_train, z_test, s_test, n_classes, spec):
    """Accuracy of a freshly trained probe; retries once on divergence.

    Returns (accuracy, predictions, failed_flag).
    """
    probe, diverged = train_probe(z_train, s_train, n_classes, spec)
    if diverged:
        retry = ProbeSpec(hidden=spec.hidden, epochs=spec.epochs,
                          learning_rate=spec.learning_rate,
                          batch_size=spec.batch_size, seed=spec.seed + 1)
        probe, diverged = train_probe(z_train, s_train, n_classes, retry)
    if diverged:
        return float("nan"), None, True
    pred = probe(Tensor(z_test)).data.argmax(axis=1)
    return float(np.mean(pred == s_test)), pred, False


def optimal_a_s(s_kind, s_test, n_classes):
    """Chance rate for nuisance s, majority share for biasing s."""
    if s_kind == "nuisance":
        return 1.0 / n_classes
    counts = np.bincount(s_test, minlength=n_classes)
    return float(counts.max() / counts.sum())


def evaluate(model, train_split, test_split, probe=None, task=0,
             config_hash=""):
    """Score one task of a trained model on a held-out split."""
    probe = probe or ProbeSpec()
    manifest = test_split.manifest
    s_classes = manifest.s_cardinality[task]
    y_classes = manifest.y_cardinality[task]
    s_kind = manifest.s_kind[task]

    y_pred = model.predict(test_split.x, task=task)
    y_true = test_split.y_tasks[task]
    a_y = float(np.mean(y_pred == y_true))

    _, _, zt_train = model.encode(train_split.x)
    _, _, zt_test = model.encode(test_split.x)
    s_train = train_split.s_tasks[task]
    s_test = test_split.s_tasks[task]
    a_s, s_pred, failed = probe_accuracy(zt_train[task], s_train,
                                         zt_test[task], s_test,
                                         s_classes, probe)
    report = EvalReport(
        a_y=a_y, a_s=a_s,
        a_s_optimal=optimal_a_s(s_kind, s_test, s_classes),
        s_kind=s_kind, task=task, n_test=test_split.n, probe_failed=failed,
        confusion_y=_confusion(y_true, y_pred, y_classes),
        confusion_s=_confusion(s_test, s_pred, s_classes) if not failed else [],
        metadata={"probe": probe.budget(), "config_hash": config_hash,
                  "dataset": manifest.name})
    return report


def evaluate_all(model, train_split, test_split, probe=None, config_hash=""):
    return [evaluate(model, train_split, test_split, probe=probe, task=j,
                     config_hash=config_hash)
            for j in range(model.task_count)]


def delta_metric(ours, baseline):
    """Relative error-rate improvement over a baseline.

    Uses err = 1 - a_y for the prediction task and err = |a_s - optimal|
    for invariance. A zero baseline error yields the sentinel string
    (undefined improvement) unless our error is zero too.
    """
    if abs(ours.a_s_optimal - baseline.a_s_optimal) > 1e-9:
        raise ValueError("reports compare different a_s_optimal targets")

    def rel(err_ours, err_base):
        if err_base == 0.0:
            return 0.0 if err_ours == 0.0 else DELTA_SENTINEL
        return (err_base - err_ours) / err_base

    return (rel(1.0 - ours.a_y, 1.0 - baseline.a_y),
            rel(ours.a_s_gap, baseline.a_s_gap))


@dataclass
class Projection:
    coords: np.ndarray
    y: np.ndarray
    s: np.ndarray
    which: str
    constant: bool


def project_embeddings(model, x, y, s, which="z_tilde", task=0):
    """Top-2 principal components of z or z_tilde for external plotting."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 3:
        raise ValueError("projection needs at least 3 samples")
    if which not in ("z", "z_tilde"):
        raise ValueError("which must be 'z' or 'z_tilde'")
    z, _, zts = model.encode(x)
    emb = z if which == "z" else zts[task]
    centered = emb - emb.mean(axis=0)
    if np.max(np.abs(centered)) < 1e-12:
        return Projection(np.zeros((x.shape[0], 2)), np.asarray(y),
                          np.asarray(s), which, constant=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2] if vt.shape[0] >= 2 else np.vstack([vt, np.zeros_like(vt)])
    # fix each component's sign so the largest-magnitude loading is positive
    for i in range(2):
        j = np.argmax(np.abs(components[i]))
        if components[i, j] < 0:
            components[i] = -components[i]
    coords = centered @ components.T
    return Projection(coords, np.asarray(y), np.asarray(s), which,
                      constant=False)
