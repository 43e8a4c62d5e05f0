"""Social-behavior module: linear SVM over five coded ADOS items."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hybridx.numerics.rng import make_rng
from hybridx.records import FEATURES, LEGAL_SCORES, AdosRecord, DatasetStats, Label

MODEL_HEADER = "HYBRIDX-SVM v1"
DEFAULT_LR_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
DEFAULT_LAMBDA = 1e-3
_PROB_EPS = 1e-15


def encode_scores(scores) -> np.ndarray:
    """Severity codes 0-3 pass through; non-severity codes 7, 8, 9 become 0."""
    out = np.empty(len(scores))
    for i, (name, s) in enumerate(zip(FEATURES, scores)):
        if s not in LEGAL_SCORES:
            raise ValueError(f"score {s!r} for feature {name!r} is not a legal ADOS code")
        out[i] = s if s <= 3 else 0
    return out


def encode_record(record: AdosRecord) -> np.ndarray:
    return encode_scores(record.scores)


def design_matrix(records) -> tuple[np.ndarray, np.ndarray]:
    """Encoded features (n, 5) and labels in {-1, +1} with ASD = +1."""
    x = np.array([encode_record(r) for r in records]).reshape(-1, len(FEATURES))
    y = np.array([r.label.sign for r in records], dtype=np.float64)
    return x, y


@dataclass(frozen=True, eq=False)
class LinearSvmModel:
    weights: np.ndarray
    bias: float
    lr: float
    lam: float
    epochs: int
    batch_size: int | None
    seed: int
    n_asd: int
    n_non_asd: int

    def margins(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias


def hinge_objective(weights, bias, x, y, lam) -> float:
    """(1/n) * sum(max(0, 1 - y (w.x + b))) + lam * ||w||^2"""
    slack = np.maximum(0.0, 1.0 - y * (x @ weights + bias))
    return float(slack.sum() / len(y) + lam * weights @ weights)


def _step(w, b, x, y, lr, lam):
    viol = y * (x @ w + b) < 1.0
    m = len(y)
    gw = -(y[viol] @ x[viol]) / m
    gb = -y[viol].sum() / m
    # hinge part is an explicit subgradient step, the L2 part a proximal
    # (implicit) step, so a huge lam shrinks w instead of overshooting
    w = (w - lr * gw) / (1.0 + 2.0 * lr * lam)
    return w, b - lr * gb


def fit_svm(train, lr, lam=DEFAULT_LAMBDA, epochs=100, seed=0, batch_size=16):
    """Train on a list of AdosRecord by seeded-shuffle subgradient descent.

    ``batch_size=None`` takes one full-batch step per epoch and never draws
    from the RNG; otherwise each epoch visits a fresh seeded permutation in
    minibatches.
    """
    if not train:
        raise ValueError("training set is empty")
    if lr <= 0 or lam < 0:
        raise ValueError(f"need lr > 0 and lam >= 0, got lr={lr}, lam={lam}")
    x, y = design_matrix(train)
    stats = DatasetStats.from_labels(r.label for r in train)
    if stats.n_asd == 0 or stats.n_non_asd == 0:
        raise ValueError("training set must contain both ASD and non-ASD records")

    w, b = np.zeros(x.shape[1]), 0.0
    rng = make_rng(seed)
    n = len(y)
    for _ in range(epochs):
        if batch_size is None:
            w, b = _step(w, b, x, y, lr, lam)
            continue
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            w, b = _step(w, b, x[idx], y[idx], lr, lam)
    if not (np.all(np.isfinite(w)) and math.isfinite(b)):
        raise FloatingPointError(f"SVM weights diverged (lr={lr}, lam={lam})")
    return LinearSvmModel(w, float(b), lr, lam, epochs, batch_size, seed, stats.n_asd, stats.n_non_asd)


def predict_margin(model: LinearSvmModel, features) -> float:
    return float(np.dot(model.weights, features) + model.bias)


def margin_to_probability(margin: float, scale: float = 1.0) -> float:
    """Logistic squashing of a margin, kept strictly inside (0, 1)."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    z = scale * margin
    if z >= 0:
        p = 1.0 / (1.0 + math.exp(-z))
    else:
        e = math.exp(z)
        p = e / (1.0 + e)
    return min(max(p, _PROB_EPS), 1.0 - _PROB_EPS)


def predict_labels(model: LinearSvmModel, records) -> list[Label]:
    x, _ = design_matrix(records)
    return [Label.ASD if m >= 0 else Label.NON_ASD for m in model.margins(x)]


def accuracy_on(model: LinearSvmModel, records) -> float:
    preds = predict_labels(model, records)
    return sum(p == r.label for p, r in zip(preds, records)) / len(records)


def lr_sweep(train, validation, grid=DEFAULT_LR_GRID, lam=DEFAULT_LAMBDA, epochs=100, seed=0,
             batch_size=16):
    """Fit one model per learning rate and pick the best on validation.

    Returns ``(best_lr, accuracies)`` with accuracies in grid order. Ties go
    to the smaller learning rate.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("learning-rate grid is empty")
    if not validation:
        raise ValueError("validation set is empty")
    accs = [accuracy_on(fit_svm(train, lr, lam, epochs, seed, batch_size), validation) for lr in grid]
    best = max(range(len(grid)), key=lambda i: (accs[i], -grid[i]))
    return grid[best], accs


def _fmt(value: float) -> str:
    return format(value, ".17g")


def dumps_model(model: LinearSvmModel) -> str:
    lines = [
        MODEL_HEADER,
        "weights = " + ", ".join(_fmt(float(v)) for v in model.weights),
        f"bias = {_fmt(model.bias)}",
        f"lr = {_fmt(model.lr)}",
        f"lam = {_fmt(model.lam)}",
        f"epochs = {model.epochs}",
        f"batch_size = {'full' if model.batch_size is None else model.batch_size}",
        f"seed = {model.seed}",
        f"n_asd = {model.n_asd}",
        f"n_non_asd = {model.n_non_asd}",
    ]
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> LinearSvmModel:
    lines = text.splitlines()
    if not lines or lines[0] != MODEL_HEADER:
        raise ValueError(f"not an SVM model file (header {lines[:1]!r})")
    kv = {}
    for line in lines[1:]:
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ValueError(f"malformed line {line!r}")
        kv[key] = value
    weights = np.array([float(v) for v in kv["weights"].split(",")])
    if weights.shape != (len(FEATURES),):
        raise ValueError(f"expected {len(FEATURES)} weights, got {weights.size}")
    return LinearSvmModel(
        weights=weights,
        bias=float(kv["bias"]),
        lr=float(kv["lr"]),
        lam=float(kv["lam"]),
        epochs=int(kv["epochs"]),
        batch_size=None if kv["batch_size"] == "full" else int(kv["batch_size"]),
        seed=int(kv["seed"]),
        n_asd=int(kv["n_asd"]),
        n_non_asd=int(kv["n_non_asd"]),
    )
