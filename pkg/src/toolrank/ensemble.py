"""Learned alternatives to rank-comparison aggregation.

Each variant maps the per-item feature vector of tool scores (length |T|) to
one score:

* ``lr``  -- a global weight vector, ``f(x) = x . v``
* ``mlp`` -- ``|T| -> 8 -> 1`` with ReLU
* ``att`` -- softmax attention over tools reweights ``x`` before the MLP

Training minimizes the mean pairwise hinge loss between each user's target
item and sampled negatives by batch gradient descent with backtracking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .artifacts import read_container, write_container
from .rectools import ScoreVector, TrainingError, normalize_scores

logger = logging.getLogger(__name__)

VARIANTS = ("rc", "lr", "mlp", "att")


@dataclass
class EnsembleModel:
    variant: str
    params: dict[str, np.ndarray]
    n_tools: int
    seed: int = 0
    margin: float = 1.0
    loss_history: list[float] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return sum(1 for k in self.params if k[0] == "W" and k[1:].isdigit())

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _mlp_forward(params, n_layers, X):
    acts = [X]
    h = X
    for layer in range(n_layers):
        z = h @ params[f"W{layer}"] + params[f"b{layer}"]
        h = np.maximum(z, 0.0) if layer < n_layers - 1 else z
        acts.append(h)
    return h[:, 0], acts


def _mlp_backward(params, n_layers, acts, g):
    grads = {}
    delta = g[:, None]
    for layer in reversed(range(n_layers)):
        h_in = acts[layer]
        grads[f"W{layer}"] = h_in.T @ delta
        grads[f"b{layer}"] = delta.sum(axis=0)
        delta = delta @ params[f"W{layer}"].T
        if layer > 0:
            delta = delta * (acts[layer] > 0)
    return grads, delta


def forward(model: EnsembleModel, X: np.ndarray):
    """Scores for feature rows ``X`` (n x |T|) and a cache for :func:`backward`."""
    p = model.params
    if model.variant == "lr":
        return X @ p["v"], X
    if model.variant == "mlp":
        out, acts = _mlp_forward(p, model.n_layers, X)
        return out, acts
    if model.variant == "att":
        a = _softmax(X @ p["Wa"] + p["ba"])
        H = a * X
        out, acts = _mlp_forward(p, model.n_layers, H)
        return out, (X, a, acts)
    raise ValueError(f"variant {model.variant!r} has no forward pass")


def backward(model: EnsembleModel, cache, g: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given ``g = dLoss/dscore`` per row."""
    p = model.params
    if model.variant == "lr":
        return {"v": cache.T @ g}
    if model.variant == "mlp":
        grads, _ = _mlp_backward(p, model.n_layers, cache, g)
        return grads
    X, a, acts = cache
    grads, gH = _mlp_backward(p, model.n_layers, acts, g)
    ga = gH * X
    glogit = a * (ga - (a * ga).sum(axis=1, keepdims=True))
    grads["Wa"] = X.T @ glogit
    grads["ba"] = glogit.sum(axis=0)
    return grads


def init_model(variant: str, n_tools: int, seed: int = 0, margin: float = 1.0,
               hidden: int = 8) -> EnsembleModel:
    rng = np.random.default_rng(seed)
    if variant == "rc":
        params = {}
    elif variant == "lr":
        params = {"v": np.full(n_tools, 1.0 / n_tools)}
    elif variant in ("mlp", "att"):
        params = {
            "W0": rng.normal(0.0, 1.0 / np.sqrt(n_tools), size=(n_tools, hidden)),
            "b0": np.zeros(hidden),
            "W1": rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, 1)),
            "b1": np.zeros(1),
        }
        if variant == "att":
            params["Wa"] = rng.normal(0.0, 0.1, size=(n_tools, n_tools))
            params["ba"] = np.zeros(n_tools)
    else:
        raise ValueError(f"unknown ensemble variant {variant!r}; expected one of {VARIANTS}")
    return EnsembleModel(variant, params, n_tools, seed, margin)


def hinge_objective(model: EnsembleModel, X_pos: np.ndarray, X_neg: np.ndarray):
    """Mean of ``max(0, margin - (f(pos) - f(neg)))`` and its parameter gradients.

    ``X_pos`` is (P x |T|); ``X_neg`` is (P x n_neg x |T|).
    """
    n_pos, n_neg, n_tools = X_neg.shape
    X = np.concatenate([X_pos, X_neg.reshape(-1, n_tools)])
    out, cache = forward(model, X)
    f_pos, f_neg = out[:n_pos], out[n_pos:].reshape(n_pos, n_neg)
    slack = model.margin - (f_pos[:, None] - f_neg)
    active = (slack > 0).astype(np.float64)
    n_pairs = active.size
    loss = float((slack * active).sum() / n_pairs)
    g = np.concatenate([-active.sum(axis=1), active.ravel()]) / n_pairs
    return loss, backward(model, cache, g)


def build_pairs(per_user_tool_scores: Sequence[Sequence[ScoreVector]], targets: Sequence[Sequence[int]],
                n_neg: int = 4, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Features of every (target, negative) pair; negatives are uniform non-targets."""
    rng = np.random.default_rng(seed)
    pos_rows, neg_rows = [], []
    for vectors, target in zip(per_user_tool_scores, targets):
        F = np.stack([normalize_scores(v).scores for v in vectors], axis=1)  # items x tools
        n_items = F.shape[0]
        tset = set(target)
        if len(tset) >= n_items:
            continue
        for t in target:
            neg = rng.integers(0, n_items, size=n_neg)
            while True:
                bad = np.fromiter((j in tset for j in neg), dtype=bool, count=n_neg)
                if not bad.any():
                    break
                neg[bad] = rng.integers(0, n_items, size=int(bad.sum()))
            pos_rows.append(F[t])
            neg_rows.append(F[neg])
    if not pos_rows:
        raise TrainingError("no training pairs")
    return np.stack(pos_rows), np.stack(neg_rows)


def train_ensemble(variant: str, per_user_tool_scores: Sequence[Sequence[ScoreVector]],
                   targets: Sequence[Sequence[int]], *, epochs: int = 200, lr: float = 0.5,
                   margin: float = 1.0, n_neg: int = 4, seed: int = 0, hidden: int = 8) -> EnsembleModel:
    n_tools = len(per_user_tool_scores[0])
    model = init_model(variant, n_tools, seed=seed, margin=margin, hidden=hidden)
    if variant == "rc":
        return model
    X_pos, X_neg = build_pairs(per_user_tool_scores, targets, n_neg=n_neg, seed=seed)
    loss, grads = hinge_objective(model, X_pos, X_neg)
    model.loss_history.append(loss)
    step = lr
    for epoch in range(epochs):
        if not np.isfinite(loss):
            raise TrainingError(f"{variant}: non-finite loss at epoch {epoch}")
        if loss == 0.0:
            break
        for _ in range(30):
            trial = EnsembleModel(variant, {k: v - step * grads[k] for k, v in model.params.items()},
                                  n_tools, seed, margin)
            loss2, grads2 = hinge_objective(trial, X_pos, X_neg)
            if not np.isfinite(loss2):
                raise TrainingError(f"{variant}: non-finite loss at epoch {epoch + 1}")
            if loss2 <= loss:
                break
            step *= 0.5
        else:
            break
        model.params, loss, grads = trial.params, loss2, grads2
        model.loss_history.append(loss)
        step *= 1.2
    return model


def apply_ensemble(model: EnsembleModel, per_tool_scores: Sequence[ScoreVector]) -> ScoreVector:
    if model.variant == "rc":
        raise ValueError("the rc variant has no learned scorer")
    F = np.stack([v.scores for v in per_tool_scores], axis=1)
    out, _ = forward(model, F)
    excluded = np.logical_and.reduce([v.excluded for v in per_tool_scores])
    return ScoreVector(-1, per_tool_scores[0].user, out, excluded=excluded)


def blend(r_hat: ScoreVector, r_prime: ScoreVector) -> ScoreVector:
    a, b = normalize_scores(r_hat), normalize_scores(r_prime)
    return ScoreVector(r_hat.tool, r_hat.user, a.scores + b.scores, excluded=a.excluded & b.excluded)


def save_ensemble(model: EnsembleModel, path, extra_meta: dict | None = None) -> None:
    meta = {**(extra_meta or {}), "variant": model.variant, "n_tools": model.n_tools, "seed": model.seed, "margin": model.margin}
    arrays = dict(model.params)
    arrays["loss_history"] = np.asarray(model.loss_history, dtype=np.float64)
    write_container(path, "ensemble", meta, arrays)


def load_ensemble(path) -> EnsembleModel:
    meta, arrays = read_container(path, kind="ensemble")
    history = arrays.pop("loss_history").tolist()
    return EnsembleModel(meta["variant"], arrays, meta["n_tools"], meta["seed"], meta["margin"], history)
