"""Knowledge-aware training.

The per-instance objective is ``C(p) + lam * R(p)`` where ``C`` is mean binary
cross-entropy over labels and ``R`` the smoothed square-root Laplacian
penalty from :mod:`kgmlc.consistency`. A batch objective is the mean of the
per-instance objectives. Gradients reach the classifier through the
chain rule ``dK/dTheta = (dC/dp + lam dR/dp) dp/dTheta``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from . import consistency as cons
from .consistency import ConsistencyMatrix
from .dataset import Dataset
from .model import DEFAULT_EXPERTS, ModelParams, backward, forward, init_params, pool_dataset

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.01
    learning_rate: float = 0.01
    epochs: int = 5
    batch_size: int = 1024
    seed: int = 0
    epsilon_sqrt: float = cons.DEFAULT_EPSILON
    num_experts: int = DEFAULT_EXPERTS

    def __post_init__(self):
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ValueError("lambda must be finite and >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.num_experts < 1:
            raise ValueError("epochs, batch_size and num_experts must be positive")
        if self.epsilon_sqrt <= 0:
            raise ValueError("epsilon_sqrt must be positive")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_cost: float
    mean_knowledge: float
    mean_total: float
    seconds: float

    def log_line(self) -> str:
        return (
            f"{self.epoch}\t{self.mean_cost:.17g}\t{self.mean_knowledge:.17g}"
            f"\t{self.mean_total:.17g}\t{self.seconds:.6f}"
        )


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_time: float = 0.0
    params: ModelParams | None = None

    def write_log(self, fh: TextIO) -> None:
        fh.write("epoch\tmean_C\tmean_reg\tmean_K\tseconds\n")
        for rec in self.epochs:
            fh.write(rec.log_line() + "\n")


def _indicator(labels, L: int) -> np.ndarray:
    # ndarrays are 0/1 indicators, anything else is a collection of indices
    if isinstance(labels, np.ndarray):
        return labels.astype(np.float64)
    out = np.zeros(L)
    idx = list(labels)
    if any(not 0 <= i < L for i in idx):
        raise ValueError("label index out of range")
    out[idx] = 1.0
    return out


def feature_cost(prediction, labels) -> tuple[float | np.ndarray, np.ndarray]:
    """Mean binary cross-entropy over labels, and its gradient in ``p``.

    ``labels`` is a set of indices or a 0/1 vector; a 2-D ``prediction`` with
    an (M, L) indicator gives one cost per row. Probabilities are clamped to
    ``[1e-7, 1 - 1e-7]`` inside the logs, so the gradient is zero wherever the
    clamp is active.
    """
    p = np.asarray(prediction, dtype=np.float64)
    L = p.shape[-1]
    y = _indicator(labels, L) if p.ndim == 1 else np.asarray(labels, dtype=np.float64)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    value = -np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc), axis=-1)
    grad = (-y / pc + (1.0 - y) / (1.0 - pc)) / L
    grad = np.where((p < PROB_CLAMP) | (p > 1.0 - PROB_CLAMP), 0.0, grad)
    return (float(value) if p.ndim == 1 else value), grad


def knowledge_cost(prediction, S: ConsistencyMatrix, lam: float, epsilon: float = cons.DEFAULT_EPSILON):
    """``lam`` times the Laplacian penalty and its gradient; exact zeros at ``lam == 0``."""
    p = np.asarray(prediction, dtype=np.float64)
    if lam == 0:
        return (0.0 if p.ndim == 1 else np.zeros(p.shape[0])), np.zeros_like(p)
    value, grad = cons.regularizer(S, p, epsilon)
    return lam * value, lam * grad


def objective(params: ModelParams, X: np.ndarray, Y: np.ndarray, S: ConsistencyMatrix | None,
              lam: float, epsilon: float = cons.DEFAULT_EPSILON):
    """Mean knowledge-aware cost over a batch and its parameter gradient.

    Returns ``(mean_K, mean_C, mean_R, grads)`` where ``R`` is the unscaled
    penalty. ``S=None`` runs the feature-cost-only path.
    """
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    M = X.shape[0]
    P = forward(params, X)
    c_val, c_grad = feature_cost(P, Y)
    upstream = c_grad
    r_val = np.zeros(M)
    k_val = c_val
    if S is not None:
        r_grad = np.zeros_like(P)
        if lam > 0:
            r_val, r_grad = cons.regularizer(S, P, epsilon)
        upstream = c_grad + lam * r_grad
        k_val = c_val + lam * r_val
    grads = backward(params, X, upstream / M)
    return float(np.mean(k_val)), float(np.mean(c_val)), float(np.mean(r_val)), grads


def train(model_kind: str, dataset: Dataset, S: ConsistencyMatrix | None, config: TrainConfig,
          params: ModelParams | None = None) -> tuple[ModelParams, TrainReport]:
    """Mini-batch gradient descent on the knowledge-aware cost.

    Instances are shuffled each epoch from ``config.seed``; the same data,
    config and seed always give the same parameters. Passing ``S=None``
    trains on the feature cost alone.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    L = dataset.num_labels
    if S is not None and S.size != L:
        raise ValueError(f"consistency matrix has size {S.size}, dataset has {L} labels")
    if params is None:
        params = init_params(model_kind, L, dataset.feature_dim, config.num_experts, config.seed)
    else:
        params = params.copy()
    X = pool_dataset(dataset)
    Y = dataset.label_matrix()
    N = X.shape[0]
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(N)
        sums = np.zeros(3)
        for b, lo in enumerate(range(0, N, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            k, c, r, grads = objective(params, X[idx], Y[idx], S, config.lam, config.epsilon_sqrt)
            if not (math.isfinite(k) and all(np.all(np.isfinite(g)) for g in grads.values())):
                raise TrainingAborted(f"non-finite loss or gradient at epoch {epoch}, batch {b}")
            for name, g in grads.items():
                arr = getattr(params, name)
                arr -= config.learning_rate * g
            n = idx.size
            sums += (c * n, r * n, k * n)
        mean_c, mean_r, mean_k = sums / N
        rec = EpochRecord(epoch, mean_c, mean_r, mean_k, time.perf_counter() - t0)
        log.info("epoch %d C=%.6f R=%.6f K=%.6f", epoch, mean_c, mean_r, mean_k)
        report.epochs.append(rec)
    report.wall_time = time.perf_counter() - start
    report.params = params
    return params, report


def two_stage_baseline(predictions: Sequence[np.ndarray] | np.ndarray, S: ConsistencyMatrix,
                       steps: int, step_size: float, epsilon: float = cons.DEFAULT_EPSILON) -> np.ndarray:
    """Post-hoc smoothing of fixed predictions.

    Runs ``steps`` of projected gradient descent on the square-root Laplacian
    penalty alone, starting from each prediction and clipping to [0, 1]. The
    classifier is never touched.
    """
    P = np.array(predictions, dtype=np.float64, copy=True)
    single = P.ndim == 1
    P = np.atleast_2d(P)
    for _ in range(steps):
        _, grad = cons.regularizer(S, P, epsilon)
        P = np.clip(P - step_size * grad, 0.0, 1.0)
    return P[0] if single else P
