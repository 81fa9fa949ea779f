"""Video-level pooling and per-label classifiers.

Two classifier kinds are supported, both producing independent per-label
probabilities from a pooled feature vector ``x`` augmented with a constant 1:

* ``logistic``: ``p_i = sigmoid(w_i . [x; 1])``
* ``moe``: ``p_i = sum_e softmax_e(g_ie . [x; 1]) * sigmoid(v_ie . [x; 1])``

Any model works with the training loop as long as it maps pooled features to
``p`` and can pull an upstream ``dLoss/dp`` back onto its parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, softmax

from .dataset import Dataset, VideoInstance

KINDS = ("logistic", "moe")
DEFAULT_EXPERTS = 2
DEFAULT_TOP_K = 20
CHECKPOINT_MAGIC = "kgmlc-checkpoint v1"


@dataclass(eq=False)
class ModelParams:
    """Classifier parameters; the last column of every weight block is the bias.

    ``logistic`` uses ``weights`` of shape (L, F+1). ``moe`` uses ``experts``
    and ``gates``, both (L, E, F+1).
    """

    kind: str
    num_labels: int
    feature_dim: int
    num_experts: int = 1
    seed: int = 0
    weights: np.ndarray | None = None
    experts: np.ndarray | None = None
    gates: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        for name, shape in self.shapes().items():
            arr = getattr(self, name)
            if arr is None:
                arr = np.zeros(shape)
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            setattr(self, name, arr)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        L, D = self.num_labels, self.feature_dim + 1
        if self.kind == "logistic":
            return {"weights": (L, D)}
        return {"experts": (L, self.num_experts, D), "gates": (L, self.num_experts, D)}

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.shapes()}

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def with_flat(self, flat: np.ndarray) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        parts, start = {}, 0
        for name, shape in self.shapes().items():
            n = int(np.prod(shape))
            parts[name] = flat[start : start + n].reshape(shape).copy()
            start += n
        if start != flat.size:
            raise ValueError(f"expected {start} parameters, got {flat.size}")
        return ModelParams(self.kind, self.num_labels, self.feature_dim, self.num_experts, self.seed, **parts)

    def copy(self) -> "ModelParams":
        return self.with_flat(self.flat())


def init_params(kind: str, num_labels: int, feature_dim: int, num_experts: int = DEFAULT_EXPERTS,
                seed: int = 0) -> ModelParams:
    """Weights i.i.d. uniform in [-0.01, 0.01], biases zero."""
    if kind == "logistic":
        num_experts = 1
    proto = ModelParams(kind, num_labels, feature_dim, num_experts, seed)
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in proto.shapes().items():
        arr = rng.uniform(-0.01, 0.01, size=shape)
        arr[..., -1] = 0.0
        arrays[name] = arr
    return ModelParams(kind, num_labels, feature_dim, num_experts, seed, **arrays)


def aoff_pool(instance: VideoInstance | np.ndarray) -> np.ndarray:
    """Mean over frames.

    Computed as an offset from the first frame so that identical frames pool
    back to exactly that frame.
    """
    frames = instance.frames if isinstance(instance, VideoInstance) else np.atleast_2d(np.asarray(instance, dtype=np.float64))
    if frames.shape[0] == 0:
        raise ValueError("cannot pool an instance with no frames")
    base = frames[0]
    return base + (frames - base).mean(axis=0)


def pool_dataset(dataset: Dataset) -> np.ndarray:
    """N x F matrix of pooled features."""
    if len(dataset) == 0:
        return np.zeros((0, dataset.feature_dim))
    return np.stack([aoff_pool(inst) for inst in dataset.instances])


def _augment(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def _as_batch(params: ModelParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[-1] != params.feature_dim:
        raise ValueError(f"feature dimension {X.shape[-1]} != model's {params.feature_dim}")
    return _augment(X), single


def _logits(Xa: np.ndarray, W: np.ndarray) -> np.ndarray:
    # W is (L, D) or (L, E, D); one matmul either way, so E=1 matches logistic bit for bit
    flat = W.reshape(-1, W.shape[-1])
    return (Xa @ flat.T).reshape((Xa.shape[0],) + W.shape[:-1])


def forward_logistic(params: ModelParams, x) -> np.ndarray:
    Xa, single = _as_batch(params, x)
    p = expit(_logits(Xa, params.weights))
    return p[0] if single else p


def _moe_parts(params: ModelParams, Xa: np.ndarray):
    gate = softmax(_logits(Xa, params.gates), axis=-1)
    expert = expit(_logits(Xa, params.experts))
    return gate, expert


def forward_moe(params: ModelParams, x) -> np.ndarray:
    Xa, single = _as_batch(params, x)
    gate, expert = _moe_parts(params, Xa)
    p = np.sum(gate * expert, axis=-1)
    return p[0] if single else p


def forward(params: ModelParams, x) -> np.ndarray:
    """Label probabilities for one pooled vector (L,) or a batch (M, L)."""
    if params.kind == "logistic":
        return forward_logistic(params, x)
    return forward_moe(params, x)


def backward(params: ModelParams, x, upstream) -> dict[str, np.ndarray]:
    """Gradient of a loss w.r.t. every parameter array, given ``dLoss/dp``.

    For a batch, ``upstream`` is (M, L) and per-instance gradients are summed.
    """
    Xa, single = _as_batch(params, x)
    U = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if U.shape != (Xa.shape[0], params.num_labels):
        raise ValueError(f"upstream shape {U.shape} does not match ({Xa.shape[0]}, {params.num_labels})")
    if params.kind == "logistic":
        p = expit(_logits(Xa, params.weights))
        return {"weights": (U * p * (1.0 - p)).T @ Xa}
    gate, expert = _moe_parts(params, Xa)
    p = np.sum(gate * expert, axis=-1, keepdims=True)
    d_expert = U[..., None] * gate * expert * (1.0 - expert)
    d_gate = U[..., None] * gate * (expert - p)
    return {
        "experts": np.einsum("mle,mf->lef", d_expert, Xa),
        "gates": np.einsum("mle,mf->lef", d_gate, Xa),
    }


def topk(probs, k: int = DEFAULT_TOP_K) -> list[tuple[int, float]]:
    """Top ``k`` labels by descending probability, ties by ascending index."""
    p = np.asarray(probs, dtype=np.float64)
    if not 1 <= k <= p.size:
        raise ValueError(f"k must lie in [1, {p.size}], got {k}")
    order = np.lexsort((np.arange(p.size), -p))[:k]
    return [(int(i), float(p[i])) for i in order]


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Text checkpoint: magic line, header, then one parameter per line."""
    header = (
        f"kind={params.kind} L={params.num_labels} F={params.feature_dim} "
        f"E={params.num_experts} seed={params.seed}"
    )
    body = "\n".join(f"{v:.17g}" for v in params.flat().tolist())
    Path(path).write_text(f"{CHECKPOINT_MAGIC}\n{header}\n{body}\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> ModelParams:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    fields = dict(tok.split("=", 1) for tok in lines[1].split())
    proto = ModelParams(fields["kind"], int(fields["L"]), int(fields["F"]), int(fields["E"]), int(fields["seed"]))
    flat = np.array([float(v) for v in lines[2:] if v.strip()])
    return proto.with_flat(flat)
