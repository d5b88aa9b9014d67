"""Small dense networks with hand-rolled reverse mode, Adam and gradient clipping.

Tensors are plain float64 numpy arrays. A network is an :class:`MLPParams`
value; :func:`forward` optionally records a :class:`Tape` that
:func:`backward` consumes to produce gradients with the same layout as the
parameters (plus the gradient with respect to the input, which SAC needs to
differentiate a critic through its action input).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

import numpy as np

ACTIVATIONS = ("tanh", "relu")
HEADS = ("linear", "categorical", "gaussian")


class ShapeError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


class NonFiniteGradient(FloatingPointError):
    def __init__(self, path: str):
        super().__init__(f"non-finite gradient entry in {path}")
        self.path = path


@dataclass
class MLPParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    head: str = "linear"
    log_std: np.ndarray | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty and paired")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i}: expects {w.shape[1]} inputs, layer {i - 1} emits "
                    f"{self.weights[i - 1].shape[0]}"
                )
        if self.head == "gaussian":
            if self.log_std is None or self.log_std.shape != (self.out_dim,):
                raise ShapeError("gaussian head needs a log_std vector per action dimension")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"layers.{i}.weight"] = w
            out[f"layers.{i}.bias"] = b
        if self.log_std is not None:
            out["log_std"] = self.log_std
        return out

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "MLPParams":
        n = len(self.weights)
        return replace(
            self,
            weights=[arrays[f"layers.{i}.weight"] for i in range(n)],
            biases=[arrays[f"layers.{i}.bias"] for i in range(n)],
            log_std=arrays.get("log_std"),
        )

    def zeros_like(self) -> "MLPParams":
        return self.with_arrays({k: np.zeros_like(v) for k, v in self.arrays().items()})

    def copy(self) -> "MLPParams":
        return self.with_arrays({k: v.copy() for k, v in self.arrays().items()})


# ---------------------------------------------------------------------------
# parameter trees: MLPParams, dicts/lists of them, or bare arrays


def tree_leaves(tree: Any, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    if isinstance(tree, np.ndarray):
        return [(prefix or "value", tree)]
    if isinstance(tree, MLPParams):
        return [(f"{prefix}.{k}" if prefix else k, v) for k, v in tree.arrays().items()]
    if isinstance(tree, dict):
        out = []
        for k in tree:
            out.extend(tree_leaves(tree[k], f"{prefix}.{k}" if prefix else str(k)))
        return out
    if isinstance(tree, (list, tuple)):
        out = []
        for i, sub in enumerate(tree):
            out.extend(tree_leaves(sub, f"{prefix}[{i}]"))
        return out
    raise TypeError(f"unsupported parameter tree node {type(tree).__name__}")


def tree_rebuild(tree: Any, leaves: Iterable[np.ndarray]) -> Any:
    it = iter(leaves)

    def build(node):
        if isinstance(node, np.ndarray):
            return next(it)
        if isinstance(node, MLPParams):
            return node.with_arrays({k: next(it) for k in node.arrays()})
        if isinstance(node, dict):
            return {k: build(node[k]) for k in node}
        if isinstance(node, (list, tuple)):
            return type(node)(build(sub) for sub in node)
        raise TypeError(f"unsupported parameter tree node {type(node).__name__}")

    return build(tree)


def tree_map(fn, tree: Any) -> Any:
    return tree_rebuild(tree, [fn(a) for _, a in tree_leaves(tree)])


# ---------------------------------------------------------------------------
# initialisation


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(
    rng: np.random.Generator,
    sizes: list[int],
    activation: str = "tanh",
    head: str = "linear",
    hidden_gain: float = math.sqrt(2.0),
    out_gain: float = 1.0,
    log_std_init: float = 0.0,
) -> MLPParams:
    """Orthogonally initialised MLP with zero biases; ``sizes`` = [in, h1, ..., out]."""
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        gain = out_gain if i == len(sizes) - 2 else hidden_gain
        weights.append(orthogonal(rng, (sizes[i + 1], sizes[i]), gain))
        biases.append(np.zeros(sizes[i + 1]))
    log_std = np.full(sizes[-1], float(log_std_init)) if head == "gaussian" else None
    return MLPParams(weights, biases, activation, head, log_std)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class Tape:
    """Activations recorded by one forward pass, consumed by :func:`backward`."""

    params: MLPParams | None = None
    inputs: list[np.ndarray] = field(default_factory=list)
    hidden: list[np.ndarray] = field(default_factory=list)
    probs: np.ndarray | None = None
    batch: int = 0


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward(params: MLPParams, x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    """Evaluate the network on a batch ``x`` of shape (batch, in).

    Head outputs: ``linear`` raw values, ``categorical`` log-probabilities,
    ``gaussian`` the concatenation ``[mean, log_std]`` of shape (batch, 2*d).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"layer 0: input must be 2-D (batch, in), got shape {x.shape}")
    n_layers = len(params.weights)
    h = x
    inputs, hidden = [], []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if h.shape[1] != w.shape[1]:
            raise ShapeError(f"layer {i}: expects {w.shape[1]} inputs, got {h.shape[1]}")
        inputs.append(h)
        z = h @ w.T + b
        if i < n_layers - 1:
            h = np.tanh(z) if params.activation == "tanh" else np.maximum(z, 0.0)
            hidden.append(h if params.activation == "tanh" else z)
        else:
            h = z
    probs = None
    if params.head == "categorical":
        h = log_softmax(h)
        probs = np.exp(h)
    elif params.head == "gaussian":
        h = np.concatenate([h, np.broadcast_to(params.log_std, h.shape)], axis=1)
    if tape is not None:
        tape.params, tape.inputs, tape.hidden = params, inputs, hidden
        tape.probs, tape.batch = probs, x.shape[0]
    return h


def backward(
    params: MLPParams, tape: Tape, grad_out: np.ndarray
) -> tuple[MLPParams, np.ndarray]:
    """Reverse-mode pass: d(loss)/d(params) and d(loss)/d(input) given d(loss)/d(output)."""
    if tape is None or tape.params is None:
        raise UsageError("backward called before a recorded forward pass")
    if tape.params is not params:
        raise UsageError("tape was recorded for a different parameter set")
    g = np.asarray(grad_out, dtype=np.float64)
    d = params.out_dim
    log_std_grad = None
    if params.head == "categorical":
        g = g - tape.probs * g.sum(axis=1, keepdims=True)
    elif params.head == "gaussian":
        log_std_grad = g[:, d:].sum(axis=0)
        g = g[:, :d]
    expected = (tape.batch, d)
    if g.shape != expected:
        raise ShapeError(f"output gradient shape {g.shape} != {expected}")
    n_layers = len(params.weights)
    w_grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    b_grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        w_grads[i] = g.T @ tape.inputs[i]
        b_grads[i] = g.sum(axis=0)
        g = g @ params.weights[i]
        if i > 0:
            act = tape.hidden[i - 1]
            if params.activation == "tanh":
                g = g * (1.0 - act * act)
            else:
                g = g * (act > 0.0)
    grads = MLPParams(w_grads, b_grads, params.activation, params.head, log_std_grad)
    return grads, g


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: Any, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    leaves = tree_leaves(params)
    return AdamState(
        m={k: np.zeros_like(a) for k, a in leaves},
        v={k: np.zeros_like(a) for k, a in leaves},
        t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_update(params: Any, grads: Any, state: AdamState, name: str = "") -> tuple[Any, AdamState]:
    """One bias-corrected Adam step. Returns new params and a new state."""
    p_leaves = tree_leaves(params)
    g_leaves = tree_leaves(grads)
    if [k for k, _ in p_leaves] != [k for k, _ in g_leaves]:
        raise ShapeError("gradient tree does not mirror parameter tree")
    for k, g in g_leaves:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"{name}.{k}" if name else k)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], {}, {}
    for (k, p), (_, g) in zip(p_leaves, g_leaves):
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        new_m[k], new_v[k] = m, v
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    new_state = AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
    return tree_rebuild(params, new_p), new_state


def global_norm(grads: Any) -> float:
    leaves = [np.asarray(a, dtype=np.float64) for _, a in tree_leaves(grads)]
    peak = max((float(np.max(np.abs(a))) for a in leaves if a.size), default=0.0)
    if peak == 0.0 or not math.isfinite(peak):
        return peak
    # scale by the largest entry so tiny or huge gradients neither underflow nor overflow when squared
    return peak * math.sqrt(sum(float(np.sum((a / peak) ** 2)) for a in leaves))


def clip_grad_norm(grads: Any, max_norm: float) -> Any:
    """Rescale so the global L2 norm is at most ``max_norm``; unchanged if already within."""
    if max_norm < 0:
        raise ValueError("max_norm must be >= 0")
    norm = global_norm(grads)
    # slack keeps clipping idempotent under rounding of the rescaled norm
    if norm <= max_norm * (1.0 + 1e-12):
        return grads
    scale = max_norm / norm
    return tree_map(lambda a: a * scale, grads)
