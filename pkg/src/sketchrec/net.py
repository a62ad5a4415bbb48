"""Feed-forward sketch-to-sketch network with exact analytic gradients.

The model maps a flat multimodal input sketch to output logits that are
softmaxed per sketch row, so each row of the output is a distribution over
sketch_dim buckets. Gradients are hand-rolled reverse mode and are exact,
which both training and the attribution path rely on; the test suite checks
them against central finite differences.

All gradient-checked paths run in float64. Training may run in float32 via
``TrainConfig.dtype`` for bulk speed.

Checkpoint file layout (little-endian):

    magic ``SRPMODL1`` (8 bytes)
    u32 n_widths, then u32 widths (input, hidden..., output)
    u32 n_sketches, u32 sketch_dim
    u16 activation tag length, tag (UTF-8), f64 leak, u64 seed
    per layer: weight matrix row-major float64 [out, in], bias float64 [out]
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DataFormatError, DivergenceError, NumericError
from .seeding import rng_for

log = logging.getLogger(__name__)

MODEL_MAGIC = b"SRPMODL1"


@dataclass
class SketchModel:
    weights: list[np.ndarray]  # [out, in] per layer
    biases: list[np.ndarray]  # [out] per layer
    n_sketches: int
    sketch_dim: int
    activation: str = "leaky_relu"
    leak: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.activation != "leaky_relu":
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.output_dim != self.n_sketches * self.sketch_dim:
            raise ContractError(
                f"output width {self.output_dim} != n_sketches*sketch_dim "
                f"{self.n_sketches * self.sketch_dim}"
            )

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.weights[-1].shape[0])

    def copy(self) -> "SketchModel":
        return SketchModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.n_sketches,
            self.sketch_dim,
            self.activation,
            self.leak,
            self.seed,
        )

    def astype(self, dtype) -> "SketchModel":
        return SketchModel(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.n_sketches,
            self.sketch_dim,
            self.activation,
            self.leak,
            self.seed,
        )


def init_model(
    input_dim: int,
    n_sketches: int,
    sketch_dim: int,
    hidden: int = 256,
    hidden_layers: int = 3,
    seed: int = 0,
    leak: float = 0.01,
) -> SketchModel:
    """Kaiming-uniform weights (fan-in scaled, leaky-ReLU gain), zero biases."""
    widths = [input_dim] + [hidden] * hidden_layers + [n_sketches * sketch_dim]
    gain = math.sqrt(2.0 / (1.0 + leak * leak))
    weights = []
    biases = []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        bound = gain * math.sqrt(3.0 / fan_in)
        rng = rng_for(seed, i)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return SketchModel(weights, biases, n_sketches, sketch_dim, "leaky_relu", leak, seed)


@dataclass
class ForwardTrace:
    """Activations entering each layer plus pre-activations, kept 2-D."""

    inputs: list[np.ndarray]  # inputs[i] feeds layer i; inputs[0] is x
    preacts: list[np.ndarray]  # preacts[i] = inputs[i] @ W_i.T + b_i
    squeeze: bool  # True when the caller passed a single vector

    @property
    def logits(self) -> np.ndarray:
        return self.preacts[-1]


def _leaky(z: np.ndarray, leak: float) -> np.ndarray:
    return np.where(z > 0.0, z, leak * z)


def _leaky_grad(z: np.ndarray, leak: float) -> np.ndarray:
    return np.where(z > 0.0, 1.0, leak)


def row_softmax(logits: np.ndarray, n_sketches: int, sketch_dim: int) -> np.ndarray:
    """Per-sketch-row softmax; accepts [out] or [B, out], returns
    [n_sketches, sketch_dim] or [B, n_sketches, sketch_dim]."""
    squeeze = logits.ndim == 1
    z = np.atleast_2d(logits).reshape(-1, n_sketches, sketch_dim)
    z = z - z.max(axis=2, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=2, keepdims=True)
    return probs[0] if squeeze else probs


def row_log_softmax(logits: np.ndarray, n_sketches: int, sketch_dim: int) -> np.ndarray:
    squeeze = logits.ndim == 1
    z = np.atleast_2d(logits).reshape(-1, n_sketches, sketch_dim)
    z = z - z.max(axis=2, keepdims=True)
    logq = z - np.log(np.exp(z).sum(axis=2, keepdims=True))
    return logq[0] if squeeze else logq


def forward(
    model: SketchModel, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, ForwardTrace]:
    """Run the network; returns (logits, per-row softmax probs, trace).

    ``x`` may be a single flat vector or a [B, input_dim] batch; outputs and
    trace follow suit. Non-finite logits raise NumericError.
    """
    x = np.asarray(x)
    squeeze = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.input_dim:
        raise ContractError(f"input width {X.shape[1]} != model input dim {model.input_dim}")
    inputs = [X]
    preacts = []
    a = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W.T + b
        preacts.append(z)
        if i < last:
            a = _leaky(z, model.leak)
            inputs.append(a)
    logits = preacts[-1]
    if not np.all(np.isfinite(logits)):
        bad = int(np.count_nonzero(~np.isfinite(logits)))
        raise NumericError(f"non-finite logits in forward pass ({bad} entries)")
    probs = row_softmax(logits, model.n_sketches, model.sketch_dim)
    trace = ForwardTrace(inputs, preacts, squeeze)
    if squeeze:
        return logits[0], probs, trace
    return logits, probs, trace


def backward(
    model: SketchModel,
    trace: ForwardTrace,
    out_grad: np.ndarray,
    with_param_grads: bool = True,
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]] | None]:
    """Exact reverse-mode gradients of <out_grad, logits>.

    Returns (input gradient, [(dW, db), ...] summed over the batch). Pass
    ``with_param_grads=False`` to skip the parameter terms (used by the
    attribution path, which only needs input gradients).
    """
    G = np.atleast_2d(np.asarray(out_grad))
    if G.shape != trace.logits.shape:
        raise ContractError(f"out_grad shape {G.shape} != logits shape {trace.logits.shape}")
    param_grads: list[tuple[np.ndarray, np.ndarray]] | None = None
    if with_param_grads:
        param_grads = [None] * len(model.weights)  # type: ignore[list-item]
    delta = G
    for i in range(len(model.weights) - 1, -1, -1):
        if with_param_grads:
            param_grads[i] = (delta.T @ trace.inputs[i], delta.sum(axis=0))
        upstream = delta @ model.weights[i]
        if i > 0:
            delta = upstream * _leaky_grad(trace.preacts[i - 1], model.leak)
        else:
            input_grad = upstream
    if trace.squeeze:
        input_grad = input_grad[0]
    return input_grad, param_grads


def _normalize_target_rows(targets: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Count-normalize target rows to distributions; all-zero rows are
    masked out (skipped) and counted."""
    sums = targets.sum(axis=-1, keepdims=True)
    zero = sums == 0.0
    p = targets / np.where(zero, 1.0, sums)
    mask = (~zero).astype(np.float64)
    return p, mask, int(zero.sum())


def batch_loss_and_grads(
    model: SketchModel, X: np.ndarray, targets: np.ndarray
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]], int]:
    """Mean over the batch of the per-row cross-entropy loss, with exact
    parameter gradients. ``targets`` holds raw count sketches
    [B, n_sketches, sketch_dim]; rows are count-normalized here."""
    B = X.shape[0]
    n_s, s_d = model.n_sketches, model.sketch_dim
    logits, probs, trace = forward(model, X)
    logq = row_log_softmax(logits, n_s, s_d)
    p, mask, skipped = _normalize_target_rows(np.asarray(targets, dtype=X.dtype))
    if skipped:
        log.warning("skipped %d all-zero target rows", skipped)
    per_row = -(p * logq).sum(axis=2)  # [B, n_s]
    loss = float((per_row * mask[..., 0]).sum() / (n_s * B))
    dlogits = (probs - p) * mask / (n_s * B)
    _, param_grads = backward(model, trace, dlogits.reshape(B, n_s * s_d))
    return loss, param_grads, skipped


def loss_and_grad(
    model: SketchModel, x: np.ndarray, target: np.ndarray
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Single-example loss: (1/n_sketches) sum_k CE(normalized target row k,
    softmax row k), with exact parameter gradients."""
    target = np.asarray(target)
    if not np.any(target > 0.0):
        raise ContractError("target sketch has no mass")
    loss, grads, _ = batch_loss_and_grads(model, np.atleast_2d(x), target[None, ...])
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: str = "float64"


@dataclass
class TrainResult:
    model: SketchModel
    epoch_losses: list[float]
    skipped_rows: int = 0


class _Adam:
    def __init__(self, shapes, config: TrainConfig, dtype):
        self.m = [np.zeros(s, dtype=dtype) for s in shapes]
        self.v = [np.zeros(s, dtype=dtype) for s in shapes]
        self.t = 0
        self.cfg = config

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            p -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def train(
    model: SketchModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
) -> TrainResult:
    """Adam training over a fixed-order seeded shuffle; deterministic given
    seed, data, and config. The input model is left untouched.

    Raises DivergenceError (carrying the last finite-epoch parameters) if the
    loss goes non-finite.
    """
    if len(inputs) == 0:
        raise ContractError("training set is empty")
    dtype = np.float32 if config.dtype == "float32" else np.float64
    work = model.astype(dtype)
    X = np.asarray(inputs, dtype=dtype)
    T = np.asarray(targets, dtype=dtype)
    params = work.weights + work.biases
    adam = _Adam([p.shape for p in params], config, dtype)
    rng = rng_for(config.seed)
    n = len(X)
    losses: list[float] = []
    skipped_total = 0
    last_good = work.copy()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads, skipped = batch_loss_and_grads(work, X[idx], T[idx])
            skipped_total += skipped
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"loss became non-finite in epoch {epoch + 1}",
                    model=last_good.astype(np.float64),
                )
            flat_grads = [g for g, _ in grads] + [g for _, g in grads]
            adam.step(params, flat_grads)
            total += loss * len(idx)
        losses.append(total / n)
        last_good = work.copy()
    return TrainResult(work.astype(np.float64), losses, skipped_total)


def save_model(model: SketchModel, path: str | Path) -> None:
    path = Path(path)
    widths = model.widths
    tag = model.activation.encode("utf-8")
    chunks = [MODEL_MAGIC, struct.pack("<I", len(widths))]
    chunks.append(struct.pack(f"<{len(widths)}I", *widths))
    chunks.append(struct.pack("<II", model.n_sketches, model.sketch_dim))
    chunks.append(struct.pack("<H", len(tag)))
    chunks.append(tag)
    chunks.append(struct.pack("<dQ", model.leak, model.seed & ((1 << 64) - 1)))
    for W, b in zip(model.weights, model.biases):
        chunks.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    path.write_bytes(b"".join(chunks))


def load_model(path: str | Path) -> SketchModel:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != MODEL_MAGIC:
        raise DataFormatError(f"{path}: not a model checkpoint (bad magic)")
    off = 8
    try:
        (n_widths,) = struct.unpack_from("<I", blob, off)
        off += 4
        widths = list(struct.unpack_from(f"<{n_widths}I", blob, off))
        off += 4 * n_widths
        n_sketches, sketch_dim = struct.unpack_from("<II", blob, off)
        off += 8
        (tag_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        activation = blob[off : off + tag_len].decode("utf-8")
        off += tag_len
        leak, seed = struct.unpack_from("<dQ", blob, off)
        off += 16
        weights = []
        biases = []
        for i in range(n_widths - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            W = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=off)
            off += 8 * fan_in * fan_out
            b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=off)
            off += 8 * fan_out
            weights.append(W.reshape(fan_out, fan_in).astype(np.float64))
            biases.append(b.astype(np.float64))
    except struct.error:
        raise DataFormatError(f"{path}: truncated model checkpoint") from None
    if off != len(blob):
        raise DataFormatError(f"{path}: trailing bytes in model checkpoint")
    return SketchModel(weights, biases, n_sketches, sketch_dim, activation, leak, seed)
