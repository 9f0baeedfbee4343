"""Per-pixel palm probability model: a fixed-depth MLP (four ReLU hidden
layers, one sigmoid output) trained with Adam on weighted binary cross
entropy.

All math runs in float64 through np.einsum rather than BLAS matmul: einsum
computes each output row independently of batch composition, which makes
single-sample forward passes, tiled grid inference, and threaded inference
bitwise identical. The output probability is clamped to [1e-7, 1 - 1e-7];
the clamp is part of the function, so the analytic gradient is zero where it
is active and matches central differences everywhere.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .compositor import AnnualStack
from .errors import DivergenceError, SchemaError
from .rastercore import BandGrid, atomic_write_text, map_row_blocks, nodata_mask

PROB_CLAMP = 1e-7
MODEL_FORMAT = "palmnet-1"
N_HIDDEN = 4
_PREDICT_BLOCK_ROWS = 64


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 60
    seed: int = 0
    hidden_sizes: tuple[int, int, int, int] = (64, 64, 32, 16)
    validation_fraction: float = 0.1
    patience: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if len(self.hidden_sizes) != N_HIDDEN or any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"hidden_sizes must be {N_HIDDEN} positive ints, got {self.hidden_sizes}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, epochs, and patience must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0 and self.adam_eps > 0):
            raise ValueError("bad Adam constants")


@dataclass(frozen=True)
class MlpParams:
    """Weights and biases, float64. layer_sizes has six entries: the input
    width, four hidden widths, and the single output unit."""

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...] = field(repr=False)
    biases: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) != N_HIDDEN + 2:
            raise ValueError(f"layer_sizes needs {N_HIDDEN + 2} entries, got {len(sizes)}")
        if sizes[-1] != 1:
            raise ValueError("output layer must have exactly one unit")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be positive")
        ws = tuple(np.array(w, dtype=np.float64, order="C", copy=True) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64, order="C", copy=True) for b in self.biases)
        if len(ws) != len(sizes) - 1 or len(bs) != len(sizes) - 1:
            raise ValueError("need one weight and bias tensor per layer transition")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(
                    f"layer {i}: expected W{(sizes[i], sizes[i + 1])} b{(sizes[i + 1],)}, "
                    f"got W{w.shape} b{b.shape}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: parameters must be finite")
        for arr in ws + bs:
            arr.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]


def init_params(n_inputs: int, config: TrainConfig = TrainConfig()) -> MlpParams:
    """He-normal initialization (output layer scaled by 1/fan_in), zero biases."""
    rng = np.random.default_rng(config.seed)
    sizes = (int(n_inputs), *config.hidden_sizes, 1)
    weights = []
    biases = []
    for i in range(len(sizes) - 1):
        fan_in = sizes[i]
        scale = math.sqrt(2.0 / fan_in) if i < len(sizes) - 2 else math.sqrt(1.0 / fan_in)
        weights.append(rng.standard_normal((sizes[i], sizes[i + 1])) * scale)
        biases.append(np.zeros(sizes[i + 1]))
    return MlpParams(sizes, tuple(weights), tuple(biases))


def _affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # einsum keeps each row's arithmetic independent of the batch, which is
    # what makes tiled and threaded inference bitwise reproducible
    return np.einsum("ni,io->no", x, w) + b


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_arrays(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], x: np.ndarray):
    """Returns (activations per layer, raw sigmoid, clamped probability)."""
    acts = [x]
    a = x
    n_layers = len(weights)
    for i in range(n_layers - 1):
        a = np.maximum(_affine(a, weights[i], biases[i]), 0.0)
        acts.append(a)
    z = _affine(a, weights[-1], biases[-1])[:, 0]
    p_raw = _sigmoid(z)
    p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return acts, p_raw, p


def _forward_full(params: MlpParams, x: np.ndarray):
    return _forward_arrays(params.weights, params.biases, x)


def _as_feature_matrix(params: MlpParams, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.n_inputs:
        raise ValueError(
            f"feature matrix must be (n, {params.n_inputs}), got shape {tuple(x.shape)}"
        )
    return x


def forward(params: MlpParams, features) -> float:
    """Probability for a single feature vector."""
    x = _as_feature_matrix(params, features)
    if x.shape[0] != 1:
        raise ValueError("forward takes a single feature vector; use predict for batches")
    return float(_forward_full(params, x)[2][0])


def predict(params: MlpParams, features) -> np.ndarray:
    """Clamped probabilities for a feature matrix, float64 (n,)."""
    return _forward_full(params, _as_feature_matrix(params, features))[2]


def _check_labels_weights(x, labels, weights):
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (x.shape[0],):
        raise ValueError(f"labels must be shape ({x.shape[0]},), got {y.shape}")
    if y.size == 0:
        raise ValueError("batch must be nonempty")
    if np.isnan(y).any() or (y < 0).any() or (y > 1).any():
        raise ValueError("labels must lie in [0, 1]")
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != y.shape:
            raise ValueError("weights must match labels in shape")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("weights must be finite and nonnegative")
    if not w.sum() > 0:
        raise ValueError("weights must not all be zero")
    return y, w


def loss(params: MlpParams, features, labels, weights=None) -> float:
    """Weight-averaged binary cross entropy of clamped probabilities."""
    x = _as_feature_matrix(params, features)
    y, w = _check_labels_weights(x, labels, weights)
    p = _forward_full(params, x)[2]
    ll = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(np.sum(w * ll) / np.sum(w))


def _loss_and_grads(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], x, y, w):
    acts, p_raw, p = _forward_arrays(weights, biases, x)
    wsum = np.sum(w)
    ll = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    loss_val = float(np.sum(w * ll) / wsum)

    # d(loss)/d(logit): (p - y) per sample, gated to zero where the clamp is
    # active, scaled by the normalized weight
    gate = (p_raw > PROB_CLAMP) & (p_raw < 1.0 - PROB_CLAMP)
    delta = ((p - y) * gate * (w / wsum))[:, None]

    grads_w = []
    grads_b = []
    for i in range(len(weights) - 1, -1, -1):
        grads_w.append(np.einsum("ni,no->io", acts[i], delta))
        grads_b.append(delta.sum(axis=0))
        if i > 0:
            delta = np.einsum("no,io->ni", delta, weights[i]) * (acts[i] > 0)
    grads_w.reverse()
    grads_b.reverse()
    return loss_val, grads_w, grads_b


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass(frozen=True)
class TrainingLog:
    epochs: tuple[EpochRecord, ...]
    best_epoch: int
    stopped_early: bool

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "epochs": [
                {"epoch": e.epoch, "train_loss": e.train_loss, "val_loss": e.val_loss}
                for e in self.epochs
            ],
        }


def train(features, labels, weights=None, config: TrainConfig = TrainConfig()):
    """Train from scratch; returns (MlpParams at the best validation epoch,
    TrainingLog). Deterministic for a fixed config (seeded permutations and
    init, einsum arithmetic). Raises DivergenceError on a non-finite loss."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    y, w = _check_labels_weights(x, labels, weights)
    hard = y >= 0.5
    if hard.all() or not hard.any():
        raise ValueError("training needs both classes present")

    rng = np.random.default_rng(config.seed)
    n = x.shape[0]
    n_val = max(1, int(round(config.validation_fraction * n)))
    if n - n_val < 1:
        raise ValueError(f"validation fraction {config.validation_fraction} leaves no training data")
    perm = rng.permutation(n)
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    if config.batch_size > tr_idx.size:
        raise ValueError(
            f"batch_size {config.batch_size} exceeds the training split of {tr_idx.size}"
        )
    xt, yt, wt = x[tr_idx], y[tr_idx], w[tr_idx]
    xv, yv, wv = x[val_idx], y[val_idx], w[val_idx]

    params = init_params(x.shape[1], config)
    weights_l = [np.array(a) for a in params.weights]
    biases_l = [np.array(a) for a in params.biases]
    m_w = [np.zeros_like(a) for a in weights_l]
    v_w = [np.zeros_like(a) for a in weights_l]
    m_b = [np.zeros_like(a) for a in biases_l]
    v_b = [np.zeros_like(a) for a in biases_l]
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_eps, config.learning_rate

    def full_loss(px, py, pw) -> float:
        p = _forward_arrays(weights_l, biases_l, px)[2]
        ll = -(py * np.log(p) + (1.0 - py) * np.log1p(-p))
        return float(np.sum(pw * ll) / np.sum(pw))

    records = []
    best_val = math.inf
    best_snapshot = ([np.array(a) for a in weights_l], [np.array(a) for a in biases_l])
    best_epoch = -1
    stale = 0
    stopped_early = False
    t = 0
    for epoch in range(config.epochs):
        order = rng.permutation(tr_idx.size)
        for start in range(0, tr_idx.size, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch_loss, gw, gb = _loss_and_grads(weights_l, biases_l, xt[idx], yt[idx], wt[idx])
            if not math.isfinite(batch_loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            t += 1
            corr1 = 1.0 - b1**t
            corr2 = 1.0 - b2**t
            for i in range(len(weights_l)):
                for val, g, m, v in (
                    (weights_l[i], gw[i], m_w[i], v_w[i]),
                    (biases_l[i], gb[i], m_b[i], v_b[i]),
                ):
                    m *= b1
                    m += (1.0 - b1) * g
                    v *= b2
                    v += (1.0 - b2) * g * g
                    val -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
            if not all(np.isfinite(a).all() for a in weights_l + biases_l):
                raise DivergenceError(f"non-finite parameters at epoch {epoch}")
        train_loss = full_loss(xt, yt, wt)
        val_loss = full_loss(xv, yv, wv)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        records.append(EpochRecord(epoch, train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_snapshot = ([np.array(a) for a in weights_l], [np.array(a) for a in biases_l])
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                stopped_early = True
                break
    best_params = MlpParams(params.layer_sizes, tuple(best_snapshot[0]), tuple(best_snapshot[1]))
    return best_params, TrainingLog(tuple(records), best_epoch, stopped_early)


def gradient_check(
    params: MlpParams,
    features,
    labels,
    weights=None,
    step: float = 1e-4,
    max_checks: int = 150,
    seed: int = 0,
) -> float:
    """Largest relative disagreement between analytic and central-difference
    gradients over a random selection of parameters.

    Relative error is |a - n| / max(|a|, |n|, 1e-6); the floor keeps
    finite-difference roundoff from dominating near-zero gradients.
    Coordinates whose +-step interval flips a rectifier sign or the output
    clamp are skipped: the loss is locally non-smooth there and a two-sided
    difference estimates nothing the analytic gradient is claiming."""
    x = _as_feature_matrix(params, features)
    y, w = _check_labels_weights(x, labels, weights)
    _, grads_w, grads_b = _loss_and_grads(params.weights, params.biases, x, y, w)

    tensors = []
    for li in range(len(params.weights)):
        tensors.append(("w", li, params.weights[li], grads_w[li]))
        tensors.append(("b", li, params.biases[li], grads_b[li]))
    coords = [
        (ti, flat)
        for ti, (_, _, arr, _) in enumerate(tensors)
        for flat in range(arr.size)
    ]
    rng = np.random.default_rng(seed)
    if len(coords) > max_checks:
        chosen = rng.choice(len(coords), size=max_checks, replace=False)
        coords = [coords[i] for i in chosen]

    ws = [np.array(a) for a in params.weights]
    bs = [np.array(a) for a in params.biases]
    wsum = np.sum(w)

    def raw_loss():
        """Loss plus the activation pattern (rectifier signs and clamp gate)
        the evaluation passed through."""
        acts, p_raw, p = _forward_arrays(ws, bs, x)
        ll = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
        pattern = tuple(a > 0 for a in acts[1:]) + (
            (p_raw > PROB_CLAMP) & (p_raw < 1.0 - PROB_CLAMP),
        )
        return float(np.sum(w * ll) / wsum), pattern

    def same_pattern(pa, pb) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(pa, pb))

    worst = 0.0
    for ti, flat in coords:
        kind, li, _, grad = tensors[ti]
        target = ws[li] if kind == "w" else bs[li]
        orig = target.flat[flat]
        target.flat[flat] = orig + step
        lp, pat_p = raw_loss()
        target.flat[flat] = orig - step
        lm, pat_m = raw_loss()
        target.flat[flat] = orig
        if not same_pattern(pat_p, pat_m):
            # The interval [theta - step, theta + step] straddles a rectifier
            # kink or the probability clamp; the loss is not differentiable
            # across it, so a two-sided difference has no defined target.
            continue
        numeric = (lp - lm) / (2.0 * step)
        analytic = grad.flat[flat]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, rel)
    return worst


def predict_grid(params: MlpParams, stack: AnnualStack, threads: int = 1) -> BandGrid:
    """Per-pixel probabilities over a stack. Pixels with nodata in any channel
    are nodata in the output. Fixed row blocks plus einsum arithmetic make the
    result byte-identical for any thread count."""
    if len(stack.channels) != params.n_inputs:
        raise ValueError(
            f"model expects {params.n_inputs} channels, stack has {len(stack.channels)}"
        )
    hdr = stack.header
    chan_vals = [c.values for c in stack.channels]
    invalid = np.zeros(hdr.shape, dtype=bool)
    for c in stack.channels:
        invalid |= nodata_mask(c)
    out = np.empty(hdr.shape, dtype=np.float32)

    def run_block(r0: int, r1: int) -> None:
        block_w = hdr.width * (r1 - r0)
        x = np.empty((block_w, params.n_inputs), dtype=np.float64)
        for ci, vals in enumerate(chan_vals):
            x[:, ci] = vals[r0:r1].reshape(-1)
        ok = ~invalid[r0:r1].reshape(-1)
        probs = np.full(block_w, hdr.nodata, dtype=np.float64)
        if ok.any():
            probs[ok] = _forward_full(params, x[ok])[2]
        out[r0:r1] = probs.reshape(r1 - r0, hdr.width).astype(np.float32)

    map_row_blocks(hdr.height, _PREDICT_BLOCK_ROWS, run_block, threads=threads)
    return BandGrid(replace(hdr, band_name="palm_probability"), out)


# ---------------------------------------------------------------------------
# Serialization: "palmnet-1" JSON with base64 float32 tensors


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def _decode(text: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError) as e:
        raise SchemaError(f"bad base64 tensor data: {e}") from e
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise SchemaError(f"tensor payload {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)


def save_model(params: MlpParams, path: str) -> None:
    """Serialize weights as float32; loading returns the quantized values, so
    a save -> load -> save cycle is byte-stable."""
    obj = {
        "format": MODEL_FORMAT,
        "layer_sizes": list(params.layer_sizes),
        "hidden_activation": "relu",
        "output_activation": "sigmoid",
        "weights": [_encode(w) for w in params.weights],
        "biases": [_encode(b) for b in params.biases],
    }
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def load_model(path: str) -> MlpParams:
    with open(path, "rb") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
        raise SchemaError(f"{path}: not a {MODEL_FORMAT} model file")
    for key in ("layer_sizes", "weights", "biases"):
        if key not in obj:
            raise SchemaError(f"{path}: missing {key!r}")
    sizes = tuple(int(s) for s in obj["layer_sizes"])
    if len(obj["weights"]) != len(sizes) - 1 or len(obj["biases"]) != len(sizes) - 1:
        raise SchemaError(f"{path}: tensor count disagrees with layer_sizes")
    try:
        weights = tuple(
            _decode(t, (sizes[i], sizes[i + 1])) for i, t in enumerate(obj["weights"])
        )
        biases = tuple(_decode(t, (sizes[i + 1],)) for i, t in enumerate(obj["biases"]))
        return MlpParams(sizes, weights, biases)
    except ValueError as e:
        raise SchemaError(f"{path}: {e}") from e
