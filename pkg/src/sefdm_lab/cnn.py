"""From-scratch deep residual 1-D CNN detector: forward pass, exact
backpropagation, Adam, the 22-layer reference architecture, the training
loop, and model (de)serialization.

Activations are plain numpy arrays of shape (batch, channels, length);
training runs in single precision, gradient-check work in double. The
complex observation y enters as two real channels (Re, Im), the sequence
axis stays length N throughout (no pooling or striding: the classifier is
per subcarrier), and the final kernel-1 layer emits one logit row per
constellation class.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import (
    QPSK_SYMBOLS,
    Observation,
    SefdmConfig,
    bits_from_classes,
    build_subcarrier_matrix,
    ebn0_to_n0,
    symbol_classes,
)
from .detectors import DetectorInterface
from .errors import ModelFormatError, NumericalError, ParameterError
from .factorizations import mgs_qr

MODEL_MAGIC = b"SFDM"
MODEL_VERSION = 1

DEFAULT_WIDTHS = (24, 48, 96)
DEFAULT_BLOCKS_PER_SCALE = 3
DEFAULT_KERNEL = 3
QPSK_CLASSES = 4


@dataclass
class ConvLayer:
    """1-D convolution parameters: weights (out, in, k) and bias (out,).

    k must be odd; the forward pass is a same-length cross-correlation with
    zero padding of (k-1)/2 on each side.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 3 or self.bias.shape != (self.weights.shape[0],):
            raise ParameterError(
                f"inconsistent conv shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )
        if self.kernel % 2 != 1:
            raise ParameterError(f"kernel size must be odd, got {self.kernel}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]


@dataclass
class TrainConfig:
    """Training protocol: defaults follow the reference recipe (1e5 Adam steps
    on batches of 256 fresh observations at Eb/N0 = 0 dB, lr 0.001)."""

    steps: int = 100_000
    batch: int = 256
    learning_rate: float = 1e-3
    train_ebn0_db: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1:
            raise ParameterError(f"need steps >= 0 and batch >= 1, got {self.steps}, {self.batch}")
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class Model:
    """Layered CNN parameter container plus architecture metadata.

    Topology per scale: one width-increase conv (+ReLU), then
    blocks_per_scale residual blocks (two conv+ReLU layers whose input is
    added back, no activation after the sum). A final kernel-1 conv with no
    activation maps to the class logits. Layer count is therefore
    scales*(2*blocks+1) + 1.
    """

    n: int
    alpha: float
    widths: tuple[int, ...]
    blocks_per_scale: int
    kernel: int
    classes: int
    seed: int
    layers: list[ConvLayer] = field(repr=False)

    def structure(self):
        """Yield ("widen", i) / ("block", i, i+1) / ("head", i) in forward order."""
        idx = 0
        for _ in self.widths:
            yield ("widen", idx)
            idx += 1
            for _ in range(self.blocks_per_scale):
                yield ("block", idx, idx + 1)
                idx += 2
        yield ("head", idx)

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.layers:
            params.append(layer.weights)
            params.append(layer.bias)
        return params


def build_model(
    n: int,
    widths: tuple[int, ...] = DEFAULT_WIDTHS,
    blocks_per_scale: int = DEFAULT_BLOCKS_PER_SCALE,
    kernel: int = DEFAULT_KERNEL,
    classes: int = QPSK_CLASSES,
    seed: int = 0,
    alpha: float = 1.0,
    dtype=np.float32,
) -> Model:
    """Construct and He-initialize the residual detector network.

    Weights are drawn from N(0, 2/(k*in_channels)) layer by layer from a
    generator seeded with `seed`, so construction is bit-reproducible;
    biases start at zero.
    """
    widths = tuple(int(w) for w in widths)
    if not widths or any(w < 1 for w in widths):
        raise ParameterError(f"widths must be nonempty positive integers, got {widths}")
    if any(b >= a for a, b in zip(widths[1:], widths)) and len(widths) > 1:
        raise ParameterError(f"widths must be strictly increasing, got {widths}")
    if blocks_per_scale < 1:
        raise ParameterError(f"blocks_per_scale must be >= 1, got {blocks_per_scale}")
    if kernel < 1 or kernel % 2 == 0:
        raise ParameterError(f"kernel must be odd and positive, got {kernel}")
    if classes < 2:
        raise ParameterError(f"classes must be >= 2, got {classes}")
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")

    rng = np.random.default_rng(seed)
    layers: list[ConvLayer] = []

    def add_layer(out_c: int, in_c: int, k: int):
        std = math.sqrt(2.0 / (k * in_c))
        w = (rng.standard_normal((out_c, in_c, k)) * std).astype(dtype)
        layers.append(ConvLayer(weights=w, bias=np.zeros(out_c, dtype=dtype)))

    in_c = 2
    for width in widths:
        add_layer(width, in_c, kernel)
        in_c = width
        for _ in range(blocks_per_scale):
            add_layer(width, width, kernel)
            add_layer(width, width, kernel)
    add_layer(classes, in_c, 1)

    return Model(
        n=n,
        alpha=alpha,
        widths=widths,
        blocks_per_scale=blocks_per_scale,
        kernel=kernel,
        classes=classes,
        seed=seed,
        layers=layers,
    )


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

# Internally activations are kept channels-last, (B, L, C): the patch matrix
# is then a cheap strided view and the conv matmul needs no transposes. The
# public API stays (batch, channels, length).

def _im2col_cl(x: np.ndarray, k: int) -> np.ndarray:
    """(B, L, C) -> (B*L, k*C) patch matrix with zero same-padding.

    Row (b, l) holds the window x[b, l-pad : l+pad+1, :] flattened as
    (offset, channel); out-of-range positions are zero."""
    b, length, c = x.shape
    pad = (k - 1) // 2
    cols = np.zeros((b, length, k, c), dtype=x.dtype)
    for dk in range(k):
        lo = max(0, pad - dk)
        hi = min(length, length + pad - dk)
        cols[:, lo:hi, dk, :] = x[:, lo + dk - pad : hi + dk - pad, :]
    return cols.reshape(b * length, k * c)


def _weights_matrix(layer: ConvLayer) -> np.ndarray:
    # (O, C, k) -> (k*C, O), matching the _im2col_cl flattening order (dk, c).
    return np.ascontiguousarray(layer.weights.transpose(2, 1, 0).reshape(-1, layer.out_channels))


def _conv_forward_cl(layer, x, apply_relu):
    b, length, c = x.shape
    if c != layer.in_channels:
        raise ParameterError(f"input has {c} channels, layer expects {layer.in_channels}")
    cols = _im2col_cl(x, layer.kernel)
    w2 = _weights_matrix(layer)
    z = cols @ w2
    z += layer.bias
    z = z.reshape(b, length, layer.out_channels)
    if apply_relu:
        mask = z > 0
        return z * mask, (cols, w2, mask)
    return z, (cols, w2, None)


def _conv_backward_cl(layer, cache, grad_out):
    """Exact gradients of the conv (and its ReLU if masked): returns
    (grad_weights, grad_bias, grad_input), channels-last."""
    cols, w2, mask = cache
    if mask is not None:
        grad_out = grad_out * mask
    b, length, out_c = grad_out.shape
    g2 = grad_out.reshape(b * length, out_c)
    grad_bias = g2.sum(axis=0)
    k, in_c = layer.kernel, layer.in_channels
    # (k*C, O) -> back to the public (O, C, k) layout
    grad_w = np.ascontiguousarray((cols.T @ g2).reshape(k, in_c, out_c).transpose(2, 1, 0))
    dcols = g2 @ w2.T
    pad = (k - 1) // 2
    dview = dcols.reshape(b, length, k, in_c)
    dx = np.zeros((b, length, in_c), dtype=grad_out.dtype)
    for dk in range(k):  # scatter-add the overlapping patch columns
        lo = max(0, pad - dk)
        hi = min(length, length + pad - dk)
        dx[:, lo + dk - pad : hi + dk - pad, :] += dview[:, lo:hi, dk, :]
    return grad_w, grad_bias, dx


def conv1d_forward(layer: ConvLayer, x: np.ndarray, apply_relu: bool = True) -> np.ndarray:
    """Same-length cross-correlation plus bias, optionally through ReLU.

    x has the public layout (batch, channels, length)."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ParameterError(f"input must be (batch, channels, length), got {x.shape}")
    out, _ = _conv_forward_cl(layer, np.ascontiguousarray(x.transpose(0, 2, 1)), apply_relu)
    return out.transpose(0, 2, 1)


def residual_block_forward(l1: ConvLayer, l2: ConvLayer, x: np.ndarray) -> np.ndarray:
    """conv+ReLU, conv+ReLU, then add the block input (no activation after)."""
    if l1.out_channels != l1.in_channels or l2.out_channels != l2.in_channels:
        raise ParameterError("residual block layers must preserve the channel count")
    return conv1d_forward(l2, conv1d_forward(l1, x, apply_relu=True), apply_relu=True) + x


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Logits of shape (batch, classes, N); softmax is deferred to the loss."""
    logits, _ = forward_with_tape(model, x)
    return logits


def forward_with_tape(model: Model, x: np.ndarray):
    """Forward pass that records per-layer caches for backward()."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1] != 2:
        raise ParameterError(f"input must be (batch, 2, N), got {x.shape}")
    tape = []
    h = np.ascontiguousarray(x.transpose(0, 2, 1))
    for op in model.structure():
        if op[0] == "widen":
            layer = model.layers[op[1]]
            out, cache = _conv_forward_cl(layer, h, True)
            tape.append(("conv", op[1], cache))
            h = out
        elif op[0] == "block":
            la, lb = model.layers[op[1]], model.layers[op[2]]
            mid, cache_a = _conv_forward_cl(la, h, True)
            out, cache_b = _conv_forward_cl(lb, mid, True)
            tape.append(("res", op[1], cache_a, op[2], cache_b))
            h = out + h
        else:
            layer = model.layers[op[1]]
            out, cache = _conv_forward_cl(layer, h, False)
            tape.append(("conv", op[1], cache))
            h = out
    return h.transpose(0, 2, 1), tape


def backward(model: Model, tape, grad_logits: np.ndarray) -> list[np.ndarray]:
    """Exact parameter gradients, ordered like model.parameters().

    Residual additions route the upstream gradient over both paths; ReLU
    masks come from the recorded forward caches.
    """
    if not tape:
        raise ParameterError("backward() needs the tape from forward_with_tape()")
    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    g = np.ascontiguousarray(np.asarray(grad_logits).transpose(0, 2, 1))
    for entry in reversed(tape):
        if entry[0] == "conv":
            _, idx, cache = entry
            gw, gb, g = _conv_backward_cl(model.layers[idx], cache, g)
            grads[idx] = (gw, gb)
        else:
            _, ia, cache_a, ib, cache_b = entry
            gw_b, gb_b, g_mid = _conv_backward_cl(model.layers[ib], cache_b, g)
            gw_a, gb_a, g_in = _conv_backward_cl(model.layers[ia], cache_a, g_mid)
            grads[ib] = (gw_b, gb_b)
            grads[ia] = (gw_a, gb_a)
            g = g_in + g  # skip connection
    flat = []
    for idx in range(len(model.layers)):
        gw, gb = grads[idx]
        flat.append(gw)
        flat.append(gb)
    return flat


def cross_entropy_backward(logits: np.ndarray, labels: np.ndarray):
    """Mean categorical cross-entropy over batch and positions, with the
    gradient (softmax - onehot)/(batch*N); stabilized by max subtraction."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    b, classes, length = logits.shape
    if labels.shape != (b, length):
        raise ParameterError(f"labels must be {(b, length)}, got {labels.shape}")
    if labels.min() < 0 or labels.max() >= classes:
        raise ParameterError(f"labels must lie in [0, {classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    bi = np.arange(b)[:, None]
    pos = np.arange(length)[None, :]
    picked = shifted[bi, labels, pos] - np.log(exp.sum(axis=1))[bi, pos]
    loss = float(-picked.mean())
    grad = softmax
    grad[bi, labels, pos] -= 1.0
    grad /= b * length
    return loss, grad.astype(logits.dtype)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def init(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    t: int,
    cfg: TrainConfig,
) -> AdamState:
    """One bias-corrected Adam update, in place on params; t starts at 1."""
    if t < 1:
        raise ParameterError(f"step index must be >= 1, got {t}")
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------------------
# observation packing and detection
# ---------------------------------------------------------------------------

def observation_to_tensor(observation: Observation) -> np.ndarray:
    """(1, 2, N) tensor: channel 0 real parts, channel 1 imaginary parts."""
    return frames_to_tensor(observation.y[np.newaxis, :])


def frames_to_tensor(y: np.ndarray, dtype=np.float32) -> np.ndarray:
    y = np.atleast_2d(y)
    x = np.empty((y.shape[0], 2, y.shape[1]), dtype=dtype)
    x[:, 0, :] = y.real
    x[:, 1, :] = y.imag
    return x


def classes_from_logits(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=1)


class CnnDetector(DetectorInterface):
    """DetectorInterface adapter: per-position argmax over the logits, then
    Gray bits. The model is immutable here, so concurrent use is safe."""

    name = "cnn"

    def __init__(self, model: Model):
        self.model = model

    def detect_frames(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        if y.shape[1] != self.model.n:
            raise ParameterError(
                f"frames have {y.shape[1]} subcarriers, model was built for N={self.model.n}"
            )
        dtype = self.model.layers[0].weights.dtype
        logits = forward(self.model, frames_to_tensor(y, dtype=dtype))
        return bits_from_classes(classes_from_logits(logits))


def detect_cnn(model: Model, observation: Observation) -> np.ndarray:
    """Functional form of CnnDetector for a single observation."""
    if observation.config.n_subcarriers != model.n:
        raise ParameterError(
            f"observation has N={observation.config.n_subcarriers}, model expects N={model.n}"
        )
    return CnnDetector(model).detect(observation)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(
    cfg: SefdmConfig,
    tcfg: TrainConfig,
    model: Model | None = None,
    log_every: int = 0,
):
    """Train a detector on freshly drawn observations.

    Every step draws `batch` uniform bit frames, modulates them through
    F^alpha, adds AWGN at the training Eb/N0, projects onto Q^H, and takes
    one Adam step on the categorical cross-entropy of the per-position class
    logits. Returns (model, per-step loss array); fully deterministic given
    tcfg.seed.
    """
    if model is None:
        model = build_model(
            n=cfg.n_subcarriers,
            classes=2**cfg.bits_per_symbol,
            seed=tcfg.seed,
            alpha=cfg.alpha,
        )
    if model.n != cfg.n_subcarriers:
        raise ParameterError(f"model N={model.n} does not match config N={cfg.n_subcarriers}")

    f_alpha = build_subcarrier_matrix(cfg.n_subcarriers, cfg.alpha)
    q = mgs_qr(f_alpha).q
    q_conj = q.conj()
    n0 = ebn0_to_n0(tcfg.train_ebn0_db, cfg.bits_per_symbol, es=1.0)
    noise_scale = math.sqrt(n0 / 2.0)
    dtype = model.layers[0].weights.dtype

    rng = np.random.default_rng(tcfg.seed)
    params = model.parameters()
    state = AdamState.init(params)
    losses = np.empty(tcfg.steps)

    for step in range(1, tcfg.steps + 1):
        bits = rng.integers(0, 2, size=(tcfg.batch, cfg.bits_per_frame), dtype=np.uint8)
        labels = symbol_classes(bits)
        s = QPSK_SYMBOLS[labels]
        tx = s @ f_alpha.T
        noise = rng.standard_normal(tx.shape) * noise_scale + 1j * (
            rng.standard_normal(tx.shape) * noise_scale
        )
        y = (tx + noise) @ q_conj
        x = frames_to_tensor(y, dtype=dtype)

        logits, tape = forward_with_tape(model, x)
        loss, grad = cross_entropy_backward(logits, labels)
        if not math.isfinite(loss):
            raise NumericalError(f"training diverged (non-finite loss) at step {step}")
        grads = backward(model, tape, grad)
        adam_step(params, grads, state, step, tcfg)
        losses[step - 1] = loss
        if log_every and step % log_every == 0:
            print(f"step {step}/{tcfg.steps}  loss {loss:.4f}", flush=True)

    return model, losses


def gradient_check(
    model: Model,
    x: np.ndarray,
    labels: np.ndarray,
    step: float = 1e-5,
    fault: float = 0.0,
) -> float:
    """Max relative error between backprop and central finite differences,
    over every parameter of the model.

    The model must be double precision. Errors are measured relative to
    max(|analytic|, |numeric|, 1e-3 * largest gradient), so round-off on
    negligible entries cannot mask a real defect elsewhere. `fault` is a test
    hook that perturbs the first analytic weight gradient, for negative
    controls.
    """
    if model.layers[0].weights.dtype != np.float64:
        raise ParameterError("gradient_check requires a float64 model")
    x = np.asarray(x, dtype=np.float64)
    logits, tape = forward_with_tape(model, x)
    _, grad_logits = cross_entropy_backward(logits, labels)
    grads = backward(model, tape, grad_logits)
    if fault:
        grads[0] = grads[0].copy()
        grads[0].flat[0] += fault
    gmax = max(float(np.abs(g).max()) for g in grads)
    floor = 1e-3 * gmax

    worst = 0.0
    for p, g in zip(model.parameters(), grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            loss_plus, _ = cross_entropy_backward(forward(model, x), labels)
            flat[i] = orig - step
            loss_minus, _ = cross_entropy_backward(forward(model, x), labels)
            flat[i] = orig
            fd = (loss_plus - loss_minus) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(fd), floor)
            worst = max(worst, abs(gflat[i] - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_model(model: Model, path) -> None:
    """Write the binary model format (f32 weights; see load_model)."""
    header = struct.pack(
        "<4sBId",
        MODEL_MAGIC,
        MODEL_VERSION,
        model.n,
        model.alpha,
    )
    header += struct.pack("<III", model.classes, model.kernel, len(model.widths))
    header += struct.pack(f"<{len(model.widths)}I", *model.widths)
    header += struct.pack("<IQ", model.blocks_per_scale, model.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        for layer in model.layers:
            fh.write(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ModelFormatError(f"model file truncated while reading {what}")
    return data


def load_model(path) -> Model:
    """Read a model file, validating magic, version, header and layer sizes."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MODEL_MAGIC:
            raise ModelFormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        (version,) = struct.unpack("<B", _read_exact(fh, 1, "version"))
        if version != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        n, alpha = struct.unpack("<Id", _read_exact(fh, 12, "header (n, alpha)"))
        classes, kernel, scale_count = struct.unpack(
            "<III", _read_exact(fh, 12, "header (classes, kernel, scales)")
        )
        if scale_count < 1 or scale_count > 64:
            raise ModelFormatError(f"implausible scale count {scale_count}")
        widths = struct.unpack(
            f"<{scale_count}I", _read_exact(fh, 4 * scale_count, "widths")
        )
        blocks, seed = struct.unpack("<IQ", _read_exact(fh, 12, "blocks_per_scale, seed"))
        try:
            model = build_model(
                n=n,
                widths=widths,
                blocks_per_scale=blocks,
                kernel=kernel,
                classes=classes,
                seed=0,
                alpha=alpha,
            )
        except ParameterError as exc:
            raise ModelFormatError(f"inconsistent model header: {exc}") from exc
        model.seed = seed
        for i, layer in enumerate(model.layers):
            wbytes = _read_exact(fh, 4 * layer.weights.size, f"layer {i} weights")
            bbytes = _read_exact(fh, 4 * layer.bias.size, f"layer {i} bias")
            layer.weights = np.frombuffer(wbytes, dtype="<f4").reshape(layer.weights.shape).copy()
            layer.bias = np.frombuffer(bbytes, dtype="<f4").copy()
        if fh.read(1):
            raise ModelFormatError("trailing data after the last layer")
    return model
