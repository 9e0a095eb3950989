"""From-scratch binary CNN on numpy arrays.

Architecture: conv(3x3, same) -> ReLU -> maxpool(2x2) -> conv -> ReLU ->
maxpool -> flatten -> dense -> ReLU -> dense(1) -> sigmoid, trained with
binary cross-entropy and the plain gradient-descent update
w <- w - alpha * dL/dw.

Convolutions run as im2col matrix products; every op also accepts a single
(h, w, c) image or a batched (n, h, w, c) stack. All math is float64 so the
finite-difference gradient checks are meaningful.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptCheckpoint,
    MissingCache,
    OddDimension,
    ShapeMismatch,
)

_SIGMOID_HI = float(np.nextafter(1.0, 0.0))
_SIGMOID_LO = float(np.nextafter(0.0, 1.0))
LOSS_EPS = 1e-7

_CKPT_MAGIC = b"ECGPHASE_CKPT\n"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; the paper-shaped network is the default."""

    input_size: int = 64
    input_channels: int = 3
    kernel_size: int = 3
    conv_filters: tuple[int, int] = (32, 64)
    hidden_units: int = 128

    def __post_init__(self):
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.input_size % 4:
            raise ValueError(
                f"input_size must be divisible by 4 for two 2x2 pools, got {self.input_size}"
            )
        if min(self.conv_filters) < 1 or self.hidden_units < 1:
            raise ValueError("layer widths must be positive")

    @property
    def flat_dim(self) -> int:
        side = self.input_size // 4
        return side * side * self.conv_filters[1]


@dataclass(frozen=True)
class ConvLayer:
    kernels: np.ndarray = field(repr=False)  # (k, k, c_in, c_out)
    bias: np.ndarray = field(repr=False)     # (c_out,)


@dataclass(frozen=True)
class DenseLayer:
    weights: np.ndarray = field(repr=False)  # (n_in, n_out)
    bias: np.ndarray = field(repr=False)     # (n_out,)


@dataclass(frozen=True)
class Model:
    config: ModelConfig
    conv1: ConvLayer
    conv2: ConvLayer
    dense1: DenseLayer
    dense_out: DenseLayer

    def parameter_count(self) -> int:
        return sum(
            t.size
            for t in (
                self.conv1.kernels, self.conv1.bias,
                self.conv2.kernels, self.conv2.bias,
                self.dense1.weights, self.dense1.bias,
                self.dense_out.weights, self.dense_out.bias,
            )
        )


@dataclass(frozen=True)
class Gradients:
    """dL/dw for every parameter tensor, shape-congruent with Model."""

    conv1_kernels: np.ndarray = field(repr=False)
    conv1_bias: np.ndarray = field(repr=False)
    conv2_kernels: np.ndarray = field(repr=False)
    conv2_bias: np.ndarray = field(repr=False)
    dense1_weights: np.ndarray = field(repr=False)
    dense1_bias: np.ndarray = field(repr=False)
    dense_out_weights: np.ndarray = field(repr=False)
    dense_out_bias: np.ndarray = field(repr=False)


@dataclass
class ForwardCache:
    """Intermediates the backward pass needs, in forward order."""

    x: np.ndarray
    cols1: np.ndarray
    z1: np.ndarray
    pool1_arg: np.ndarray
    p1: np.ndarray
    cols2: np.ndarray
    z2: np.ndarray
    pool2_arg: np.ndarray
    p2: np.ndarray
    flat: np.ndarray
    zd: np.ndarray
    ad: np.ndarray
    prob: np.ndarray


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeMismatch(f"expected (h, w, c) or (n, h, w, c), got shape {x.shape}")


def _im2col(padded: np.ndarray, k: int) -> np.ndarray:
    """Patch matrix of a zero-padded batch: (n, h, w, k*k*c), dy/dx/c order."""
    n, hp, wp, c = padded.shape
    h, w = hp - k + 1, wp - k + 1
    cols = np.empty((n, h, w, k * k, c), dtype=padded.dtype)
    i = 0
    for dy in range(k):
        for dx in range(k):
            cols[:, :, :, i, :] = padded[:, dy : dy + h, dx : dx + w, :]
            i += 1
    return cols.reshape(n, h, w, k * k * c)


def _col2im(dcols: np.ndarray, in_shape: tuple, k: int) -> np.ndarray:
    """Adjoint of _im2col: scatter patch gradients back onto the input."""
    n, h, w, c = in_shape
    p = (k - 1) // 2
    dpadded = np.zeros((n, h + 2 * p, w + 2 * p, c))
    dcols = dcols.reshape(n, h, w, k * k, c)
    i = 0
    for dy in range(k):
        for dx in range(k):
            dpadded[:, dy : dy + h, dx : dx + w, :] += dcols[:, :, :, i, :]
            i += 1
    return dpadded[:, p : p + h, p : p + w, :]


def _conv_forward(x: np.ndarray, layer: ConvLayer) -> tuple[np.ndarray, np.ndarray]:
    n, h, w, c_in = x.shape
    k, _, kc_in, c_out = layer.kernels.shape
    if kc_in != c_in:
        raise ShapeMismatch(
            f"input has {c_in} channels but kernels expect {kc_in}"
        )
    p = (k - 1) // 2
    padded = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = _im2col(padded, k)
    out = cols @ layer.kernels.reshape(-1, c_out) + layer.bias
    return out, cols


def _conv_backward(
    cols: np.ndarray,
    layer: ConvLayer,
    dout: np.ndarray,
    in_shape: tuple,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k, _, c_in, c_out = layer.kernels.shape
    dout2 = dout.reshape(-1, c_out)
    dkernels = (cols.reshape(-1, k * k * c_in).T @ dout2).reshape(layer.kernels.shape)
    dbias = dout2.sum(axis=0)
    dcols = dout @ layer.kernels.reshape(-1, c_out).T
    dx = _col2im(dcols, in_shape, k)
    return dkernels, dbias, dx


def _pool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise OddDimension(f"max pool needs even spatial dims, got {h}x{w}")
    # window corners in row-major order; >= comparisons break ties toward
    # the first row-major position, matching a naive scan
    a = x[:, 0::2, 0::2, :]
    b = x[:, 0::2, 1::2, :]
    cc = x[:, 1::2, 0::2, :]
    d = x[:, 1::2, 1::2, :]
    m_ab = np.maximum(a, b)
    m_cd = np.maximum(cc, d)
    out = np.maximum(m_ab, m_cd)
    arg = np.where(m_ab >= m_cd, np.where(a >= b, 0, 1), np.where(cc >= d, 2, 3))
    return out, arg


def _pool_backward(dout: np.ndarray, arg: np.ndarray, in_shape: tuple) -> np.ndarray:
    n, h, w, c = in_shape
    dx = np.zeros(in_shape)
    dx[:, 0::2, 0::2, :] = dout * (arg == 0)
    dx[:, 0::2, 1::2, :] = dout * (arg == 1)
    dx[:, 1::2, 0::2, :] = dout * (arg == 2)
    dx[:, 1::2, 1::2, :] = dout * (arg == 3)
    return dx


# --- public single-op surface ---

def conv2d_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Same-padded stride-1 convolution; preserves the spatial size."""
    batch, squeeze = _as_batch(x)
    out, _ = _conv_forward(batch, layer)
    return out[0] if squeeze else out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 stride-2 max pool; returns (pooled, window argmax indices)."""
    batch, squeeze = _as_batch(x)
    out, arg = _pool_forward(batch)
    return (out[0], arg[0]) if squeeze else (out, arg)


def flatten(x: np.ndarray) -> np.ndarray:
    """Row-major linearization of (h, w, c) -> (h*w*c); batches keep axis 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x.reshape(-1)
    if x.ndim == 4:
        return x.reshape(x.shape[0], -1)
    raise ShapeMismatch(f"expected 3-D or 4-D input, got shape {x.shape}")


def dense_forward(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n_in = layer.weights.shape[0]
    if x.shape[-1] != n_in:
        raise ShapeMismatch(f"input width {x.shape[-1]} != layer width {n_in}")
    return x @ layer.weights + layer.bias


def sigmoid(x):
    """Numerically stable logistic, clamped into the open interval (0, 1)."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    out = np.clip(out, _SIGMOID_LO, _SIGMOID_HI)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def bce_loss(p, y) -> float:
    """Binary cross-entropy, mean over the batch, with p clamped to avoid log(0)."""
    p = np.clip(np.asarray(p, dtype=np.float64), LOSS_EPS, 1.0 - LOSS_EPS)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


# --- full network ---

def forward_batch(model: Model, images: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Probabilities for a (n, s, s, c) batch plus the backward cache."""
    cfg = model.config
    x = np.asarray(images, dtype=np.float64)
    expected = (cfg.input_size, cfg.input_size, cfg.input_channels)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeMismatch(f"expected (n, {expected[0]}, {expected[1]}, {expected[2]}), got {x.shape}")

    z1, cols1 = _conv_forward(x, model.conv1)
    a1 = relu(z1)
    p1, arg1 = _pool_forward(a1)
    z2, cols2 = _conv_forward(p1, model.conv2)
    a2 = relu(z2)
    p2, arg2 = _pool_forward(a2)
    flat = p2.reshape(x.shape[0], -1)
    zd = dense_forward(flat, model.dense1)
    ad = relu(zd)
    logit = dense_forward(ad, model.dense_out)
    prob = sigmoid(logit[:, 0])

    cache = ForwardCache(
        x=x, cols1=cols1, z1=z1, pool1_arg=arg1, p1=p1,
        cols2=cols2, z2=z2, pool2_arg=arg2, p2=p2,
        flat=flat, zd=zd, ad=ad, prob=prob,
    )
    return prob, cache


def forward(model: Model, image: np.ndarray) -> tuple[float, ForwardCache]:
    """Probability that a single (s, s, c) image is the positive class."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeMismatch(f"expected a single (h, w, c) image, got shape {img.shape}")
    prob, cache = forward_batch(model, img[None])
    return float(prob[0]), cache


def backward_batch(model: Model, cache: ForwardCache, labels: np.ndarray) -> Gradients:
    """Mean-loss gradients for a batch, using the fused sigmoid+BCE output grad."""
    if cache is None:
        raise MissingCache("run forward before backward")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    n = y.size
    if cache.prob.shape[0] != n:
        raise ShapeMismatch(f"cache holds {cache.prob.shape[0]} examples, labels {n}")

    dlogit = ((cache.prob - y) / n)[:, None]                      # (n, 1)

    dW_out = cache.ad.T @ dlogit
    db_out = dlogit.sum(axis=0)
    dad = dlogit @ model.dense_out.weights.T
    dzd = dad * (cache.zd > 0)

    dW1 = cache.flat.T @ dzd
    db1 = dzd.sum(axis=0)
    dflat = dzd @ model.dense1.weights.T
    dp2 = dflat.reshape(cache.p2.shape)

    da2 = _pool_backward(dp2, cache.pool2_arg, cache.z2.shape)
    dz2 = da2 * (cache.z2 > 0)
    dk2, dbc2, dp1 = _conv_backward(cache.cols2, model.conv2, dz2, cache.p1.shape)

    da1 = _pool_backward(dp1, cache.pool1_arg, cache.z1.shape)
    dz1 = da1 * (cache.z1 > 0)
    dk1, dbc1, _ = _conv_backward(cache.cols1, model.conv1, dz1, cache.x.shape)

    return Gradients(
        conv1_kernels=dk1, conv1_bias=dbc1,
        conv2_kernels=dk2, conv2_bias=dbc2,
        dense1_weights=dW1, dense1_bias=db1,
        dense_out_weights=dW_out, dense_out_bias=db_out,
    )


def backward(model: Model, cache: ForwardCache, y: float) -> Gradients:
    """Gradients of the single-example loss."""
    return backward_batch(model, cache, np.asarray([y]))


def sgd_step(model: Model, grads: Gradients, alpha: float) -> Model:
    """One gradient-descent update: w_new = w - alpha * dL/dw."""
    if alpha <= 0:
        raise ValueError(f"learning rate must be positive, got {alpha}")
    return Model(
        config=model.config,
        conv1=ConvLayer(
            model.conv1.kernels - alpha * grads.conv1_kernels,
            model.conv1.bias - alpha * grads.conv1_bias,
        ),
        conv2=ConvLayer(
            model.conv2.kernels - alpha * grads.conv2_kernels,
            model.conv2.bias - alpha * grads.conv2_bias,
        ),
        dense1=DenseLayer(
            model.dense1.weights - alpha * grads.dense1_weights,
            model.dense1.bias - alpha * grads.dense1_bias,
        ),
        dense_out=DenseLayer(
            model.dense_out.weights - alpha * grads.dense_out_weights,
            model.dense_out.bias - alpha * grads.dense_out_bias,
        ),
    )


def init_weights(config: ModelConfig, seed=0) -> Model:
    """Glorot-uniform kernels/weights, zero biases, deterministic per seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    k = config.kernel_size
    c = config.input_channels
    f1, f2 = config.conv_filters

    def glorot(shape, fan_in, fan_out):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    return Model(
        config=config,
        conv1=ConvLayer(glorot((k, k, c, f1), k * k * c, k * k * f1), np.zeros(f1)),
        conv2=ConvLayer(glorot((k, k, f1, f2), k * k * f1, k * k * f2), np.zeros(f2)),
        dense1=DenseLayer(
            glorot((config.flat_dim, config.hidden_units), config.flat_dim, config.hidden_units),
            np.zeros(config.hidden_units),
        ),
        dense_out=DenseLayer(
            glorot((config.hidden_units, 1), config.hidden_units, 1),
            np.zeros(1),
        ),
    )


# --- checkpoint container: magic, version, json header, raw tensor bytes ---

_TENSOR_ORDER = (
    ("conv1", "kernels"), ("conv1", "bias"),
    ("conv2", "kernels"), ("conv2", "bias"),
    ("dense1", "weights"), ("dense1", "bias"),
    ("dense_out", "weights"), ("dense_out", "bias"),
)


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    """Write the model to a deterministic, value-exact binary container."""
    tensors = [getattr(getattr(model, layer), part) for layer, part in _TENSOR_ORDER]
    header = {
        "model_config": dataclasses.asdict(model.config),
        "extra": extra or {},
        "tensors": [
            {"name": f"{layer}.{part}", "shape": list(t.shape)}
            for (layer, part), t in zip(_TENSOR_ORDER, tensors)
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(blob)))
        fh.write(blob)
        for t in tensors:
            fh.write(np.ascontiguousarray(t, dtype=np.float64).tobytes())


def load_checkpoint(path) -> tuple[Model, dict]:
    """Read a checkpoint back; returns (model, extra-config dict)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read {path}: {exc}") from exc

    if not data.startswith(_CKPT_MAGIC):
        raise CorruptCheckpoint(f"{path}: bad magic")
    pos = len(_CKPT_MAGIC)
    try:
        version, hlen = struct.unpack_from("<II", data, pos)
    except struct.error as exc:
        raise CorruptCheckpoint(f"{path}: truncated header") from exc
    if version != _CKPT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported version {version}")
    pos += 8
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
        pos += hlen
        cfg_dict = dict(header["model_config"])
        cfg_dict["conv_filters"] = tuple(cfg_dict["conv_filters"])
        config = ModelConfig(**cfg_dict)
        specs = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed header ({exc})") from exc

    arrays = {}
    for spec in specs:
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape)) * 8
        chunk = data[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise CorruptCheckpoint(f"{path}: truncated tensor {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(chunk, dtype=np.float64).reshape(shape).copy()
        pos += nbytes

    try:
        model = Model(
            config=config,
            conv1=ConvLayer(arrays["conv1.kernels"], arrays["conv1.bias"]),
            conv2=ConvLayer(arrays["conv2.kernels"], arrays["conv2.bias"]),
            dense1=DenseLayer(arrays["dense1.weights"], arrays["dense1.bias"]),
            dense_out=DenseLayer(arrays["dense_out.weights"], arrays["dense_out.bias"]),
        )
    except KeyError as exc:
        raise CorruptCheckpoint(f"{path}: missing tensor {exc}") from exc
    return model, header.get("extra", {})
