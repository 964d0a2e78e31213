"""Deep-autoencoder CSI codec.

The feedback payload is produced by vectorizing a CSI tensor, stacking real
and imaginary parts, min-max normalizing, pushing the result through a small
MLP encoder into a linear latent layer, and truncating the latent values past
the sixth decimal. The receiving side runs the decoder MLP and undoes the
normalization and vectorization. Training is plain mini-batch Adam on a
complex-aware mean squared error, implemented from scratch so the whole
pipeline stays dependency-light and bit-reproducible.

Layer stack (input m = 2*n_sc*n_r*n_t, latent d = 2*n_r*n_t*ceil((1-k)*n_sc)):

    m -> 10 (ReLU) -> 10 (ReLU) -> d (linear) -> 10 (ReLU) -> m (sigmoid)
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass

import numpy as np

from .chanmodel import ChannelTensor

WIRE_MAGIC = b"CSIC"
WIRE_VERSION = 1
MODEL_MAGIC = b"CSIM"
SUPPORTED_LATENT_BITS = (32,)

_HIDDEN = 10


class WireFormatError(ValueError):
    """Raised when compressed-CSI bytes do not parse."""


@dataclass
class TrainHistory:
    train_loss: list[float]
    val_loss: list[float]
    duration_s: float

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


@dataclass
class AutoencoderModel:
    kappa: float
    dims: tuple[int, int, int]  # (n_sc, n_r, n_t)
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    norm_min: float
    norm_max: float
    kappa_index: int = 0

    @property
    def input_dim(self) -> int:
        n_sc, n_r, n_t = self.dims
        return 2 * n_sc * n_r * n_t

    @property
    def latent_width(self) -> int:
        return self.weights[2].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


@dataclass
class LatentCsi:
    """Quantized latent feedback plus the metadata the wire format carries."""

    values: np.ndarray
    kappa_index: int
    bits_per_element: int
    dims: tuple[int, int, int]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.bits_per_element not in SUPPORTED_LATENT_BITS:
            raise ValueError(f"unsupported latent width {self.bits_per_element} bits")


def realify(x) -> np.ndarray:
    """[Re(x); Im(x)] stacking, doubling the length."""
    x = np.asarray(x)
    return np.concatenate([np.real(x), np.imag(x)]).astype(float)


def complexify(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.size % 2 != 0:
        raise ValueError("realified vector must have even length")
    half = v.size // 2
    return v[:half] + 1j * v[half:]


def vectorize_csi(h: ChannelTensor) -> np.ndarray:
    """Flatten subcarrier-major, then rx, then tx: index (k, r, t) lands at
    k*n_r*n_t + r*n_t + t."""
    return h.data.reshape(-1)


def devectorize_csi(v, dims) -> ChannelTensor:
    n_sc, n_r, n_t = dims
    v = np.asarray(v, dtype=np.complex128)
    if v.size != n_sc * n_r * n_t:
        raise ValueError("vector length does not match the tensor dims")
    return ChannelTensor(v.reshape(n_sc, n_r, n_t))


def latent_dim(kappa: float, n_sc: int, n_r: int, n_t: int) -> int:
    """Real latent width 2*n_r*n_t*ceil((1-kappa)*n_sc)."""
    if not 0.0 < kappa < 1.0:
        raise ValueError("compression ratio must lie strictly between 0 and 1")
    return 2 * n_r * n_t * math.ceil((1.0 - kappa) * n_sc)


@dataclass(frozen=True)
class NormStats:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("degenerate normalization stats (max must exceed min)")


def normalize(v, stats: NormStats) -> np.ndarray:
    """Affine map of [lo, hi] onto [0, 1], clipping out-of-range inputs."""
    v = np.asarray(v, dtype=float)
    return np.clip((v - stats.lo) / (stats.hi - stats.lo), 0.0, 1.0)


def denormalize(v, stats: NormStats) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v * (stats.hi - stats.lo) + stats.lo


def _glorot(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def ae_init(kappa: float, dims, seed, kappa_index: int = 0) -> AutoencoderModel:
    """Fresh model with Glorot-uniform weights and zero biases.

    Each layer draws from its own seed-derived stream, so models that share a
    seed but differ only in the latent width start from identical draws in
    the layers whose shapes match (paired initialization across ratios).
    """
    n_sc, n_r, n_t = dims
    m = 2 * n_sc * n_r * n_t
    d = latent_dim(kappa, n_sc, n_r, n_t)
    sizes = [(m, _HIDDEN), (_HIDDEN, _HIDDEN), (_HIDDEN, d), (d, _HIDDEN), (_HIDDEN, m)]
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(len(sizes))
    weights = [_glorot(np.random.default_rng(s), fi, fo) for s, (fi, fo) in zip(streams, sizes)]
    biases = [np.zeros(fo) for _, fo in sizes]
    return AutoencoderModel(
        kappa=kappa,
        dims=(n_sc, n_r, n_t),
        weights=weights,
        biases=biases,
        norm_min=0.0,
        norm_max=1.0,
        kappa_index=kappa_index,
    )


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def ae_encode(model: AutoencoderModel, x) -> np.ndarray:
    """Encoder + latent projection. Accepts one vector or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != model.input_dim:
        raise ValueError(f"expected input length {model.input_dim}, got {a.shape[1]}")
    w, b = model.weights, model.biases
    h = _relu(a @ w[0] + b[0])
    h = _relu(h @ w[1] + b[1])
    z = h @ w[2] + b[2]
    return z[0] if single else z


def ae_decode(model: AutoencoderModel, z) -> np.ndarray:
    """Decoder forward pass; output lies in [0, 1] elementwise."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    a = z[None, :] if single else z
    if a.shape[1] != model.latent_width:
        raise ValueError(f"expected latent length {model.latent_width}, got {a.shape[1]}")
    w, b = model.weights, model.biases
    h = _relu(a @ w[3] + b[3])
    y = _sigmoid(h @ w[4] + b[4])
    return y[0] if single else y


def mse_loss(a, b, dims) -> float:
    """Complex-aware mean squared error: the summed squared differences of the
    realified vectors divided by the complex element count n_sc*n_r*n_t."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    n_sc, n_r, n_t = dims
    return float(np.sum((a - b) ** 2) / (n_sc * n_r * n_t))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    """Bias-corrected Adam update, applied to the parameter arrays in place."""
    for g in grads:
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient")
    state.t += 1
    t = state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def backprop(model: AutoencoderModel, batch) -> tuple[float, list[np.ndarray]]:
    """Mean batch loss and its exact gradients w.r.t. every weight and bias.

    The batch rows are both input and target (already normalized). The ReLU
    subgradient at 0 is taken as 0.
    """
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    w, b = model.weights, model.biases
    n_complex = model.input_dim // 2
    bsz = x.shape[0]

    z1 = x @ w[0] + b[0]
    a1 = _relu(z1)
    z2 = a1 @ w[1] + b[1]
    a2 = _relu(z2)
    z3 = a2 @ w[2] + b[2]  # latent, linear
    z4 = z3 @ w[3] + b[3]
    a4 = _relu(z4)
    z5 = a4 @ w[4] + b[4]
    y = _sigmoid(z5)

    diff = y - x
    loss = float(np.sum(diff**2) / (n_complex * bsz))

    d5 = (2.0 / (n_complex * bsz)) * diff * y * (1.0 - y)
    gw5 = a4.T @ d5
    gb5 = d5.sum(axis=0)
    d4 = (d5 @ w[4].T) * (z4 > 0)
    gw4 = z3.T @ d4
    gb4 = d4.sum(axis=0)
    d3 = d4 @ w[3].T
    gw3 = a2.T @ d3
    gb3 = d3.sum(axis=0)
    d2 = (d3 @ w[2].T) * (z2 > 0)
    gw2 = a1.T @ d2
    gb2 = d2.sum(axis=0)
    d1 = (d2 @ w[1].T) * (z1 > 0)
    gw1 = x.T @ d1
    gb1 = d1.sum(axis=0)

    return loss, [gw1, gb1, gw2, gb2, gw3, gb3, gw4, gb4, gw5, gb5]


def _batch_loss(model: AutoencoderModel, x) -> float:
    y = ae_decode(model, ae_encode(model, x))
    return float(np.sum((y - x) ** 2) / ((model.input_dim // 2) * x.shape[0]))


def train(
    model: AutoencoderModel,
    dataset,
    epochs: int = 64,
    batch_size: int = 128,
    learning_rate: float = 1e-4,
    seed=0,
    val_fraction: float = 0.2,
) -> tuple[AutoencoderModel, TrainHistory]:
    """Shuffled mini-batch Adam over raw realified CSI vectors.

    Normalization statistics are computed from the training split and stored
    on the model; per-epoch losses are recorded in normalized space.
    Deterministic given the seed (wall-clock duration aside).
    """
    data = np.asarray(dataset, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (n_samples, input_dim) array")
    if data.shape[1] != model.input_dim:
        raise ValueError("dataset vectors do not match the model input width")

    rng = np.random.default_rng(seed)
    order = rng.permutation(data.shape[0])
    n_val = int(round(val_fraction * data.shape[0]))
    val_raw, train_raw = data[order[:n_val]], data[order[n_val:]]
    if train_raw.shape[0] == 0:
        raise ValueError("validation split leaves no training samples")

    stats = NormStats(float(train_raw.min()), float(train_raw.max()))
    model.norm_min, model.norm_max = stats.lo, stats.hi
    x_train = normalize(train_raw, stats)
    x_val = normalize(val_raw, stats) if n_val else None

    params = model.params()
    state = AdamState.for_params(params)
    train_curve, val_curve = [], []
    start = time.perf_counter()
    for _ in range(epochs):
        perm = rng.permutation(x_train.shape[0])
        losses = []
        for lo in range(0, x_train.shape[0], batch_size):
            chunk = x_train[perm[lo : lo + batch_size]]
            loss, grads = backprop(model, chunk)
            adam_step(params, grads, state, learning_rate)
            losses.append(loss)
        train_curve.append(float(np.mean(losses)))
        val_curve.append(_batch_loss(model, x_val) if x_val is not None else float("nan"))
    duration = time.perf_counter() - start
    return model, TrainHistory(train_loss=train_curve, val_loss=val_curve, duration_s=duration)


def quantize(v) -> np.ndarray:
    """Truncate each element past the sixth decimal, toward zero. Idempotent.

    The scaled value is rounded at its own sixth decimal first, which removes
    binary representation fuzz without changing which decimal step a value
    truncates to.
    """
    v = np.asarray(v, dtype=float)
    return np.trunc(np.round(v * 1e6, 6)) / 1e6


def compress(model: AutoencoderModel, h: ChannelTensor) -> LatentCsi:
    """quantize( encode( normalize( realify( vectorize(h) ) ) ) )."""
    if h.dims != model.dims:
        raise ValueError(f"tensor dims {h.dims} do not match model dims {model.dims}")
    stats = NormStats(model.norm_min, model.norm_max)
    x = normalize(realify(vectorize_csi(h)), stats)
    z = quantize(ae_encode(model, x))
    return LatentCsi(
        values=z.astype(np.float32),
        kappa_index=model.kappa_index,
        bits_per_element=32,
        dims=model.dims,
    )


def decompress(model: AutoencoderModel, latent: LatentCsi) -> ChannelTensor:
    """devectorize( complexify( denormalize( decode(latent) ) ) )."""
    if latent.kappa_index != model.kappa_index:
        raise ValueError("latent was produced with a different compression ratio")
    if tuple(latent.dims) != model.dims:
        raise ValueError("latent dims do not match the model")
    if latent.values.size != model.latent_width:
        raise ValueError("latent length does not match the model")
    stats = NormStats(model.norm_min, model.norm_max)
    y = denormalize(ae_decode(model, latent.values.astype(float)), stats)
    return devectorize_csi(complexify(y), model.dims)


def reconstruction_mse(model: AutoencoderModel, h: ChannelTensor) -> float:
    """Complex-aware MSE between a tensor and its compress/decompress image."""
    recon = decompress(model, compress(model, h))
    return mse_loss(realify(vectorize_csi(h)), realify(vectorize_csi(recon)), model.dims)


def overhead_bits(b: int, d_real: int, k_count: int) -> int:
    """Feedback payload bits plus the ratio-index overhead:
    b*d_real + ceil(log2(k_count))."""
    if b < 1 or d_real < 1 or k_count < 1:
        raise ValueError("arguments must be positive")
    return b * d_real + math.ceil(math.log2(k_count))


_WIRE_HEADER = struct.Struct("<4sBBBIIII")


def serialize(latent: LatentCsi) -> bytes:
    """Wire format: magic 'CSIC', version, kappa index byte, bits-per-element
    byte, three u32 dims, u32 latent length, then the latent as little-endian
    IEEE-754 singles."""
    n_sc, n_r, n_t = latent.dims
    header = _WIRE_HEADER.pack(
        WIRE_MAGIC,
        WIRE_VERSION,
        latent.kappa_index,
        latent.bits_per_element,
        n_sc,
        n_r,
        n_t,
        latent.values.size,
    )
    return header + latent.values.astype("<f4").tobytes()


def deserialize(blob: bytes) -> LatentCsi:
    if len(blob) < _WIRE_HEADER.size:
        raise WireFormatError("truncated header")
    magic, version, kappa_index, bits, n_sc, n_r, n_t, d_real = _WIRE_HEADER.unpack_from(blob)
    if magic != WIRE_MAGIC:
        raise WireFormatError(f"bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise WireFormatError(f"unsupported version {version}")
    if bits not in SUPPORTED_LATENT_BITS:
        raise WireFormatError(f"unsupported bits-per-element {bits}")
    payload = blob[_WIRE_HEADER.size :]
    if len(payload) != 4 * d_real:
        raise WireFormatError(f"payload holds {len(payload)} bytes, expected {4 * d_real}")
    values = np.frombuffer(payload, dtype="<f4").copy()
    return LatentCsi(values=values, kappa_index=kappa_index, bits_per_element=bits, dims=(n_sc, n_r, n_t))


def save_model(model: AutoencoderModel, path):
    """Binary persistence: shapes header, little-endian float64 arrays, then
    the normalization stats. Reloads exactly."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<BdB", 1, model.kappa, model.kappa_index))
        fh.write(struct.pack("<III", *model.dims))
        fh.write(struct.pack("<B", len(model.weights)))
        for w in model.weights:
            fh.write(struct.pack("<II", *w.shape))
        for w, b in zip(model.weights, model.biases):
            fh.write(w.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())
        fh.write(struct.pack("<dd", model.norm_min, model.norm_max))


def load_model(path) -> AutoencoderModel:
    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise WireFormatError("not a model file")
        version, kappa, kappa_index = struct.unpack("<BdB", fh.read(10))
        if version != 1:
            raise WireFormatError(f"unsupported model version {version}")
        dims = struct.unpack("<III", fh.read(12))
        (n_layers,) = struct.unpack("<B", fh.read(1))
        shapes = [struct.unpack("<II", fh.read(8)) for _ in range(n_layers)]
        weights, biases = [], []
        for fi, fo in shapes:
            weights.append(np.frombuffer(fh.read(8 * fi * fo), dtype="<f8").reshape(fi, fo).copy())
            biases.append(np.frombuffer(fh.read(8 * fo), dtype="<f8").copy())
        norm_min, norm_max = struct.unpack("<dd", fh.read(16))
    return AutoencoderModel(
        kappa=kappa,
        dims=dims,
        weights=weights,
        biases=biases,
        norm_min=norm_min,
        norm_max=norm_max,
        kappa_index=kappa_index,
    )
