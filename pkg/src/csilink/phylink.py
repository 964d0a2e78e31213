"""End-to-end OFDM MIMO transmit/receive chain.

Payload bits are framed into per-stream codewords with a CRC, Gray-mapped to
16-QAM, precoded per subcarrier with the SVD of the *reconstructed* channel
(waterfilled eigenmode powers), propagated through the *true* channel with
AWGN, combined, MMSE-equalized and detected with a per-symbol nearest-point
decision.

16-QAM Gray map, per axis (2 bits -> amplitude before the 1/sqrt(10) scale):
    00 -> -3    01 -> -1    11 -> +1    10 -> +3
A symbol's four bits are (b0 b1 b2 b3); (b0 b1) select the in-phase level and
(b2 b3) the quadrature level, so 0000 -> (-3 - 3j)/sqrt(10). Detection ties
are broken toward the smaller 4-bit Gray label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chanmodel import ChannelTensor
from .metrics import ErrorCounts

# Generator polynomial x^6 + x^4 + x + 1, MSB first.
DEFAULT_CRC_POLY = (1, 0, 1, 0, 0, 1, 1)

QAM16_SCALE = 1.0 / math.sqrt(10.0)
# Axis level for the bit pair index 2*b0 + b1 under the Gray map above.
_GRAY_LEVELS = np.array([-3.0, -1.0, 3.0, 1.0])


@dataclass(frozen=True)
class LinkConfig:
    n_t: int
    n_r: int
    n_sc: int
    n_pilot: int
    delta_f: float
    snr_db: float
    total_power: float = 1.0
    crc_poly: tuple[int, ...] = DEFAULT_CRC_POLY
    modulation_order: int = 16
    orthogonal_pilots: bool = False

    def __post_init__(self):
        if min(self.n_t, self.n_r, self.n_sc, self.n_pilot) < 1:
            raise ValueError("antenna/subcarrier/pilot counts must be positive")
        if self.n_pilot < self.n_t:
            raise ValueError("need n_pilot >= n_t for least-squares estimation")
        if self.modulation_order != 16:
            raise ValueError("only 16-QAM is supported")
        if self.delta_f <= 0 or self.total_power <= 0:
            raise ValueError("delta_f and total_power must be positive")

    @property
    def n_streams(self) -> int:
        return min(self.n_t, self.n_r)

    @property
    def bits_per_symbol(self) -> int:
        return 4

    @property
    def crc_degree(self) -> int:
        return len(self.crc_poly) - 1

    @property
    def codeword_len(self) -> int:
        """Payload bits per codeword: one codeword per (stream, OFDM symbol)."""
        return self.bits_per_symbol * self.n_sc - self.crc_degree

    @property
    def subcarrier_power(self) -> float:
        """Transmit power budget per subcarrier."""
        return self.total_power / self.n_sc


@dataclass(frozen=True)
class BitBlock:
    bits: np.ndarray
    codeword_len: int

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))
        if self.codeword_len < 1:
            raise ValueError("codeword_len must be positive")


@dataclass
class PilotBlock:
    """Pilot transmission: x_pilot is (n_pilot, n_t), y_pilot is
    (n_sc, n_pilot, n_r) observed as Y_k = X @ H_k^T + N_k."""

    x_pilot: np.ndarray
    y_pilot: np.ndarray


@dataclass
class PrecodeSet:
    """Per-subcarrier precoders f (n_sc, n_t, n_s), combiners g (n_sc, n_r, n_s),
    singular values and waterfilled eigenmode powers (n_sc, n_s)."""

    f: np.ndarray
    g: np.ndarray
    sigma: np.ndarray
    powers: np.ndarray


@dataclass
class LinkResult:
    detected_bits: np.ndarray
    crc_ok: np.ndarray
    counts: ErrorCounts


def _as_poly_array(poly) -> np.ndarray:
    p = np.asarray(poly, dtype=np.uint8)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("poly must have degree >= 1")
    if p[0] != 1:
        raise ValueError("poly must have a leading 1 coefficient")
    return p


def crc_remainder_many(bit_rows: np.ndarray, poly=DEFAULT_CRC_POLY) -> np.ndarray:
    """CRC remainders of message rows (each row times x^degree, mod poly).

    Vectorized across rows with a column-stepped shift register.
    """
    p = _as_poly_array(poly)
    deg = p.size - 1
    taps = p[1:].astype(np.uint8)
    rows = np.atleast_2d(np.asarray(bit_rows, dtype=np.uint8))
    if rows.shape[1] == 0:
        raise ValueError("messages must be non-empty")
    reg = np.zeros((rows.shape[0], deg), dtype=np.uint8)
    for j in range(rows.shape[1]):
        feedback = reg[:, 0] ^ rows[:, j]
        reg[:, :-1] = reg[:, 1:]
        reg[:, -1] = 0
        reg ^= feedback[:, None] * taps[None, :]
    return reg


def crc_append(bits, poly=DEFAULT_CRC_POLY) -> np.ndarray:
    """Append the CRC remainder bits of the message to the message."""
    msg = np.asarray(bits, dtype=np.uint8)
    if msg.ndim != 1 or msg.size == 0:
        raise ValueError("message must be a non-empty bit vector")
    rem = crc_remainder_many(msg[None, :], poly)[0]
    return np.concatenate([msg, rem])


def crc_check_many(bit_rows: np.ndarray, poly=DEFAULT_CRC_POLY) -> np.ndarray:
    """Vectorized divisibility check over codeword rows (message + CRC bits).

    The register runs the same shifted division as crc_remainder_many; since
    the generator has a nonzero constant term, (block * x^deg) mod poly is
    zero exactly when block mod poly is."""
    p = _as_poly_array(poly)
    rows = np.atleast_2d(np.asarray(bit_rows, dtype=np.uint8))
    if rows.shape[1] < p.size - 1:
        raise ValueError("received blocks shorter than the CRC")
    return ~crc_remainder_many(rows, poly).any(axis=1)


def crc_check(bits, poly=DEFAULT_CRC_POLY) -> bool:
    """True iff the received block is divisible by the generator polynomial."""
    rx = np.asarray(bits, dtype=np.uint8)
    return bool(crc_check_many(rx[None, :], poly)[0])


def qam16_modulate(bits) -> np.ndarray:
    """Gray-mapped square 16-QAM with unit average symbol energy."""
    b = np.asarray(bits, dtype=np.uint8)
    if b.size % 4 != 0:
        raise ValueError("bit count must be divisible by 4")
    nib = b.reshape(-1, 4)
    i = _GRAY_LEVELS[2 * nib[:, 0] + nib[:, 1]]
    q = _GRAY_LEVELS[2 * nib[:, 2] + nib[:, 3]]
    return (i + 1j * q) * QAM16_SCALE


def _detect_axis(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis decision. Boundaries at 0 and +-2/sqrt(10); exact boundary
    ties go to the level with the smaller Gray label, so 0 -> -1 (01),
    -2/sqrt(10) -> -3 (00) and +2/sqrt(10) -> +3 (10)."""
    t = 2.0 * QAM16_SCALE
    b0 = (x > 0).astype(np.uint8)
    b1 = ((x > -t) & (x < t)).astype(np.uint8)
    return b0, b1


def qam16_detect(symbols) -> np.ndarray:
    """Nearest-constellation-point decision, inverse of qam16_modulate."""
    z = np.asarray(symbols, dtype=np.complex128).reshape(-1)
    i0, i1 = _detect_axis(z.real)
    q0, q1 = _detect_axis(z.imag)
    out = np.empty((z.size, 4), dtype=np.uint8)
    out[:, 0] = i0
    out[:, 1] = i1
    out[:, 2] = q0
    out[:, 3] = q1
    return out.reshape(-1)


def generate_pilots(n_pilot: int, n_t: int, seed, orthogonal: bool = False) -> np.ndarray:
    """Random QPSK pilot matrix (n_pilot, n_t), column norms^2 = n_pilot,
    full column rank with condition number <= 1e3 (resampled otherwise)."""
    if n_pilot < n_t:
        raise ValueError("need n_pilot >= n_t")
    rng = np.random.default_rng(seed)
    for _ in range(32):
        quad = rng.integers(0, 4, size=(n_pilot, n_t))
        x = np.exp(1j * (math.pi / 4.0 + math.pi / 2.0 * quad))
        if orthogonal:
            q, _ = np.linalg.qr(x)
            x = q[:, :n_t] * math.sqrt(n_pilot)
        cond = np.linalg.cond(x)
        if np.linalg.matrix_rank(x) == n_t and cond <= 1e3:
            return x
    raise RuntimeError("failed to draw a well-conditioned pilot matrix")


def observe_pilots(h: ChannelTensor, x_pilot: np.ndarray, noise_var: float, seed) -> PilotBlock:
    """Received pilots per subcarrier, Y_k = X @ H_k^T + N_k."""
    rng = np.random.default_rng(seed)
    clean = np.einsum("pt,krt->kpr", x_pilot, h.data)
    if noise_var > 0:
        shape = clean.shape
        noise = math.sqrt(noise_var / 2.0) * (
            rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        )
        clean = clean + noise
    return PilotBlock(x_pilot=x_pilot, y_pilot=clean)


def ls_estimate(pb: PilotBlock) -> ChannelTensor:
    """Least-squares channel estimate per subcarrier.

    With Y_k = X H_k^T + N the normal equations give
    H_k^T = (X^H X)^{-1} X^H Y_k. A singular X^H X raises LinAlgError rather
    than being silently regularized.
    """
    x = np.asarray(pb.x_pilot)
    y = np.asarray(pb.y_pilot)
    gram = x.conj().T @ x
    rhs = np.einsum("pt,kpr->ktr", x.conj(), y)
    ht = np.linalg.solve(gram[None, :, :], rhs)
    return ChannelTensor(ht.transpose(0, 2, 1))


def noise_var_from_snr(cfg: LinkConfig) -> float:
    """Noise variance per receive antenna from the transmit subcarrier SNR:
    sigma_n^2 = P_x / (n_sc * n_t * rho_linear)."""
    rho = 10.0 ** (cfg.snr_db / 10.0)
    if not (rho > 0 and math.isfinite(rho)):
        raise ValueError("SNR must map to a positive finite linear value")
    return cfg.total_power / (cfg.n_sc * cfg.n_t * rho)


def reference_symbol_power(cfg: LinkConfig) -> float:
    """Received power of one OFDM resource element, P_x/(n_t*n_sc)."""
    return cfg.total_power / (cfg.n_t * cfg.n_sc)


def waterfill(gains, noise_var: float, budget: float) -> np.ndarray:
    """Waterfilling powers p_i = max(0, mu - noise_var/gain_i^2) with the
    water level found by bisection so the powers sum to the budget."""
    sigma = np.asarray(gains, dtype=float)
    if budget <= 0:
        raise ValueError("power budget must be positive")
    if np.any(sigma < 0):
        raise ValueError("gains must be non-negative")
    active = sigma > 0
    if not active.any():
        raise ValueError("all eigenmode gains are zero")
    floor = np.full(sigma.shape, np.inf)
    floor[active] = noise_var / sigma[active] ** 2

    def total(mu):
        return np.maximum(0.0, mu - floor[active]).sum()

    lo = floor[active].min()
    hi = lo + budget
    tol = 1e-9 * budget
    for _ in range(200):
        mu = 0.5 * (lo + hi)
        if total(mu) > budget:
            hi = mu
        else:
            lo = mu
        if hi - lo < tol / max(1, active.sum()):
            break
    mu = 0.5 * (lo + hi)
    powers = np.maximum(0.0, mu - floor)
    powers[~active] = 0.0
    # Snap the sum onto the budget to kill the residual bisection gap.
    scale = budget / powers.sum()
    return powers * scale


def svd_precoder(h_recon: ChannelTensor, noise_var: float, budget: float) -> PrecodeSet:
    """Per-subcarrier SVD precoder/combiner from the reconstructed CSI.

    F holds the leading right singular vectors scaled by the square roots of
    the waterfilled eigenmode powers, G the leading left singular vectors.
    Each singular vector is rotated so its largest-magnitude entry is real and
    positive, which pins down the SVD sign/phase ambiguity.
    """
    h = h_recon.data
    n_sc, n_r, n_t = h.shape
    n_s = min(n_r, n_t)
    u, s, vh = np.linalg.svd(h, full_matrices=False)
    u = u[:, :, :n_s]
    s = s[:, :n_s]
    v = vh.conj().transpose(0, 2, 1)[:, :, :n_s]
    u = _canonical_columns(u)
    v = _canonical_columns(v)
    powers = np.zeros((n_sc, n_s))
    for k in range(n_sc):
        powers[k] = waterfill(s[k], noise_var, budget)
    f = v * np.sqrt(powers)[:, None, :]
    return PrecodeSet(f=f, g=u, sigma=s, powers=powers)


def _canonical_columns(m: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real positive."""
    idx = np.argmax(np.abs(m), axis=1)
    lead = np.take_along_axis(m, idx[:, None, :], axis=1)[:, 0, :]
    mag = np.abs(lead)
    phase = np.where(mag > 0, lead / np.where(mag > 0, mag, 1.0), 1.0)
    return m * phase.conj()[:, None, :]


def mmse_equalizer(h_eff: np.ndarray, noise_var: float) -> np.ndarray:
    """W = (H^H H + noise_var*I)^{-1} H^H, batched over leading axes."""
    h = np.asarray(h_eff, dtype=np.complex128)
    squeeze = h.ndim == 2
    if squeeze:
        h = h[None, :, :]
    n = h.shape[-1]
    gram = np.einsum("kij,kil->kjl", h.conj(), h)
    gram = gram + noise_var * np.eye(n)[None, :, :]
    w = np.linalg.solve(gram, h.conj().transpose(0, 2, 1))
    return w[0] if squeeze else w


def frame_codewords(payload: np.ndarray, cfg: LinkConfig) -> np.ndarray:
    """Split payload into zero-padded codeword rows filling whole OFDM symbol
    periods: rows = n_periods * n_streams, row length = codeword_len."""
    payload = np.asarray(payload, dtype=np.uint8)
    l_cw = cfg.codeword_len
    n_cw = max(1, math.ceil(payload.size / l_cw))
    n_periods = math.ceil(n_cw / cfg.n_streams)
    n_cw = n_periods * cfg.n_streams
    padded = np.zeros(n_cw * l_cw, dtype=np.uint8)
    padded[: payload.size] = payload
    return padded.reshape(n_cw, l_cw)


def run_link_once(payload, h_true: ChannelTensor, h_recon: ChannelTensor, cfg: LinkConfig, seed) -> LinkResult:
    """One pass of the full chain on a payload bit vector (or BitBlock).

    The precoder, combiner and equalizer are derived from ``h_recon``;
    propagation uses ``h_true``. Deterministic given the seed.
    """
    if isinstance(payload, BitBlock):
        payload = payload.bits
    if h_true.dims != (cfg.n_sc, cfg.n_r, cfg.n_t) or h_recon.dims != h_true.dims:
        raise ValueError("channel tensor dimensions do not match the link config")
    noise_var = noise_var_from_snr(cfg)
    rng = np.random.default_rng(seed)

    tx_cw = frame_codewords(payload, cfg)
    n_cw, l_cw = tx_cw.shape
    n_periods = n_cw // cfg.n_streams
    coded = np.concatenate([tx_cw, crc_remainder_many(tx_cw, cfg.crc_poly)], axis=1)

    # Codeword (period p, stream s) occupies stream s across all subcarriers
    # of OFDM symbol period p: 4*n_sc coded bits per codeword.
    symbols = qam16_modulate(coded.reshape(-1)).reshape(n_periods, cfg.n_streams, cfg.n_sc)
    s_grid = symbols.transpose(2, 1, 0)  # (n_sc, n_streams, n_periods)

    pset = svd_precoder(h_recon, noise_var, cfg.subcarrier_power)
    g_h = pset.g.conj().transpose(0, 2, 1)
    h_eff = np.einsum("ksr,krt,ktm->ksm", g_h, h_recon.data, pset.f)
    w = mmse_equalizer(h_eff, noise_var)
    chain_true = np.einsum("ksr,krt,ktm->ksm", g_h, h_true.data, pset.f)
    a = np.einsum("ksm,kmn->ksn", w, chain_true)
    b = np.einsum("ksm,kmr->ksr", w, g_h)

    unit = rng.standard_normal((cfg.n_sc, cfg.n_r, n_periods)) + 1j * rng.standard_normal(
        (cfg.n_sc, cfg.n_r, n_periods)
    )
    noise = math.sqrt(noise_var / 2.0) * unit
    z = np.einsum("ksn,knp->ksp", a, s_grid) + np.einsum("ksr,krp->ksp", b, noise)

    # MMSE biases the symbol amplitude; undo the per-stream effective gain.
    gain = np.real(np.einsum("ksm,kms->ks", w, h_eff))
    gain = np.where(gain > 1e-12, gain, 1.0)
    z = z / gain[:, :, None]

    rx_bits = qam16_detect(z.transpose(2, 1, 0).reshape(-1))
    rx_rows = rx_bits.reshape(n_cw, l_cw + cfg.crc_degree)
    crc_ok = crc_check_many(rx_rows, cfg.crc_poly)
    rx_payload = rx_rows[:, :l_cw]

    bit_errors = int(np.sum(rx_payload != tx_cw))
    counts = ErrorCounts(
        bit_errors=bit_errors,
        bits_total=tx_cw.size,
        block_errors=int(np.sum(~crc_ok)),
        blocks_total=n_cw,
    )
    detected = rx_payload.reshape(-1)[: np.asarray(payload).size]
    return LinkResult(detected_bits=detected, crc_ok=crc_ok, counts=counts)
