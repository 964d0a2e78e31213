"""Clustered delay line channel synthesis.

A channel profile is a small table of multipath clusters (delay, power,
departure/arrival angles). Frequency-domain CSI tensors are built as a sum of
one rank-one ray per cluster with an i.i.d. random phase, which keeps the
sparsity and subcarrier-correlation structure of the standardized CDL models
at a fraction of their complexity. Two profile files transcribed from the
3GPP TR 38.901 delay tables ship with the package (CDL-C, CDL-E).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

TWO_PI = 2.0 * math.pi

_CLUSTER_FIELDS = (
    "delay_s",
    "power_db",
    "aod_az_deg",
    "aod_zen_deg",
    "aoa_az_deg",
    "aoa_zen_deg",
)


class ProfileSchemaError(ValueError):
    """Raised when a channel profile file does not match the documented schema."""


@dataclass(frozen=True)
class Cluster:
    """One multipath cluster. Angles in radians, power linear (normalized)."""

    delay_s: float
    power: float
    aod_az: float
    aod_zen: float
    aoa_az: float
    aoa_zen: float


@dataclass(frozen=True)
class CdlProfile:
    name: str
    clusters: tuple[Cluster, ...]
    los: bool

    def __post_init__(self):
        if not self.clusters:
            raise ProfileSchemaError("profile needs at least one cluster")
        for i, c in enumerate(self.clusters):
            if not (math.isfinite(c.delay_s) and c.delay_s >= 0.0):
                raise ProfileSchemaError(f"cluster {i}: delay_s must be finite and >= 0")
            if not (c.power > 0.0 and math.isfinite(c.power)):
                raise ProfileSchemaError(f"cluster {i}: power must be positive and finite")
        total = sum(c.power for c in self.clusters)
        if abs(total - 1.0) > 1e-9:
            raise ProfileSchemaError(f"cluster powers must sum to 1, got {total!r}")

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def truncated(self, n: int) -> "CdlProfile":
        """First ``n`` clusters, powers renormalized."""
        kept = self.clusters[:n]
        total = sum(c.power for c in kept)
        scaled = tuple(
            Cluster(c.delay_s, c.power / total, c.aod_az, c.aod_zen, c.aoa_az, c.aoa_zen)
            for c in kept
        )
        return CdlProfile(self.name, scaled, self.los)


@dataclass(frozen=True)
class UraGeometry:
    """Uniform rectangular array, half-wavelength spaced."""

    rows: int
    cols: int
    spacing: float = 0.5

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array must have at least one element")
        if self.spacing != 0.5:
            raise ValueError("element spacing is fixed at half a wavelength")

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols


@dataclass
class ChannelTensor:
    """Complex CSI over (subcarrier, rx antenna, tx antenna)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise ValueError(f"expected a (n_sc, n_r, n_t) tensor, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("channel tensor contains non-finite entries")

    @property
    def n_sc(self) -> int:
        return self.data.shape[0]

    @property
    def n_r(self) -> int:
        return self.data.shape[1]

    @property
    def n_t(self) -> int:
        return self.data.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


def load_cdl_profile(path) -> CdlProfile:
    """Load a cluster profile file, converting dB powers to normalized linear
    gains and degree angles to radians. Cluster order is preserved."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ProfileSchemaError(f"profile {path}: not valid JSON ({exc})") from exc

    for field in ("name", "los", "clusters"):
        if field not in raw:
            raise ProfileSchemaError(f"profile {path}: missing field '{field}'")
    if not isinstance(raw["clusters"], list) or not raw["clusters"]:
        raise ProfileSchemaError(f"profile {path}: 'clusters' must be a non-empty list")

    gains = []
    for i, rec in enumerate(raw["clusters"]):
        for field in _CLUSTER_FIELDS:
            if field not in rec:
                raise ProfileSchemaError(f"profile {path}: cluster {i}: missing field '{field}'")
            if not isinstance(rec[field], (int, float)):
                raise ProfileSchemaError(f"profile {path}: cluster {i}: field '{field}' must be a number")
        gains.append(10.0 ** (float(rec["power_db"]) / 10.0))

    total = sum(gains)
    clusters = tuple(
        Cluster(
            delay_s=float(rec["delay_s"]),
            power=g / total,
            aod_az=math.radians(float(rec["aod_az_deg"])),
            aod_zen=math.radians(float(rec["aod_zen_deg"])),
            aoa_az=math.radians(float(rec["aoa_az_deg"])),
            aoa_zen=math.radians(float(rec["aoa_zen_deg"])),
        )
        for rec, g in zip(raw["clusters"], gains)
    )
    return CdlProfile(name=str(raw["name"]), clusters=clusters, los=bool(raw["los"]))


def shipped_profile_path(name: str):
    """Path of a profile file bundled with the package ('cdl_c' or 'cdl_e')."""
    ref = resources.files("csilink.profiles").joinpath(f"{name.lower().replace('-', '_')}.json")
    if not ref.is_file():
        raise FileNotFoundError(f"no shipped profile named {name!r}")
    return ref


def steering_vector(geom: UraGeometry, azimuth: float, zenith: float) -> np.ndarray:
    """Array response of the URA for a plane wave from (azimuth, zenith).

    Element (r, c) sits at grid coordinate (c, r) in units of the spacing; the
    column index runs along the azimuth=0 axis. Entries have unit magnitude
    and phase 2*pi*spacing*(c*u + r*v) with u = sin(zen)*cos(az) and
    v = sin(zen)*sin(az); the vector is flattened row-major.
    """
    u = math.sin(zenith) * math.cos(azimuth)
    v = math.sin(zenith) * math.sin(azimuth)
    r = np.arange(geom.rows)[:, None]
    c = np.arange(geom.cols)[None, :]
    phase = TWO_PI * geom.spacing * (c * u + r * v)
    return np.exp(1j * phase).reshape(-1)


def ula_steering(n_elements: int, azimuth: float, zenith: float) -> np.ndarray:
    """Uniform linear array response (half-wavelength spacing along azimuth=0)."""
    return steering_vector(UraGeometry(1, n_elements), azimuth, zenith)


def _synthesize_from_phases(
    profile: CdlProfile,
    tx: UraGeometry,
    n_r: int,
    n_sc: int,
    delta_f: float,
    phases: np.ndarray,
) -> ChannelTensor:
    n_t = tx.n_elements
    a_rx = np.stack([ula_steering(n_r, c.aoa_az, c.aoa_zen) for c in profile.clusters])
    a_tx = np.stack([steering_vector(tx, c.aod_az, c.aod_zen) for c in profile.clusters])
    delays = np.array([c.delay_s for c in profile.clusters])
    # Unit-magnitude steering entries and unit cluster-power sum make the
    # mean squared channel entry 1, so the SNR knob is per resource element.
    amp = np.sqrt(np.array([c.power for c in profile.clusters]))
    gains = amp * np.exp(1j * phases)
    k = np.arange(n_sc)
    freq = np.exp(-1j * TWO_PI * delays[:, None] * k[None, :] * delta_f)
    data = np.einsum("c,ck,cr,ct->krt", gains, freq, a_rx, a_tx.conj())
    return ChannelTensor(data)


def synthesize_csi(
    profile: CdlProfile,
    tx: UraGeometry,
    n_r: int,
    n_sc: int,
    delta_f: float,
    seed,
) -> ChannelTensor:
    """One block-fading CSI realization: sum of per-cluster rank-one rays with
    seeded i.i.d. uniform phases."""
    if n_r < 1 or n_sc < 1:
        raise ValueError("n_r and n_sc must be >= 1")
    if delta_f <= 0:
        raise ValueError("delta_f must be positive")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, TWO_PI, profile.n_clusters)
    return _synthesize_from_phases(profile, tx, n_r, n_sc, delta_f, phases)


def draw_block_fading(
    profile: CdlProfile,
    tx: UraGeometry,
    n_r: int,
    n_sc: int,
    delta_f: float,
    seed,
    n_blocks: int,
) -> list[ChannelTensor]:
    """Independent realizations, one per coherence block. Block 0 matches
    synthesize_csi for the same seed; every block is deterministic in
    (seed, block index)."""
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, TWO_PI, (n_blocks, profile.n_clusters))
    return [
        _synthesize_from_phases(profile, tx, n_r, n_sc, delta_f, phases[b])
        for b in range(n_blocks)
    ]
