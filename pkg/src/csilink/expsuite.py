"""Experiment harness: seeded sweeps over (channel, ratio, SNR, user), the
adaptive-policy experiment, and CSV emission.

Every random draw flows from the 64-bit master seed through named
SeedSequence-derived streams, so a rerun with the same config file and seed
reproduces results byte-for-byte. Wall-clock measurements go to a separate
timing CSV to keep the result files deterministic.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import adaptive as ad
from . import codec
from . import chanmodel as cm
from . import phylink as pl
from .metrics import ErrorCounts, merge

MASK64 = (1 << 64) - 1

# Stream tags for seed derivation; one per independent randomness domain.
_CHANNEL, _PILOT, _PILOT_NOISE, _NOISE, _PAYLOAD, _TRAIN_DATA, _INIT, _ADAPT = range(101, 109)

SWEEP_COLUMNS = (
    "profile",
    "ura",
    "kappa",
    "rho_db",
    "user_seed",
    "ber",
    "ber_stderr",
    "bler",
    "bler_stderr",
    "recon_mse",
)
TIMING_COLUMNS = ("profile", "ura", "kappa", "train_seconds", "codec_seconds", "eval_seconds")
ADAPTIVE_COLUMNS = (
    "rho_db",
    "kappa_star",
    "bler_adaptive",
    "bler_adaptive_stderr",
    "bler_static",
    "bler_static_stderr",
    "bler_uncompressed",
    "bler_uncompressed_stderr",
)


def stream_seed(*parts) -> np.random.SeedSequence:
    """Named random stream: a SeedSequence keyed by non-negative integers."""
    return np.random.SeedSequence([int(p) & MASK64 for p in parts])


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 64
    batch_size: int = 128
    learning_rate: float = 1e-4
    dataset_size: int = 512
    val_fraction: float = 0.2


@dataclass(frozen=True)
class ExperimentConfig:
    profiles: tuple[str, ...] = ("cdl_e", "cdl_c")
    n_sc: int = 128
    n_r: int = 4
    ura_rows: int = 4
    ura_cols: int = 4
    n_pilot: int = 64
    delta_f: float = 15e3
    kappas: tuple[float, ...] = (0.1, 0.5, 0.7)
    rhos: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    n_users: int = 10
    payload_bits: int = 200_000
    n_blocks: int = 2
    train: TrainSettings = field(default_factory=TrainSettings)
    b_max: float = 0.1
    master_seed: int = 555
    pattern: str = "duty_cycle"
    pattern_parameter: float = 0.5
    static_kappa: float = 0.5
    adaptive_profile: str | None = None
    orthogonal_pilots: bool = False

    def __post_init__(self):
        if not self.rhos:
            raise ValueError("need at least one SNR point")
        if self.n_users < 1:
            raise ValueError("need at least one user")
        for k in self.kappas:
            if not 0.0 < k < 1.0:
                raise ValueError("compression ratios must lie strictly between 0 and 1")
        if self.master_seed < 0:
            raise ValueError("master seed must be a non-negative 64-bit integer")

    @property
    def n_t(self) -> int:
        return self.ura_rows * self.ura_cols

    @property
    def ura(self) -> cm.UraGeometry:
        return cm.UraGeometry(self.ura_rows, self.ura_cols)

    @property
    def ura_label(self) -> str:
        return f"{self.ura_rows}x{self.ura_cols}"

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.n_sc, self.n_r, self.n_t)

    def link_config(self, rho_db: float) -> pl.LinkConfig:
        return pl.LinkConfig(
            n_t=self.n_t,
            n_r=self.n_r,
            n_sc=self.n_sc,
            n_pilot=self.n_pilot,
            delta_f=self.delta_f,
            snr_db=rho_db,
            orthogonal_pilots=self.orthogonal_pilots,
        )

    def user_seed(self, v: int) -> int:
        return (self.master_seed + v) & MASK64


def resolve_profile(name_or_path: str) -> cm.CdlProfile:
    """Load a profile from a filesystem path or, failing that, from the
    profiles bundled with the package ('cdl_c', 'CDL-E', ...)."""
    if os.path.exists(name_or_path):
        return cm.load_cdl_profile(name_or_path)
    return cm.load_cdl_profile(cm.shipped_profile_path(name_or_path))


def load_config(path) -> ExperimentConfig:
    """Read an ExperimentConfig from a JSON file. Unknown keys are rejected."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    train_raw = raw.pop("train", {})
    known = set(ExperimentConfig.__dataclass_fields__) - {"train"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key in ("profiles", "kappas", "rhos"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return ExperimentConfig(train=TrainSettings(**train_raw), **raw)


def save_config(cfg: ExperimentConfig, path):
    data = asdict(cfg)
    data["profiles"] = list(cfg.profiles)
    data["kappas"] = list(cfg.kappas)
    data["rhos"] = list(cfg.rhos)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


@dataclass
class CodecBundle:
    model: codec.AutoencoderModel
    history: codec.TrainHistory
    train_seconds: float


@dataclass
class SweepResult:
    rows: list[dict]
    timing: list[dict]
    histories: dict[tuple[str, float], codec.TrainHistory]
    models: dict[tuple[str, float], codec.AutoencoderModel]


def build_training_set(cfg: ExperimentConfig, profile: cm.CdlProfile, profile_idx: int) -> np.ndarray:
    """Realified CSI sample matrix drawn across pseudo-users of one profile."""
    rows = np.empty((cfg.train.dataset_size, 2 * cfg.n_sc * cfg.n_r * cfg.n_t))
    for i in range(cfg.train.dataset_size):
        h = cm.synthesize_csi(
            profile,
            cfg.ura,
            cfg.n_r,
            cfg.n_sc,
            cfg.delta_f,
            stream_seed(cfg.master_seed, _TRAIN_DATA, profile_idx, i),
        )
        rows[i] = codec.realify(codec.vectorize_csi(h))
    return rows


def train_codec_family(cfg: ExperimentConfig, profile: cm.CdlProfile, profile_idx: int) -> dict[float, CodecBundle]:
    """One trained model per compression ratio, on a shared training set.

    Init and shuffle seeds are shared across the ratios (paired training):
    the models differ only through their latent widths, which keeps
    cross-ratio comparisons free of initialization luck.
    """
    data = build_training_set(cfg, profile, profile_idx)
    bundles = {}
    for k_idx, kappa in enumerate(cfg.kappas):
        model = codec.ae_init(
            kappa,
            cfg.dims,
            stream_seed(cfg.master_seed, _INIT, profile_idx),
            kappa_index=k_idx,
        )
        start = time.perf_counter()
        model, history = codec.train(
            model,
            data,
            epochs=cfg.train.epochs,
            batch_size=cfg.train.batch_size,
            learning_rate=cfg.train.learning_rate,
            seed=stream_seed(cfg.master_seed, _INIT, profile_idx, 1),
            val_fraction=cfg.train.val_fraction,
        )
        train_seconds = time.perf_counter() - start
        bundles[kappa] = CodecBundle(model=model, history=history, train_seconds=train_seconds)
    return bundles


def _user_payload(cfg: ExperimentConfig, user: int) -> np.ndarray:
    rng = np.random.default_rng(stream_seed(cfg.user_seed(user), _PAYLOAD))
    return rng.integers(0, 2, size=cfg.payload_bits, dtype=np.uint8)


def _block_channels(cfg: ExperimentConfig, profile, profile_idx, user) -> list[cm.ChannelTensor]:
    return cm.draw_block_fading(
        profile,
        cfg.ura,
        cfg.n_r,
        cfg.n_sc,
        cfg.delta_f,
        stream_seed(cfg.user_seed(user), _CHANNEL, profile_idx),
        cfg.n_blocks,
    )


def evaluate_point(
    cfg: ExperimentConfig,
    profile: cm.CdlProfile,
    profile_idx: int,
    model: codec.AutoencoderModel | None,
    rho_db: float,
    user: int,
    seed_domain: int = _NOISE,
) -> tuple[ErrorCounts, float, float]:
    """Run the chain for one (profile, ratio, SNR, user) point.

    Channel, payload and unit-noise streams do not depend on the ratio or the
    SNR, so points are paired across both. Returns the merged error counts,
    the mean reconstruction MSE (0 for the uncompressed baseline) and the
    seconds spent in the codec.
    """
    link_cfg = cfg.link_config(rho_db)
    noise_var = pl.noise_var_from_snr(link_cfg)
    payload_blocks = np.array_split(_user_payload(cfg, user), cfg.n_blocks)
    channels = _block_channels(cfg, profile, profile_idx, user)
    user_seed = cfg.user_seed(user)

    counts = ErrorCounts()
    mse_sum = 0.0
    codec_seconds = 0.0
    for block, (h_true, payload) in enumerate(zip(channels, payload_blocks)):
        pilots = pl.generate_pilots(
            cfg.n_pilot,
            cfg.n_t,
            stream_seed(user_seed, _PILOT, profile_idx, block),
            orthogonal=cfg.orthogonal_pilots,
        )
        pb = pl.observe_pilots(
            h_true, pilots, noise_var, stream_seed(user_seed, _PILOT_NOISE, profile_idx, block)
        )
        h_est = pl.ls_estimate(pb)
        if model is None:
            h_rec = h_est
        else:
            t0 = time.perf_counter()
            latent = codec.compress(model, h_est)
            h_rec = codec.decompress(model, latent)
            codec_seconds += time.perf_counter() - t0
            mse_sum += codec.mse_loss(
                codec.realify(codec.vectorize_csi(h_est)),
                codec.realify(codec.vectorize_csi(h_rec)),
                cfg.dims,
            )
        result = pl.run_link_once(
            payload,
            h_true,
            h_rec,
            link_cfg,
            stream_seed(user_seed, seed_domain, profile_idx, block),
        )
        counts = merge(counts, result.counts)
    recon_mse = mse_sum / cfg.n_blocks if model is not None else 0.0
    return counts, recon_mse, codec_seconds


def _sweep_group(args):
    """All (rho, user) points for one (profile, kappa); runs in a worker."""
    cfg, profile, profile_idx, kappa, model = args
    rows = []
    codec_seconds = 0.0
    eval_start = time.perf_counter()
    for rho in cfg.rhos:
        for user in range(cfg.n_users):
            counts, recon_mse, csec = evaluate_point(cfg, profile, profile_idx, model, rho, user)
            codec_seconds += csec
            rows.append(
                {
                    "profile": profile.name,
                    "ura": cfg.ura_label,
                    "kappa": float(kappa),
                    "rho_db": float(rho),
                    "user_seed": cfg.user_seed(user),
                    "ber": counts.ber,
                    "ber_stderr": counts.ber_stderr,
                    "bler": counts.bler,
                    "bler_stderr": counts.bler_stderr,
                    "recon_mse": recon_mse,
                }
            )
    eval_seconds = time.perf_counter() - eval_start
    return (profile_idx, float(kappa)), rows, codec_seconds, eval_seconds


def run_sweep(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> SweepResult:
    """Static-ratio sweep over (profile, ratio incl. the uncompressed
    baseline, SNR, user). Fully deterministic given the master seed."""
    profiles = [resolve_profile(p) for p in cfg.profiles]
    models: dict[tuple[str, float], codec.AutoencoderModel] = {}
    histories: dict[tuple[str, float], codec.TrainHistory] = {}
    train_seconds: dict[tuple[str, float], float] = {}
    for pidx, profile in enumerate(profiles):
        for kappa, bundle in train_codec_family(cfg, profile, pidx).items():
            models[(profile.name, kappa)] = bundle.model
            histories[(profile.name, kappa)] = bundle.history
            train_seconds[(profile.name, kappa)] = bundle.train_seconds

    groups = []
    for pidx, profile in enumerate(profiles):
        for kappa in (0.0, *cfg.kappas):
            model = models.get((profile.name, kappa))
            groups.append((cfg, profile, pidx, kappa, model))

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_group, groups))
    else:
        results = [_sweep_group(g) for g in groups]
    results.sort(key=lambda item: (item[0][0], _kappa_order(cfg, item[0][1])))

    rows: list[dict] = []
    timing: list[dict] = []
    for (pidx, kappa), group_rows, codec_seconds, eval_seconds in results:
        rows.extend(group_rows)
        timing.append(
            {
                "profile": profiles[pidx].name,
                "ura": cfg.ura_label,
                "kappa": kappa,
                "train_seconds": train_seconds.get((profiles[pidx].name, kappa), 0.0),
                "codec_seconds": codec_seconds,
                "eval_seconds": eval_seconds,
            }
        )

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "sweep.csv"), SWEEP_COLUMNS, rows)
        write_csv(os.path.join(out_dir, "sweep_timing.csv"), TIMING_COLUMNS, timing)
    return SweepResult(rows=rows, timing=timing, histories=histories, models=models)


def _kappa_order(cfg: ExperimentConfig, kappa: float) -> int:
    return 0 if kappa == 0.0 else 1 + cfg.kappas.index(kappa)


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def sweep_records(cfg: ExperimentConfig, rows) -> list[ad.MeasurementRecord]:
    """Sweep rows as policy measurement records (baseline rows included)."""
    return [
        ad.make_record(
            rho_db=row["rho_db"],
            kappa=row["kappa"],
            ber=row["ber"],
            bler=row["bler"],
            channel_tag=row["profile"],
            user_seed=row["user_seed"],
            b_max=cfg.b_max,
        )
        for row in rows
    ]


def run_adaptive_experiment(cfg: ExperimentConfig, out_dir=None, sweep: SweepResult | None = None):
    """Adaptive ratio selection versus the static and uncompressed baselines.

    The policy table is built from sweep measurements; the three traces are
    then evaluated on fresh, paired realizations (identical channels, noise
    and payloads for all three schemes at each SNR point).
    """
    if sweep is None:
        sweep = run_sweep(cfg, out_dir=out_dir)
    profile_name = cfg.adaptive_profile or resolve_profile(cfg.profiles[0]).name
    profiles = [resolve_profile(p) for p in cfg.profiles]
    names = [p.name for p in profiles]
    if profile_name not in names:
        raise ValueError(f"adaptive profile {profile_name!r} is not part of the sweep")
    profile_idx = names.index(profile_name)
    profile = profiles[profile_idx]
    if cfg.static_kappa not in cfg.kappas:
        raise ValueError("static_kappa must be one of the swept ratios")

    dataset = ad.build_dataset(sweep_records(cfg, sweep.rows), buckets=cfg.rhos)
    table = ad.policy_table(dataset, b_max=cfg.b_max, channel_tag=profile_name)

    def evaluate(kappa: float, rho: float) -> tuple[float, float]:
        model = None if kappa == ad.NO_COMPRESSION else sweep.models[(profile_name, kappa)]
        total = ErrorCounts()
        for user in range(cfg.n_users):
            counts, _, _ = evaluate_point(
                cfg, profile, profile_idx, model, rho, user, seed_domain=_ADAPT
            )
            total = merge(total, counts)
        return total.bler, total.bler_stderr

    decisions = ad.run_adaptive(dataset, cfg.rhos, evaluate, b_max=cfg.b_max, channel_tag=profile_name)

    rows = []
    for decision in decisions:
        static_bler, static_err = evaluate(cfg.static_kappa, decision.rho_db)
        base_bler, base_err = evaluate(ad.NO_COMPRESSION, decision.rho_db)
        rows.append(
            {
                "rho_db": decision.rho_db,
                "kappa_star": decision.kappa,
                "bler_adaptive": decision.bler,
                "bler_adaptive_stderr": decision.bler_stderr,
                "bler_static": static_bler,
                "bler_static_stderr": static_err,
                "bler_uncompressed": base_bler,
                "bler_uncompressed_stderr": base_err,
            }
        )

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "adaptive.csv"), ADAPTIVE_COLUMNS, rows)
        ad.export_policy_csv(table, os.path.join(out_dir, "policy.csv"))
    return rows, table


def emit_csi_heatmap(cfg: ExperimentConfig, kappa: float, rho_db: float, user: int, out_dir, sweep: SweepResult | None = None):
    """Magnitude grids of the original estimate, the latent feedback and the
    reconstruction for receive antenna 0, as three CSV files."""
    if kappa not in cfg.kappas:
        raise ValueError(f"kappa {kappa} is not one of the configured ratios")
    profile = resolve_profile(cfg.profiles[0])
    if sweep is not None and (profile.name, kappa) in sweep.models:
        model = sweep.models[(profile.name, kappa)]
    else:
        model = train_codec_family(cfg, profile, 0)[kappa].model

    link_cfg = cfg.link_config(rho_db)
    noise_var = pl.noise_var_from_snr(link_cfg)
    user_seed = cfg.user_seed(user)
    h_true = _block_channels(cfg, profile, 0, user)[0]
    pilots = pl.generate_pilots(cfg.n_pilot, cfg.n_t, stream_seed(user_seed, _PILOT, 0, 0))
    pb = pl.observe_pilots(h_true, pilots, noise_var, stream_seed(user_seed, _PILOT_NOISE, 0, 0))
    h_est = pl.ls_estimate(pb)
    latent = codec.compress(model, h_est)
    h_rec = codec.decompress(model, latent)

    per_rt = math.ceil((1.0 - kappa) * cfg.n_sc)
    latent_grid = np.abs(latent.values.astype(float)).reshape(per_rt, 2 * cfg.n_r * cfg.n_t)

    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for label, grid in (
        ("original", np.abs(h_est.data[:, 0, :])),
        ("latent", latent_grid),
        ("reconstructed", np.abs(h_rec.data[:, 0, :])),
    ):
        path = os.path.join(out_dir, f"heatmap_{label}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for row in grid:
                writer.writerow([repr(float(x)) for x in row])
        paths[label] = path
    return paths


def emit_history(history: codec.TrainHistory, path) -> bool:
    """Epoch-indexed loss CSV; returns True when the final training loss sits
    below the initial one."""
    rows = [
        {"epoch": e + 1, "train_loss": tl, "val_loss": vl}
        for e, (tl, vl) in enumerate(zip(history.train_loss, history.val_loss))
    ]
    write_csv(path, ("epoch", "train_loss", "val_loss"), rows)
    return history.train_loss[-1] < history.train_loss[0]
