"""Synthetic 18-regime corpus: generation, standardization, windowing, KJD1 files.

Every master sequence is a pure function of ``(global_seed, regime_id,
seq_index)``. The per-sequence seed is a 64-bit BLAKE2b digest of those three
integers, used as the key of a Philox4x64 counter-based generator, so any
subset of sequences can be regenerated in any order.

Random quantities are drawn in a fixed order per regime kind (see
:func:`draw_randomness`) and then rendered deterministically by
:func:`render`.
"""
from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, FormatError, SpecError

MASTER_LEN = 1024
CONTEXT_LEN = 768
DELTA = 256
C_LOW, C_MED, C_HIGH = 7, 10, 15
ARMA_BURN_IN = 256
STD_EPS = 1e-8
GENERATOR_VERSION = "philox4x64-blake2b64-v1"

DETERMINISTIC_KINDS = frozenset(
    {"sine", "sine_harmonics", "trend", "square", "sawtooth", "pulses", "sine_trend"}
)
STOCHASTIC_KINDS = frozenset({"ar", "ma", "arma", "sine_high_noise"})


@dataclass(frozen=True)
class RegimeSpec:
    regime_id: int
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    @property
    def deterministic(self) -> bool:
        return self.kind in DETERMINISTIC_KINDS

    def validate(self):
        if self.kind not in DETERMINISTIC_KINDS | STOCHASTIC_KINDS:
            raise SpecError(f"{self.name}: unknown regime kind {self.kind!r}")
        phi = self.params.get("phi")
        if phi is not None and not abs(phi) < 1.0:
            raise SpecError(f"{self.name}: AR coefficient {phi} is not stationary")


REGIMES: tuple[RegimeSpec, ...] = (
    RegimeSpec(0, "Sine_LowFreq", "sine", {"cycles": C_LOW, "amplitude": 1.0}),
    RegimeSpec(1, "Sine_MedFreq", "sine", {"cycles": C_MED, "amplitude": 1.0}),
    RegimeSpec(2, "Sine_HighFreq", "sine", {"cycles": C_HIGH, "amplitude": 1.0}),
    RegimeSpec(3, "Sine_LowAmp", "sine", {"cycles": C_MED, "amplitude": 0.3}),
    RegimeSpec(4, "Sine_Harmonics", "sine_harmonics", {"cycles": C_MED, "amplitude": 0.7, "harmonic": 3, "harmonic_amplitude": 0.3}),
    RegimeSpec(5, "Trend_Up", "trend", {"base_slope": 1.5}),
    RegimeSpec(6, "Trend_Down", "trend", {"base_slope": -1.5}),
    RegimeSpec(7, "AR_PosStrong", "ar", {"phi": 0.9}),
    RegimeSpec(8, "AR_PosWeak", "ar", {"phi": 0.3}),
    RegimeSpec(9, "AR_Neg", "ar", {"phi": -0.7}),
    RegimeSpec(10, "MA_Pos", "ma", {"theta": 0.7}),
    RegimeSpec(11, "ARMA_Mixed", "arma", {"phi": 0.5, "theta": -0.4}),
    RegimeSpec(12, "Square_LowFreq", "square", {"cycles": C_LOW, "amplitude": 1.0}),
    RegimeSpec(13, "Square_HighFreq", "square", {"cycles": C_HIGH, "amplitude": 1.0}),
    RegimeSpec(14, "Sawtooth_MedFreq", "sawtooth", {"cycles": C_MED}),
    RegimeSpec(15, "Pulses_Sparse", "pulses", {"count": 5, "width": round(MASTER_LEN / 50), "amplitude": 2.0}),
    RegimeSpec(16, "Sine_Trend", "sine_trend", {"cycles": C_MED, "amplitude": 0.8, "base_slope": 1.0}),
    RegimeSpec(17, "Sine_HighNoise", "sine_high_noise", {"cycles": C_MED, "amplitude": 1.0, "noise_std": 3.0}),
)
NUM_REGIMES = len(REGIMES)
DETERMINISTIC_REGIME_IDS = tuple(r.regime_id for r in REGIMES if r.deterministic)


@dataclass
class MasterSequence:
    regime_id: int
    seq_index: int
    values: np.ndarray
    rng_seed: int


@dataclass
class WindowPair:
    context: np.ndarray
    target: np.ndarray
    regime_label: int
    seq_index: int


def sequence_seed(global_seed: int, regime_id: int, seq_index: int) -> int:
    payload = struct.pack("<QQQ", global_seed & (2**64 - 1), regime_id, seq_index)
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def sequence_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def arma_sample(phi, theta, length: int, burn_in: int, rng: np.random.Generator) -> np.ndarray:
    """x[t] = phi x[t-1] + e[t] + theta e[t-1] with e ~ N(0, 1); first ``burn_in`` dropped."""
    if phi is not None and not abs(phi) < 1.0:
        raise SpecError(f"AR coefficient {phi} is not stationary")
    eps = rng.standard_normal(burn_in + length)
    return arma_from_innovations(eps, phi, theta)[burn_in:]


def arma_from_innovations(eps: np.ndarray, phi, theta) -> np.ndarray:
    return kernels.arma_filter(eps, float(phi or 0.0), float(theta or 0.0))


def draw_randomness(spec: RegimeSpec, rng: np.random.Generator, length: int = MASTER_LEN) -> dict:
    """Draw every random quantity one master sequence needs, in a fixed order."""
    kind, p = spec.kind, spec.params
    draws: dict = {}
    if kind in ("sine", "square", "sawtooth", "sine_high_noise", "sine_harmonics", "sine_trend"):
        draws["phase"] = rng.normal(0.0, math.pi)
    if kind == "sine_harmonics":
        draws["phase2"] = rng.normal(0.0, math.pi)
    if kind in ("trend", "sine_trend"):
        draws["slope"] = p["base_slope"] + rng.standard_normal()
        draws["intercept"] = rng.normal(0.0, math.pi)
    if kind in ("ar", "ma", "arma"):
        draws["innovations"] = rng.standard_normal(ARMA_BURN_IN + length)
    if kind == "pulses":
        draws["onsets"] = rng.integers(0, length - p["width"] + 1, size=p["count"])
    if kind == "sine_high_noise":
        draws["noise"] = rng.standard_normal(length)
    return draws


def render(spec: RegimeSpec, draws: dict, length: int = MASTER_LEN) -> np.ndarray:
    """Deterministic signal for a regime given its random draws."""
    kind, p = spec.kind, spec.params
    t = np.arange(length, dtype=np.float64)
    if kind in ("sine", "sine_high_noise", "sine_harmonics", "sine_trend", "square", "sawtooth"):
        omega = 2.0 * math.pi * p["cycles"] / length
    if kind == "sine":
        return p["amplitude"] * np.sin(omega * t + draws["phase"])
    if kind == "sine_harmonics":
        return p["amplitude"] * np.sin(omega * t + draws["phase"]) + p["harmonic_amplitude"] * np.sin(
            p["harmonic"] * omega * t + draws["phase2"]
        )
    if kind == "trend":
        return draws["slope"] * t / (length - 1) + draws["intercept"]
    if kind == "sine_trend":
        return (
            p["amplitude"] * np.sin(omega * t + draws["phase"])
            + draws["slope"] * t / (length - 1)
            + draws["intercept"]
        )
    if kind == "square":
        s = np.sin(omega * t + draws["phase"])
        return p["amplitude"] * np.where(s >= 0.0, 1.0, -1.0)
    if kind == "sawtooth":
        u = p["cycles"] * t / length + draws["phase"] / (2.0 * math.pi)
        return 2.0 * (u - np.floor(u)) - 1.0
    if kind == "pulses":
        out = np.zeros(length)
        for onset in draws["onsets"]:
            out[onset : onset + p["width"]] += p["amplitude"]
        return out
    if kind in ("ar", "ma", "arma"):
        x = arma_from_innovations(draws["innovations"], p.get("phi"), p.get("theta"))
        return x[ARMA_BURN_IN : ARMA_BURN_IN + length]
    if kind == "sine_high_noise":
        return p["amplitude"] * np.sin(omega * t + draws["phase"]) + p["noise_std"] * draws["noise"]
    raise SpecError(f"unknown regime kind {kind!r}")


def generate_master(
    spec: RegimeSpec,
    global_seed: int,
    seq_index: int,
    length: int = MASTER_LEN,
    observation_noise: float = 0.0,
) -> MasterSequence:
    """One master sequence. ``observation_noise`` > 0 adds white noise from an
    independent stream, leaving every other draw untouched."""
    spec.validate()
    seed = sequence_seed(global_seed, spec.regime_id, seq_index)
    draws = draw_randomness(spec, sequence_rng(seed), length)
    values = render(spec, draws, length)
    if observation_noise:
        noise_rng = sequence_rng(seed ^ 0x9E3779B97F4A7C15)
        values = values + observation_noise * noise_rng.standard_normal(length)
    return MasterSequence(spec.regime_id, seq_index, values, seed)


def standardize(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return (v - v.mean()) / (v.std() + STD_EPS)


def make_pair(master: MasterSequence, context_len: int = CONTEXT_LEN, delta: int = DELTA) -> WindowPair:
    if context_len + delta > master.values.shape[0]:
        raise ConfigError(f"context_len + delta = {context_len + delta} exceeds master length {master.values.shape[0]}")
    z = standardize(master.values)
    return WindowPair(
        context=z[:context_len].copy(),
        target=z[delta : delta + context_len].copy(),
        regime_label=master.regime_id,
        seq_index=master.seq_index,
    )


# --- splits and files -------------------------------------------------------


@dataclass
class DatasetConfig:
    seqs_per_regime: int = 500
    global_seed: int = 0
    out_dir: str = "data"
    context_len: int = CONTEXT_LEN
    delta: int = DELTA
    master_len: int = MASTER_LEN
    split_fractions: tuple = (0.7, 0.2, 0.1)

    def validate(self):
        if self.seqs_per_regime < 10:
            raise ConfigError(f"seqs_per_regime must be >= 10, got {self.seqs_per_regime}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ConfigError(f"split fractions {self.split_fractions} must be non-negative and sum to 1")
        if self.context_len + self.delta > self.master_len:
            raise ConfigError("delta + context_len must not exceed master_len")
        if self.context_len < 1 or self.delta < 0:
            raise ConfigError("context_len must be positive and delta non-negative")


@dataclass
class DatasetFiles:
    train: Path
    val: Path
    test: Path

    def __getitem__(self, split: str) -> Path:
        return getattr(self, split)


SPLITS = ("train", "val", "test")


def split_counts(n: int, fractions=(0.7, 0.2, 0.1)) -> tuple[int, int, int]:
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_indices(n: int, fractions=(0.7, 0.2, 0.1)) -> dict[str, range]:
    a, b, _ = split_counts(n, fractions)
    return {"train": range(0, a), "val": range(a, a + b), "test": range(a + b, n)}


MAGIC = b"KJD1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


def record_dtype(context_len: int, target_len: int) -> np.dtype:
    return np.dtype(
        [("label", "<u2"), ("seq_index", "<u4"), ("context", "<f4", (context_len,)), ("target", "<f4", (target_len,))]
    )


def content_hash(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def file_hash(path) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Dataset:
    labels: np.ndarray
    seq_index: np.ndarray
    context: np.ndarray
    target: np.ndarray
    num_regimes: int = NUM_REGIMES
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def context_len(self) -> int:
        return self.context.shape[1]

    def subset(self, mask) -> "Dataset":
        return Dataset(
            self.labels[mask], self.seq_index[mask], self.context[mask], self.target[mask], self.num_regimes, dict(self.manifest)
        )


def encode_dataset(pairs: list[WindowPair], num_regimes: int = NUM_REGIMES) -> bytes:
    if pairs:
        c_len, t_len = pairs[0].context.shape[0], pairs[0].target.shape[0]
    else:
        c_len = t_len = 0
    rec = np.zeros(len(pairs), dtype=record_dtype(c_len, t_len))
    for i, pair in enumerate(pairs):
        rec[i]["label"] = pair.regime_label
        rec[i]["seq_index"] = pair.seq_index
        rec[i]["context"] = pair.context
        rec[i]["target"] = pair.target
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, len(pairs), c_len, t_len, num_regimes)
    return header + rec.tobytes()


def decode_dataset(buf: bytes) -> Dataset:
    if len(buf) < _HEADER.size:
        raise FormatError("KJD1 file truncated before end of header")
    magic, version, n, c_len, t_len, num_regimes = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported KJD1 version {version}")
    dt = record_dtype(c_len, t_len)
    expected = _HEADER.size + n * dt.itemsize
    if len(buf) != expected:
        raise FormatError(f"KJD1 size mismatch: {len(buf)} bytes, header implies {expected}")
    rec = np.frombuffer(buf, dtype=dt, count=n, offset=_HEADER.size)
    labels = rec["label"].astype(np.int64)
    if n and labels.max() >= num_regimes:
        raise FormatError(f"label {labels.max()} out of range for {num_regimes} regimes")
    return Dataset(
        labels=labels,
        seq_index=rec["seq_index"].astype(np.int64),
        context=np.ascontiguousarray(rec["context"]),
        target=np.ascontiguousarray(rec["target"]),
        num_regimes=num_regimes,
    )


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest")


def write_manifest(path, entries: dict):
    lines = [f"{k}={v}" for k, v in entries.items()]
    manifest_path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    mp = manifest_path(path)
    if not mp.exists():
        return {}
    out = {}
    for lineno, line in enumerate(mp.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"{mp}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_dataset(path, verify: bool = True) -> Dataset:
    buf = Path(path).read_bytes()
    ds = decode_dataset(buf)
    ds.manifest = read_manifest(path)
    if verify and "content_hash" in ds.manifest and ds.manifest["content_hash"] != content_hash(buf):
        raise FormatError(f"{path}: content hash does not match manifest")
    return ds


def generate_pairs(
    regime_ids, seq_indices, global_seed: int, context_len=CONTEXT_LEN, delta=DELTA, master_len=MASTER_LEN
) -> list[WindowPair]:
    pairs = []
    for rid in regime_ids:
        spec = REGIMES[rid]
        for s in seq_indices:
            master = generate_master(spec, global_seed, s, master_len)
            pairs.append(make_pair(master, context_len, delta))
    return pairs


def build_dataset(config: DatasetConfig) -> DatasetFiles:
    """Write train/val/test KJD1 files plus manifests into ``config.out_dir``."""
    config.validate()
    out = Path(config.out_dir)
    os.makedirs(out, exist_ok=True)
    parts = split_indices(config.seqs_per_regime, config.split_fractions)
    paths = {}
    for split in SPLITS:
        pairs = generate_pairs(
            range(NUM_REGIMES), parts[split], config.global_seed, config.context_len, config.delta, config.master_len
        )
        buf = encode_dataset(pairs)
        path = out / f"{split}.kjd"
        path.write_bytes(buf)
        fr = config.split_fractions
        write_manifest(
            path,
            {
                "format": "KJD1",
                "split": split,
                "global_seed": config.global_seed,
                "seqs_per_regime": config.seqs_per_regime,
                "split_train": fr[0],
                "split_val": fr[1],
                "split_test": fr[2],
                "master_len": config.master_len,
                "context_len": config.context_len,
                "delta": config.delta,
                "num_pairs": len(pairs),
                "generator_version": GENERATOR_VERSION,
                "content_hash": content_hash(buf),
            },
        )
        paths[split] = path
    return DatasetFiles(**paths)
