"""Diagnostics on trained models: clustering purity, predictor-matrix tests,
pathwise invariance, the loss-decomposition identity, and embedding export."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError, FormatError
from .models import ModelConfig, encode, predict, read_checkpoint
from .numerics import ModelParams, Tensor, eigenvalues
from .synthgen import (
    ARMA_BURN_IN,
    DETERMINISTIC_REGIME_IDS,
    REGIMES,
    STD_EPS,
    Dataset,
    draw_randomness,
    render,
    sequence_rng,
    sequence_seed,
)

REL_EPS = 1e-12


@dataclass
class EmbeddingSet:
    rows: np.ndarray
    labels: np.ndarray
    source: str = ""

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] != self.labels.shape[0]:
            raise DimensionError(f"embedding rows {self.rows.shape} vs labels {self.labels.shape}")

    def __len__(self):
        return self.rows.shape[0]


def _encoder_prefix(which: str) -> str:
    if which == "online":
        return "encoder."
    if which == "ema":
        return "ema.encoder."
    raise ContractError(f"encoder must be 'online' or 'ema', got {which!r}")


def as_float64(params: ModelParams) -> ModelParams:
    return params.copy_params(dtype=np.float64, requires_grad=False)


def latents(params: ModelParams, windows: np.ndarray, encoder: str = "online", batch: int = 512) -> np.ndarray:
    prefix = _encoder_prefix(encoder)
    out = [encode(params, windows[i : i + batch], prefix=prefix).data for i in range(0, len(windows), batch)]
    if not out:
        return np.zeros((0, params[prefix + "head0.bias"].shape[0] if prefix + "head1.bias" not in params else params[prefix + "head1.bias"].shape[0]))
    return np.concatenate(out).astype(np.float64)


def embed_split(params: ModelParams, data: Dataset, which: str = "context", encoder: str = "online", source: str = "") -> EmbeddingSet:
    if which not in ("context", "target"):
        raise ContractError(f"which must be 'context' or 'target', got {which!r}")
    windows = data.context if which == "context" else data.target
    return EmbeddingSet(latents(params, windows, encoder), data.labels.copy(), source)


# --- k-means ------------------------------------------------------------------


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int


def _sq_dists(x, c):
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plus_plus(x, w, k, rng):
    n = x.shape[0]
    cdf = np.cumsum(w)
    first = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    centers = [min(first, n - 1)]
    closest = _sq_dists(x, x[centers]).ravel()
    for _ in range(1, k):
        pot = w * closest
        total = pot.sum()
        if total <= 0.0:
            idx = int(np.argmax(closest))
        else:
            idx = int(np.searchsorted(np.cumsum(pot), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(idx)
        closest = np.minimum(closest, _sq_dists(x, x[idx : idx + 1]).ravel())
    return x[centers].copy()


def _lloyd(x, w, centroids, max_iter):
    k = centroids.shape[0]
    assign = None
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centroids)
        new = np.argmin(d, axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        wsum = np.bincount(assign, weights=w, minlength=k)
        for j in np.flatnonzero(wsum == 0):
            # empty cluster: re-seed from the point farthest from its centroid
            far = int(np.argmax(d[np.arange(len(x)), assign]))
            centroids[j] = x[far]
            assign[far] = j
            d[far] = 0.0
            wsum = np.bincount(assign, weights=w, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x * w[:, None])
        # fewer distinct points than clusters: a cluster can stay empty, keep its centroid
        filled = wsum > 0
        centroids[filled] = sums[filled] / wsum[filled, None]
    d = _sq_dists(x, centroids)
    assign = np.argmin(d, axis=1)
    inertia = float((w * d[np.arange(len(x)), assign]).sum())
    return assign, centroids, inertia, it


def kmeans(points, k: int = 18, restarts: int = 10, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """k-means++ seeding, Lloyd iterations, best of ``restarts`` by inertia.

    Runs on the distinct rows weighted by multiplicity, so the result does
    not depend on row order or on duplicating the data.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < k:
        raise ContractError(f"kmeans needs at least K={k} points, got {n}")
    if restarts < 1:
        raise ContractError("restarts must be >= 1")
    uniq, inverse, counts = np.unique(x, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    w = counts.astype(np.float64)
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        init = _plus_plus(uniq, w, k, rng)
        assign, cent, inertia, its = _lloyd(uniq, w, init, max_iter)
        if best is None or inertia < best[2]:
            best = (assign, cent, inertia, its)
    assign, cent, inertia, its = best
    return KMeansResult(assign[inverse], cent, inertia, its)


def purity(assignments, labels) -> float:
    """Fraction of points carrying their cluster's majority label."""
    a = np.asarray(assignments)
    y = np.asarray(labels)
    if a.shape != y.shape:
        raise DimensionError(f"purity: {a.shape} assignments vs {y.shape} labels")
    if a.size == 0:
        return 0.0
    _, a_idx = np.unique(a, return_inverse=True)
    _, y_idx = np.unique(y, return_inverse=True)
    table = np.zeros((a_idx.max() + 1, y_idx.max() + 1), dtype=np.int64)
    np.add.at(table, (a_idx.reshape(-1), y_idx.reshape(-1)), 1)
    return float(table.max(axis=1).sum() / a.size)


# --- predictor matrix -----------------------------------------------------------


@dataclass
class MatrixDiagnostics:
    frob_rel: float
    skew_rel: float
    eigen_mags: np.ndarray


def m_diagnostics(m) -> MatrixDiagnostics:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"predictor matrix must be square, got {m.shape}")
    norm = np.linalg.norm(m)
    frob = np.linalg.norm(m - np.eye(m.shape[0])) / max(norm, REL_EPS)
    skew = np.linalg.norm(m - m.T) / max(norm, REL_EPS)
    return MatrixDiagnostics(float(frob), float(skew), np.abs(eigenvalues(m)))


@dataclass
class CentroidAction:
    errors: np.ndarray
    mean: float
    zero_centroids: list = field(default_factory=list)


def centroid_action(m, centroids) -> CentroidAction:
    """Relative displacement |M c - c| / |c| of each centroid."""
    m = np.asarray(m, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != m.shape[1]:
        raise DimensionError(f"centroids {c.shape} incompatible with M {m.shape}")
    norms = np.linalg.norm(c, axis=1)
    zero = [int(i) for i in np.flatnonzero(norms < REL_EPS)]
    errors = np.linalg.norm(c @ m.T - c, axis=1) / np.maximum(norms, REL_EPS)
    return CentroidAction(errors, float(errors.mean()), zero)


# --- invariance and loss decomposition -------------------------------------------


def pathwise_invariance(params: ModelParams, data: Dataset, encoder: str = "online") -> float:
    """Mean relative change |f(target) - f(context)| / |f(context)| over pairs."""
    zc = latents(params, data.context, encoder)
    zt = latents(params, data.target, encoder)
    return float(np.mean(np.linalg.norm(zt - zc, axis=1) / (np.linalg.norm(zc, axis=1) + REL_EPS)))


def _geometry(data: Dataset) -> tuple[int, int, int, int]:
    man = data.manifest
    try:
        return int(man["global_seed"]), int(man["master_len"]), int(man["context_len"]), int(man["delta"])
    except KeyError as exc:
        raise FormatError(f"dataset manifest lacks {exc.args[0]!r}; cannot regenerate sequences") from exc


def conditional_futures(regime_id: int, seq_index: int, global_seed: int, master_len: int, context_len: int, delta: int, n_draws: int):
    """Target windows consistent with a pair's context.

    Deterministic regimes have exactly one future (the regenerated target).
    For stochastic regimes the innovations after the context are redrawn
    ``n_draws`` times; windows are standardized with the original sequence's
    statistics so the context itself stays fixed.
    """
    spec = REGIMES[regime_id]
    draws = draw_randomness(spec, sequence_rng(sequence_seed(global_seed, regime_id, seq_index)), master_len)
    raw = render(spec, draws, master_len)
    mean, std = raw.mean(), raw.std() + STD_EPS

    def window(values):
        return ((values - mean) / std)[delta : delta + context_len].astype(np.float32)

    if spec.deterministic:
        return window(raw)[None, :]
    rng = np.random.default_rng([global_seed, regime_id, seq_index, 0x4B4A])
    out = np.empty((n_draws, context_len), dtype=np.float32)
    for j in range(n_draws):
        d = dict(draws)
        if "innovations" in d:
            inn = d["innovations"].copy()
            inn[ARMA_BURN_IN + context_len :] = rng.standard_normal(inn.shape[0] - ARMA_BURN_IN - context_len)
            d["innovations"] = inn
        if "noise" in d:
            nz = d["noise"].copy()
            nz[context_len:] = rng.standard_normal(nz.shape[0] - context_len)
            d["noise"] = nz
        out[j] = window(render(spec, d, master_len))
    return out


@dataclass
class Decomposition:
    loss: float
    term1: float
    gap: float
    n_pairs: int


def loss_decomposition_check(
    params: ModelParams,
    data: Dataset,
    regimes=DETERMINISTIC_REGIME_IDS,
    n_draws: int = 16,
) -> Decomposition:
    """Compare the JEPA loss on stored targets with the mean-prediction term.

    The loss uses the targets read from the dataset file; Term 1 uses
    conditional expectations built from regenerated sequences. On noise-free
    regimes the two coincide and the returned gap is zero.
    """
    seed, master_len, context_len, delta = _geometry(data)
    mask = np.isin(data.labels, list(regimes))
    if not mask.any():
        raise ContractError("loss_decomposition_check: no pairs from the requested regimes")
    sub = data.subset(mask)
    p64 = as_float64(params)
    pred = predict(p64, Tensor(latents(p64, sub.context, "online"))).data
    goal = latents(p64, sub.target, "ema")
    loss = float(np.mean(np.square(pred - goal)))
    cond = np.empty_like(goal)
    for i, (rid, sidx) in enumerate(zip(sub.labels.tolist(), sub.seq_index.tolist())):
        futures = conditional_futures(rid, sidx, seed, master_len, context_len, delta, n_draws)
        cond[i] = latents(p64, futures, "ema").mean(axis=0)
    term1 = float(np.mean(np.square(pred - cond)))
    gap = abs(loss - term1) / max(loss, REL_EPS)
    return Decomposition(loss, term1, gap, len(sub))


# --- export -----------------------------------------------------------------------


def export_embeddings(emb: EmbeddingSet, path):
    """CSV with header ``id,label,z0..z{k-1}``; values round-trip float32 exactly."""
    k = emb.rows.shape[1]
    header = ",".join(["id", "label"] + [f"z{j}" for j in range(k)])
    rows32 = emb.rows.astype(np.float32)
    lines = [header]
    for i, (row, label) in enumerate(zip(rows32, emb.labels.tolist())):
        lines.append(",".join([str(i), str(int(label))] + [format(float(v), ".9g") for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def import_embeddings(path) -> EmbeddingSet:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    if header[:2] != ["id", "label"]:
        raise FormatError(f"{path}:1: expected header starting with id,label")
    k = len(header) - 2
    rows = np.empty((len(lines) - 1, k), dtype=np.float32)
    labels = np.empty(len(lines) - 1, dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != k + 2:
            raise FormatError(f"{path}:{i + 2}: expected {k + 2} fields, got {len(parts)}")
        labels[i] = int(parts[1])
        rows[i] = [np.float32(float(v)) for v in parts[2:]]
    return EmbeddingSet(rows, labels)


# --- report -------------------------------------------------------------------------

REPORT_SCHEMA = "kjepa.analysis_report/1"
ABSENT = "absent"


@dataclass
class AnalysisReport:
    purity_jepa: float
    purity_ae: float | None
    frob_rel: float
    skew_rel: float
    eigen_mags: list
    centroid_errors: list
    centroid_mean: float
    invariance_err: float
    invariance_err_untrained: float
    decomposition_gap: float
    control_frob_rel: float | None = None
    control_purity: float | None = None
    control_val_loss_ratio: float | None = None

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.field_names()}

    def to_kv(self) -> str:
        lines = [f"schema={REPORT_SCHEMA}"]
        for name, value in self.to_dict().items():
            if value is None:
                text = ABSENT
            elif isinstance(value, list):
                text = " ".join(repr(float(v)) for v in value)
            else:
                text = repr(float(value))
            lines.append(f"{name}={text}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        body = {"schema": REPORT_SCHEMA, **{k: v for k, v in self.to_dict().items()}}
        return json.dumps(body, indent=2, sort_keys=False)

    def write(self, stem):
        stem = Path(stem)
        stem.with_suffix(".txt").write_text(self.to_kv())
        stem.with_suffix(".json").write_text(self.to_json())

    @classmethod
    def from_kv(cls, text: str, source: str = "<report>") -> "AnalysisReport":
        values: dict = {}
        names = cls.field_names()
        list_fields = {"eigen_mags", "centroid_errors"}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{source}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key == "schema":
                if raw != REPORT_SCHEMA:
                    raise FormatError(f"{source}:{lineno}: unsupported schema {raw!r}")
                continue
            if key not in names:
                raise FormatError(f"{source}:{lineno}: unknown key {key!r}")
            try:
                if raw == ABSENT:
                    values[key] = None
                elif key in list_fields:
                    values[key] = [float(v) for v in raw.split()]
                else:
                    values[key] = float(raw)
            except ValueError as exc:
                raise FormatError(f"{source}:{lineno}: bad value for {key}: {raw!r}") from exc
        optional = {"purity_ae", "control_frob_rel", "control_purity", "control_val_loss_ratio"}
        missing = [n for n in names if n not in values and n not in optional]
        if missing:
            raise FormatError(f"{source}: missing keys {missing}")
        return cls(**values)

    @classmethod
    def from_json(cls, text: str) -> "AnalysisReport":
        body = json.loads(text)
        if body.pop("schema", None) != REPORT_SCHEMA:
            raise FormatError("unsupported report schema")
        return cls(**body)

    @classmethod
    def read(cls, path) -> "AnalysisReport":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".json":
            return cls.from_json(text)
        return cls.from_kv(text, str(path))


# Desk-scale pass/fail thresholds.
THRESHOLDS = {
    "purity_jepa_min": 0.55,
    "purity_gap_min": 0.10,
    "frob_rel_max": 0.10,
    "skew_rel_max": 0.10,
    "centroid_mean_max": 0.05,
    "eigen_band": (0.85, 1.10),
    "eigen_count_min": 18,
    "invariance_max": 0.20,
    "invariance_untrained_factor": 2.0,
    "decomposition_gap_max": 1e-6,
    "control_loss_tolerance": 0.20,
    "control_frob_min": 0.5,
}

# Full-scale numbers, shown only as a reference column.
PAPER_REFERENCE = {
    "purity_jepa": 0.6548,
    "purity_ae": 0.3881,
    "frob_rel": 0.0234,
    "skew_rel": 0.0206,
    "centroid_mean": 0.0080,
}


def evaluate_thresholds(report: AnalysisReport) -> dict[str, bool | None]:
    """Pass/fail per criterion; None when the report lacks the needed field."""
    t = THRESHOLDS
    lo, hi = t["eigen_band"]
    in_band = sum(1 for v in report.eigen_mags if lo <= v <= hi)
    out: dict[str, bool | None] = {
        "purity_jepa": report.purity_jepa >= t["purity_jepa_min"],
        "purity_gap": None
        if report.purity_ae is None
        else (report.purity_jepa - report.purity_ae) >= t["purity_gap_min"],
        "frob_rel": report.frob_rel <= t["frob_rel_max"],
        "skew_rel": report.skew_rel <= t["skew_rel_max"],
        "centroid_mean": report.centroid_mean <= t["centroid_mean_max"],
        "eigen_count": in_band >= t["eigen_count_min"],
        "invariance": report.invariance_err <= t["invariance_max"]
        and report.invariance_err_untrained >= t["invariance_untrained_factor"] * report.invariance_err,
        "decomposition_gap": report.decomposition_gap <= t["decomposition_gap_max"],
    }
    if report.control_val_loss_ratio is None:
        out["control"] = None
    else:
        out["control"] = (
            abs(report.control_val_loss_ratio - 1.0) <= t["control_loss_tolerance"]
            and report.control_frob_rel >= t["control_frob_min"]
            and report.control_purity >= t["purity_jepa_min"]
        )
    return out


def analyze_checkpoints(
    jepa_ckpt,
    test: Dataset,
    ae_ckpt=None,
    control_ckpt=None,
    val: Dataset | None = None,
    k: int = 18,
    restarts: int = 10,
    seed: int = 0,
    untrained_seed: int = 0,
) -> AnalysisReport:
    """Full diagnostic suite on the test split."""
    from .models import init_params
    from .training import mean_loss

    params, config = read_checkpoint(jepa_ckpt)
    if config.mode != "jepa" or config.predictor != "linear":
        raise ContractError("analysis needs a JEPA checkpoint with a linear predictor")
    if test.context_len != config.input_len:
        raise DimensionError(f"test windows have length {test.context_len}, model expects {config.input_len}")
    p64 = as_float64(params)
    z = latents(p64, test.context)
    km = kmeans(z, k, restarts, seed)
    m = p64["predictor.M"].data
    diag = m_diagnostics(m)
    ca = centroid_action(m, km.centroids)
    untrained = as_float64(init_params(config, np.random.default_rng(untrained_seed)))
    report = AnalysisReport(
        purity_jepa=purity(km.assignments, test.labels),
        purity_ae=None,
        frob_rel=diag.frob_rel,
        skew_rel=diag.skew_rel,
        eigen_mags=[float(v) for v in diag.eigen_mags],
        centroid_errors=[float(v) for v in ca.errors],
        centroid_mean=ca.mean,
        invariance_err=pathwise_invariance(p64, test),
        invariance_err_untrained=pathwise_invariance(untrained, test),
        decomposition_gap=loss_decomposition_check(params, test).gap,
    )
    if ae_ckpt is not None:
        ae_params, ae_config = read_checkpoint(ae_ckpt)
        za = latents(as_float64(ae_params), test.context)
        report.purity_ae = purity(kmeans(za, k, restarts, seed).assignments, test.labels)
    if control_ckpt is not None:
        c_params, c_config = read_checkpoint(control_ckpt)
        c64 = as_float64(c_params)
        report.control_frob_rel = m_diagnostics(c64["predictor.M"].data).frob_rel
        report.control_purity = purity(kmeans(latents(c64, test.context), k, restarts, seed).assignments, test.labels)
        ref = val if val is not None else test
        base = mean_loss(params, ref, "jepa")
        report.control_val_loss_ratio = mean_loss(c_params, ref, "jepa") / max(base, REL_EPS)
    return report
