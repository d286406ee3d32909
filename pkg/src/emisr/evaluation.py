"""Image-quality metrics, the deployment pipeline and experiment harnesses.

SSIM is always measured in a [0, 1] transformed domain. The harnesses use a
single reference quantile transform (fit on HR training data) for that, so
runs trained with different preprocessing are scored on the same footing.
NMSE is measured on physical values.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DegenerateInputError, DomainError, ShapeError, StateError
from .grid import EmissionGrid, geo_kwargs, to_envelope
from .nn.models import Model, load_checkpoint, model_forward
from .resample import bicubic_resample
from .transforms import QuantileTransform, encode_map

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
NMSE_FLOOR_DB = -300.0
HIST_BINS = 64


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    """Normalised 1D Gaussian; the 2D window is its outer product."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x, g):
    k = g.size
    x = sliding_window_view(x, k, axis=0) @ g
    return sliding_window_view(x, k, axis=1) @ g


def ssim_map(a, b, data_range=1.0, window=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Local SSIM for every fully contained window position."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"ssim needs two 2D arrays of equal shape, got {a.shape} and {b.shape}")
    if min(a.shape) < window:
        raise ShapeError(f"arrays {a.shape} are smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range=1.0) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03)."""
    return float(ssim_map(a, b, data_range).mean())


def _values(x):
    return x.values if isinstance(x, EmissionGrid) else np.asarray(x, dtype=np.float64)


def nmse_db(hr, sr) -> float:
    """10 log10(mean((sr - hr)^2) / mean(hr^2)), floored at -300 dB."""
    h, s = _values(hr), _values(sr)
    if h.shape != s.shape:
        raise ShapeError(f"hr {h.shape} and sr {s.shape} differ")
    power = float(np.mean(h * h))
    if not power > 0:
        raise DegenerateInputError("NMSE is undefined for an all-zero reference")
    mse = float(np.mean((s - h) ** 2))
    if mse == 0.0:
        return NMSE_FLOOR_DB
    return max(10.0 * math.log10(mse / power), NMSE_FLOOR_DB)


def distribution_distance(a, b, n_bins=HIST_BINS) -> float:
    """L1 distance between normalised value histograms, in [0, 2].

    Zeros get their own bin; nonzero values share ``n_bins`` log-spaced bins
    spanning the union of both nonzero ranges.
    """
    if n_bins < 2:
        raise DomainError(f"n_bins must be at least 2, got {n_bins}")
    va, vb = _values(a).ravel(), _values(b).ravel()
    pos_a, pos_b = va[va > 0], vb[vb > 0]
    ha, hb = _histogram(va, pos_a, pos_b, n_bins), _histogram(vb, pos_b, pos_a, n_bins)
    return float(np.abs(ha - hb).sum())


def _histogram(v, pos, other_pos, n_bins):
    counts = np.zeros(n_bins + 1)
    counts[0] = v.size - pos.size
    both = np.concatenate([pos, other_pos])
    if pos.size:
        lo, hi = np.log10(both.min()), np.log10(both.max())
        if hi > lo:
            counts[1:] = np.histogram(np.log10(pos), bins=n_bins, range=(lo, hi))[0]
        else:
            counts[1] = pos.size
    return counts / v.size


# --- deployment ---------------------------------------------------------------

def predict_values(model: Model, transform, lr_values, batch_size=32) -> list:
    """Super-resolve a list of LR arrays; returns physical-domain arrays on the envelope."""
    if isinstance(transform, QuantileTransform) and not transform.fitted:
        raise StateError("quantile transform has not been fitted")
    encoded, inverters = [], []
    for v in lr_values:
        x, inv = encode_map(transform, v)
        encoded.append(x)
        inverters.append(inv)
    out = []
    for start in range(0, len(encoded), batch_size):
        chunk = encoded[start:start + batch_size]
        shapes = {c.shape for c in chunk}
        if len(shapes) == 1:
            preds = model_forward(model, np.stack(chunk))[:, 0]
        else:
            preds = [model_forward(model, c)[0, 0] for c in chunk]
        for y, inv in zip(preds, inverters[start:start + batch_size]):
            out.append(to_envelope(inv.inverse(np.clip(y, 0.0, 1.0))))
    return out


def super_resolve(model: Model, transform, lr: EmissionGrid, alpha=None) -> EmissionGrid:
    """Map an LR grid through transform, network, clamp and inverse transform."""
    if alpha is not None and alpha != model.alpha:
        raise ConfigError(f"model enhances by {model.alpha}, requested {alpha}", "alpha")
    (values,) = predict_values(model, transform, [lr.values])
    return EmissionGrid(values, **geo_kwargs(lr))


def bicubic_baseline(lr: EmissionGrid, alpha: int) -> EmissionGrid:
    """Physical-domain bicubic upsampling projected onto the emission envelope."""
    return EmissionGrid(to_envelope(bicubic_resample(lr.values, alpha)), **geo_kwargs(lr))


# --- reports ------------------------------------------------------------------

@dataclass
class PairRecord:
    pair_id: str
    ssim: float
    nmse_db: float
    dist: float = float("nan")


@dataclass
class EvalReport:
    label: str
    model_id: str
    records: list = field(default_factory=list)

    @property
    def n_pairs(self) -> int:
        return len(self.records)

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.records])) if self.records else float("nan")

    @property
    def mean_nmse_db(self) -> float:
        return float(np.mean([r.nmse_db for r in self.records])) if self.records else float("nan")

    def detail_lines(self) -> list:
        lines = ["pair_id,ssim,nmse_db,dist_distance"]
        lines += [f"{r.pair_id},{r.ssim:.10f},{r.nmse_db:.6f},{r.dist:.6f}" for r in self.records]
        return lines


TABLE_HEADER = "label,model,n_pairs,mean_ssim,mean_nmse_db"


def table_lines(reports) -> list:
    return [TABLE_HEADER] + [
        f"{r.label},{r.model_id},{r.n_pairs},{r.mean_ssim:.6f},{r.mean_nmse_db:.4f}" for r in reports
    ]


def write_table(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(table_lines(reports)) + "\n")


def write_details(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(report.detail_lines()) + "\n")


def read_table(path) -> list:
    """Parse a table written by :func:`write_table` into dicts."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    keys = lines[0].split(",")
    return [dict(zip(keys, ln.split(","))) for ln in lines[1:]]


# --- harnesses ----------------------------------------------------------------

def evaluate_pairs(model, transform, pairs, reference: QuantileTransform, label="test",
                   model_id=None, batch_size=32) -> EvalReport:
    """Score ``model`` (or the bicubic baseline when ``model`` is None) on ``pairs``.

    SSIM compares ``reference``-transformed SR and HR; NMSE compares physical values.
    """
    if not reference.fitted:
        raise StateError("reference transform for SSIM has not been fitted")
    if model is None:
        srs = [bicubic_baseline(p.lr, p.alpha).values for p in pairs]
        model_id = model_id or "bicubic"
    else:
        bad = [p.pair_id for p in pairs if p.alpha != model.alpha]
        if bad:
            raise ConfigError(f"model alpha {model.alpha} does not match pairs {bad[:3]}", "alpha")
        srs = predict_values(model, transform, [p.lr.values for p in pairs], batch_size)
        model_id = model_id or model.config.architecture
    report = EvalReport(label, model_id)
    for p, sr in zip(pairs, srs):
        s = ssim(reference.forward(sr), reference.forward(p.hr.values))
        report.records.append(PairRecord(p.pair_id, s, nmse_db(p.hr, sr),
                                         distribution_distance(p.hr, sr)))
    return report


def _resolve_model(entry):
    if isinstance(entry, Model) or entry is None:
        return entry
    if not os.path.exists(entry):
        raise StateError(f"missing checkpoint {entry}")
    return load_checkpoint(entry)


def run_protocol(models: dict, protocol: str, test_pairs, reference) -> list:
    """One report per model on a protocol's test set.

    ``models`` maps a model id to ``(model_or_checkpoint_path, transform)``;
    a ``None`` model scores the bicubic baseline.
    """
    reports = []
    for model_id, (entry, transform) in models.items():
        model = _resolve_model(entry)
        reports.append(evaluate_pairs(model, transform, test_pairs, reference, protocol, model_id))
    return reports


def run_scale_invariance(model, transform, corpora: dict, reference, alpha=None) -> list:
    """Evaluate a fixed model on corpora at different cell sizes; one row per corpus."""
    model = _resolve_model(model)
    if alpha is not None and alpha != model.alpha:
        raise ConfigError(f"model enhances by {model.alpha}, corpora use {alpha}", "alpha")
    return [evaluate_pairs(model, transform, pairs, reference, label)
            for label, pairs in corpora.items()]


def run_cross_compound(model, transform, compound_corpora: dict, reference) -> list:
    """Evaluate a fixed model and fixed transform on each compound's corpus."""
    model = _resolve_model(model)
    reports = []
    for compound, pairs in compound_corpora.items():
        if not pairs:
            raise StateError(f"no corpus for compound {compound!r}")
        reports.append(evaluate_pairs(model, transform, pairs, reference, compound))
    return reports
