"""Invertible preprocessing that maps emission values into [0, 1].

Two strategies are provided:

* max scaling, which divides a map by its own maximum, and
* a quantile transform, which pushes values through the empirical CDF of a
  reference sample (the HR training data) so the output is roughly uniform.

Both expose ``encode(values) -> (transformed, inverter)`` where ``inverter``
has an ``inverse`` method; the training loop and the deployment pipeline only
rely on that protocol.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateInputError, DomainError, FormatError, InsufficientDataError,
                     IoError, StateError)
from .grid import EmissionGrid, TransformedGrid, geo_kwargs

QTX1_MAGIC = b"QTX1"
DEFAULT_N_QUANTILES = 1000


@dataclass(frozen=True)
class ScalingTransform:
    stored_max: float

    def __post_init__(self):
        if not self.stored_max > 0:
            raise DomainError(f"stored_max must be positive, got {self.stored_max!r}")

    @property
    def transform_id(self) -> str:
        return f"scaling:{self.stored_max!r}"

    def forward(self, values) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) / self.stored_max

    def inverse(self, values) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.stored_max


class MaxScaling:
    """Per-map max scaling strategy. Stateless; every map carries its own maximum."""

    transform_id = "scaling"

    def encode(self, values):
        values = np.asarray(values, dtype=np.float64)
        peak = values.max()
        if not peak > 0:
            raise DegenerateInputError("cannot max-scale an all-zero map")
        t = ScalingTransform(float(peak))
        return t.forward(values), t

    def __repr__(self):
        return "MaxScaling()"


class QuantileTransform:
    """Empirical-CDF transform onto the uniform distribution on [0, 1].

    ``quantile_values[k]`` is the empirical quantile at probability
    ``k / (n_quantiles - 1)``. Between adjacent quantiles the map is linear.
    A value equal to a run of tied quantiles maps to the middle of the run.
    """

    def __init__(self, quantile_values=None, n_quantiles=DEFAULT_N_QUANTILES):
        if quantile_values is not None:
            q = np.array(quantile_values, dtype=np.float64)
            if q.ndim != 1 or q.size < 2:
                raise DomainError("quantile_values must be a 1D array with at least 2 entries")
            if np.any(np.diff(q) < 0):
                raise DomainError("quantile_values must be non-decreasing")
            q.setflags(write=False)
            n_quantiles = q.size
            self.quantile_values = q
        else:
            self.quantile_values = None
        if n_quantiles < 2:
            raise DomainError("n_quantiles must be at least 2")
        self.n_quantiles = int(n_quantiles)

    def __repr__(self):
        state = "fitted" if self.fitted else "unfitted"
        return f"QuantileTransform(n_quantiles={self.n_quantiles}, {state})"

    @property
    def fitted(self) -> bool:
        return self.quantile_values is not None

    @property
    def transform_id(self) -> str:
        self._require_fitted()
        digest = hashlib.sha256(self.quantile_values.tobytes()).hexdigest()[:16]
        return f"quantile:{self.n_quantiles}:{digest}"

    def _require_fitted(self):
        if not self.fitted:
            raise StateError("quantile transform has not been fitted")

    def fit(self, samples) -> "QuantileTransform":
        data = _collect_samples(samples)
        if data.size < self.n_quantiles:
            raise InsufficientDataError(
                f"{data.size} samples cannot define {self.n_quantiles} quantiles"
            )
        if np.any(data < 0):
            raise DomainError("quantile fit samples must be non-negative")
        data = np.sort(data, kind="stable")
        n, m = self.n_quantiles, data.size
        k = np.arange(n, dtype=np.int64)
        # Quantile position k*(m-1)/(n-1) split into integer and fractional
        # parts without rounding so that exact positions hit samples exactly.
        num = k * (m - 1)
        lo = num // (n - 1)
        frac = (num - lo * (n - 1)) / (n - 1)
        hi = np.minimum(lo + 1, m - 1)
        q = data[lo] + frac * (data[hi] - data[lo])
        q = np.maximum.accumulate(q)
        q.setflags(write=False)
        self.quantile_values = q
        return self

    def forward(self, values) -> np.ndarray:
        self._require_fitted()
        q = self.quantile_values
        n = q.size
        x = np.asarray(values, dtype=np.float64)
        left = np.searchsorted(q, x, side="left")
        right = np.searchsorted(q, x, side="right")

        # Strictly between q[left-1] and q[left]: linear interpolation.
        seg = np.clip(left, 1, n - 1)
        q0, q1 = q[seg - 1], q[seg]
        width = q1 - q0
        with np.errstate(divide="ignore", invalid="ignore"):
            inside = (seg - 1) + np.where(width > 0, (x - q0) / width, 0.0)
        # Equal to quantiles left..right-1: centre of the tied run.
        tied = 0.5 * (left + right - 1)
        pos = np.where(right > left, tied, inside)
        pos = np.where(x < q[0], 0.0, pos)
        pos = np.where(x > q[-1], n - 1.0, pos)
        return np.clip(pos / (n - 1), 0.0, 1.0)

    def inverse(self, values) -> np.ndarray:
        self._require_fitted()
        t = np.asarray(values, dtype=np.float64)
        if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t > 1):
            raise DomainError("quantile inverse is only defined on [0, 1]")
        q = self.quantile_values
        n = q.size
        pos = t * (n - 1)
        i = np.minimum(np.floor(pos).astype(np.intp), n - 2)
        frac = pos - i
        out = q[i] + frac * (q[i + 1] - q[i])
        return np.where(out > 0, out, 0.0)

    def encode(self, values):
        return self.forward(values), self


def _collect_samples(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return samples.astype(np.float64).ravel()
    if isinstance(samples, EmissionGrid):
        return samples.values.ravel().copy()
    chunks = []
    for s in samples:
        if isinstance(s, EmissionGrid):
            s = s.values
        chunks.append(np.ravel(np.asarray(s, dtype=np.float64)))
    if not chunks:
        return np.empty(0)
    return np.concatenate(chunks)


def fit_quantile_transform(samples, n_quantiles=DEFAULT_N_QUANTILES) -> QuantileTransform:
    """Fit a quantile transform on non-negative samples (arrays, grids or scalars)."""
    return QuantileTransform(n_quantiles=n_quantiles).fit(samples)


def apply_quantile(t: QuantileTransform, grid: EmissionGrid) -> TransformedGrid:
    return TransformedGrid(t.forward(grid.values), t.transform_id, **geo_kwargs(grid))


def invert_quantile(t: QuantileTransform, grid: TransformedGrid) -> EmissionGrid:
    return EmissionGrid(t.inverse(grid.values), **geo_kwargs(grid))


def apply_scaling(grid: EmissionGrid):
    """Divide ``grid`` by its maximum; returns the transformed grid and the scaling used."""
    values, t = MaxScaling().encode(grid.values)
    return TransformedGrid(values, t.transform_id, **geo_kwargs(grid)), t


def invert_scaling(t: ScalingTransform, grid: TransformedGrid) -> EmissionGrid:
    return EmissionGrid(t.inverse(grid.values), **geo_kwargs(grid))


def write_qtx(t: QuantileTransform, path) -> None:
    t._require_fitted()
    data = QTX1_MAGIC + struct.pack("<I", t.n_quantiles) + t.quantile_values.astype("<f8").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(f"cannot write transform to {path}: {exc}") from exc


def read_qtx(path) -> QuantileTransform:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read transform from {path}: {exc}") from exc
    if len(data) < 8 or data[:4] != QTX1_MAGIC:
        raise FormatError(f"{path}: not a QTX1 file")
    (n,) = struct.unpack_from("<I", data, 4)
    if len(data) != 8 + 8 * n:
        raise FormatError(f"{path}: expected {n} quantiles, payload has {(len(data) - 8) / 8:g}")
    return QuantileTransform(np.frombuffer(data, dtype="<f8", offset=8).astype(np.float64))


def load_transform(spec):
    """Resolve a transform given as ``"scaling"``, a QTX1 path or a transform object."""
    if isinstance(spec, (QuantileTransform, MaxScaling)):
        return spec
    if spec in ("scaling", "max", "T_S"):
        return MaxScaling()
    return read_qtx(spec)



class ZeroInverse:
    """Inverter for an all-zero map under max scaling: everything maps back to 0."""

    transform_id = "scaling:0"

    def inverse(self, values) -> np.ndarray:
        return np.zeros(np.shape(values))


def encode_map(transform, values):
    """``transform.encode`` that also accepts an all-zero map under max scaling.

    Such a map encodes to zeros and its inverter returns zeros, so a blank LR
    input stays blank after super-resolution.
    """
    if isinstance(transform, MaxScaling) and not np.any(np.asarray(values) > 0):
        return np.zeros(np.shape(values)), ZeroInverse()
    return transform.encode(values)
