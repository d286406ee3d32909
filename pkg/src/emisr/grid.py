"""Emission raster data model, the EMG1 file format and heatmap rendering.

Rows run north to south: row 0 is the cell band just below ``lat_bounds[1]``.
Columns run west to east from ``lon_bounds[0]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, FormatError, IoError

COMPOUNDS = ("isoprene", "monoterpenes", "methanol", "sesquiterpenes")

# Physical envelope of emission fluxes in kg/m^2/s.
MAX_EMISSION = 1e-9
MIN_NONZERO_EMISSION = 1e-30

EMG1_MAGIC = b"EMG1"
_EMG1_HEADER = struct.Struct("<4sIIddddHBB")

BACKGROUND_RGB = (255, 255, 255)


class Timestamp(NamedTuple):
    year: int
    month: int


def _check_bounds(bounds, name):
    lo, hi = (float(b) for b in bounds)
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise DomainError(f"{name} must be an increasing pair of finite degrees, got {bounds!r}")
    return lo, hi


@dataclass(frozen=True, eq=False)
class EmissionGrid:
    """A non-negative emission raster with geographic extent.

    ``values`` is copied into a read-only float64 array on construction, so an
    instance never changes after it has been validated.
    """

    values: np.ndarray
    lat_bounds: tuple[float, float]
    lon_bounds: tuple[float, float]
    timestamp: Timestamp = Timestamp(2000, 1)
    compound: str = "isoprene"

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if values.ndim != 2 or values.size == 0:
            raise DomainError(f"emission grid must be a non-empty 2D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("emission grid contains non-finite values")
        if np.any(values < 0):
            raise DomainError("emission grid contains negative values")
        if values.max() > MAX_EMISSION:
            raise DomainError(f"emission value {values.max():g} exceeds envelope maximum {MAX_EMISSION:g}")
        nonzero = values[values > 0]
        if nonzero.size and nonzero.min() < MIN_NONZERO_EMISSION:
            raise DomainError(
                f"nonzero emission {nonzero.min():g} below envelope floor {MIN_NONZERO_EMISSION:g}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

        lat = _check_bounds(self.lat_bounds, "lat_bounds")
        lon = _check_bounds(self.lon_bounds, "lon_bounds")
        object.__setattr__(self, "lat_bounds", lat)
        object.__setattr__(self, "lon_bounds", lon)
        h, w = values.shape
        dlat = (lat[1] - lat[0]) / h
        dlon = (lon[1] - lon[0]) / w
        if abs(dlat - dlon) > 1e-9 * max(dlat, dlon):
            raise DomainError(f"cells are not square: {dlat!r} deg (lat) vs {dlon!r} deg (lon)")

        year, month = (int(x) for x in self.timestamp)
        if not 1 <= month <= 12 or not 0 <= year <= 0xFFFF:
            raise DomainError(f"invalid timestamp {self.timestamp!r}")
        object.__setattr__(self, "timestamp", Timestamp(year, month))
        if self.compound not in COMPOUNDS:
            raise DomainError(f"unknown compound {self.compound!r}; expected one of {COMPOUNDS}")

    @classmethod
    def from_array(cls, values, cell_size=0.25, origin=(0.0, 0.0), timestamp=(2000, 1),
                   compound="isoprene"):
        """Build a grid whose south-west corner sits at ``origin`` (lat, lon)."""
        values = np.asarray(values, dtype=np.float64)
        h, w = values.shape
        lat0, lon0 = origin
        return cls(values, (lat0, lat0 + h * cell_size), (lon0, lon0 + w * cell_size),
                   Timestamp(*timestamp), compound)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def cell_size_deg(self) -> float:
        return (self.lat_bounds[1] - self.lat_bounds[0]) / self.height

    def with_values(self, values) -> "EmissionGrid":
        """Same extent, time and compound with new values (dims may change)."""
        return EmissionGrid(values, self.lat_bounds, self.lon_bounds, self.timestamp, self.compound)

    def equals(self, other: "EmissionGrid") -> bool:
        """Bit-exact equality of values and metadata."""
        return (
            self.shape == other.shape
            and self.values.tobytes() == other.values.tobytes()
            and self.lat_bounds == other.lat_bounds
            and self.lon_bounds == other.lon_bounds
            and self.timestamp == other.timestamp
            and self.compound == other.compound
        )


@dataclass(frozen=True, eq=False)
class TransformedGrid:
    """Grid values mapped into [0, 1] by a preprocessing transform.

    Geographic metadata rides along so the inverse can rebuild an EmissionGrid.
    """

    values: np.ndarray
    transform_id: str
    lat_bounds: tuple[float, float] = (0.0, 1.0)
    lon_bounds: tuple[float, float] = (0.0, 1.0)
    timestamp: Timestamp = Timestamp(2000, 1)
    compound: str = "isoprene"

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise DomainError(f"transformed grid must be 2D, got shape {values.shape}")
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise DomainError("transformed grid values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def geo_kwargs(grid) -> dict:
    return dict(lat_bounds=grid.lat_bounds, lon_bounds=grid.lon_bounds,
                timestamp=grid.timestamp, compound=grid.compound)


def to_envelope(values) -> np.ndarray:
    """Project raw model or resampler output onto the emission envelope.

    Negative values become 0, values above the envelope maximum are clipped and
    positive values below the nonzero floor are flushed to 0.
    """
    values = np.asarray(values, dtype=np.float64)
    out = np.where(values > 0, values, 0.0)
    out = np.minimum(out, MAX_EMISSION)
    out[out < MIN_NONZERO_EMISSION] = 0.0
    return out


def write_grid(grid: EmissionGrid, path) -> None:
    header = _EMG1_HEADER.pack(
        EMG1_MAGIC, grid.height, grid.width,
        grid.lat_bounds[0], grid.lat_bounds[1], grid.lon_bounds[0], grid.lon_bounds[1],
        grid.timestamp.year, grid.timestamp.month, COMPOUNDS.index(grid.compound),
    )
    payload = grid.values.astype("<f8", copy=False).tobytes(order="C")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write grid to {path}: {exc}") from exc


def read_grid(path) -> EmissionGrid:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read grid from {path}: {exc}") from exc

    if len(data) < _EMG1_HEADER.size:
        raise FormatError(f"{path}: truncated EMG1 header ({len(data)} bytes)")
    magic, h, w, lat0, lat1, lon0, lon1, year, month, code = _EMG1_HEADER.unpack_from(data)
    if magic != EMG1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if h == 0 or w == 0:
        raise FormatError(f"{path}: zero-sized grid {h}x{w}")
    if not 1 <= month <= 12:
        raise FormatError(f"{path}: invalid month {month}")
    if code >= len(COMPOUNDS):
        raise FormatError(f"{path}: unknown compound code {code}")
    expected = _EMG1_HEADER.size + 8 * h * w
    if len(data) != expected:
        raise FormatError(f"{path}: payload size {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f8", offset=_EMG1_HEADER.size).reshape(h, w)
    if np.any(values < 0):
        raise DomainError(f"{path}: negative emission value")
    return EmissionGrid(values.astype(np.float64), (lat0, lat1), (lon0, lon1),
                        Timestamp(year, month), COMPOUNDS[code])


def heatmap_rgb(values, log_range=None, cmap="viridis") -> np.ndarray:
    """Map emission values to an (H, W, 3) uint8 image on a log10 color scale.

    Zero cells get ``BACKGROUND_RGB``. ``log_range`` fixes the (min, max) of
    log10 values so several maps can share one scale; by default it spans the
    nonzero values of ``values``.
    """
    import matplotlib

    values = np.asarray(values, dtype=np.float64)
    lut = np.round(matplotlib.colormaps[cmap](np.linspace(0.0, 1.0, 256))[:, :3] * 255).astype(np.uint8)
    rgb = np.empty(values.shape + (3,), dtype=np.uint8)
    rgb[...] = BACKGROUND_RGB
    positive = values > 0
    if not positive.any():
        return rgb
    logs = np.log10(values[positive])
    lo, hi = log_range if log_range is not None else (logs.min(), logs.max())
    if hi > lo:
        idx = np.round(np.clip((logs - lo) / (hi - lo), 0.0, 1.0) * 255).astype(np.intp)
    else:
        idx = np.full(logs.shape, 128, dtype=np.intp)
    rgb[positive] = lut[idx]
    return rgb


def render_heatmap(grid: EmissionGrid, path, scale=1, log_range=None) -> None:
    """Write a binary PPM (P6) heatmap of ``grid``; each cell becomes a scale x scale block."""
    rgb = heatmap_rgb(grid.values, log_range=log_range)
    if scale > 1:
        rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    h, w = rgb.shape[:2]
    try:
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (w, h))
            fh.write(rgb.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write heatmap to {path}: {exc}") from exc


def read_ppm(path) -> np.ndarray:
    """Read back a P6 image written by :func:`render_heatmap`."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise FormatError(f"{path}: not a P6 pixmap")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
