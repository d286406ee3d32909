"""Corpus construction: tiling, sparsity filtering, LR synthesis and splits.

Also hosts the synthetic emission generator used in place of a real
inventory, and the plain-text dataset manifest.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .errors import DegenerateSplitError, DomainError, FormatError, IoError
from .grid import COMPOUNDS, EmissionGrid, Timestamp, read_grid, to_envelope, write_grid
from .resample import ResampleSpec, bicubic_resample, clamp_non_negative

PATCH_SIZE = 64
DEFAULT_ALPHA = 4
MIN_NONZERO_FRACTION = 0.05

# Year boundaries of the time protocol: train <= 2014 < validation <= 2018 < test.
TRAIN_LAST_YEAR = 2014
VALIDATION_LAST_YEAR = 2018

SPLITS = ("train", "validation", "test")


class Origin(NamedTuple):
    source: str
    row: int
    col: int


@dataclass(frozen=True, eq=False)
class PatchPair:
    lr: EmissionGrid
    hr: EmissionGrid
    alpha: int
    origin: Origin

    def __post_init__(self):
        if self.hr.shape != (self.lr.height * self.alpha, self.lr.width * self.alpha):
            raise DomainError(f"HR shape {self.hr.shape} is not {self.alpha}x LR shape {self.lr.shape}")
        if self.lr.compound != self.hr.compound or self.lr.timestamp != self.hr.timestamp:
            raise DomainError("LR and HR patches disagree on compound or timestamp")

    @property
    def pair_id(self) -> str:
        return f"{self.origin.source}_r{self.origin.row:04d}_c{self.origin.col:04d}"

    @property
    def timestamp(self) -> Timestamp:
        return self.hr.timestamp

    @property
    def compound(self) -> str:
        return self.hr.compound


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    protocol: str = "random_70_20_10"

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def parts(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}


# --- tiling and filtering -------------------------------------------------

def iter_tiles(grid: EmissionGrid, patch_size: int):
    """Yield ``(row, col, patch)`` for complete, non-overlapping tiles in row-major order."""
    if patch_size < 1:
        raise DomainError(f"patch_size must be positive, got {patch_size}")
    if patch_size > grid.height and patch_size > grid.width:
        raise DomainError(f"patch_size {patch_size} exceeds grid dims {grid.shape}")
    cs = grid.cell_size_deg
    lat_top = grid.lat_bounds[1]
    lon_left = grid.lon_bounds[0]
    for r in range(0, grid.height - patch_size + 1, patch_size):
        for c in range(0, grid.width - patch_size + 1, patch_size):
            values = grid.values[r:r + patch_size, c:c + patch_size]
            lat = (lat_top - (r + patch_size) * cs, lat_top - r * cs)
            lon = (lon_left + c * cs, lon_left + (c + patch_size) * cs)
            yield r, c, EmissionGrid(values, lat, lon, grid.timestamp, grid.compound)


def slice_patches(grid: EmissionGrid, patch_size: int = PATCH_SIZE) -> list:
    return [patch for _, _, patch in iter_tiles(grid, patch_size)]


def sparsity_filter(patch: EmissionGrid, min_nonzero_fraction: float = MIN_NONZERO_FRACTION) -> bool:
    """True when the share of strictly positive cells reaches the threshold (inclusive)."""
    if not 0.0 <= min_nonzero_fraction <= 1.0:
        raise DomainError(f"threshold must lie in [0, 1], got {min_nonzero_fraction}")
    values = patch.values if isinstance(patch, EmissionGrid) else np.asarray(patch)
    return int(np.count_nonzero(values > 0)) >= min_nonzero_fraction * values.size


# --- LR synthesis -----------------------------------------------------------

def synthesize_lr(hr_values, alpha: int, antialias: bool = False) -> np.ndarray:
    """Bicubic-downsample HR values by ``alpha`` and project back onto the emission envelope."""
    spec = ResampleSpec(Fraction(1, alpha), antialias=antialias)
    return to_envelope(clamp_non_negative(bicubic_resample(hr_values, spec)))


def make_pairs(hr_patches, alpha: int = DEFAULT_ALPHA, origins=None, antialias=False) -> list:
    """Pair each HR patch with its synthesized LR counterpart.

    ``origins`` defaults to ``Origin("patch<i>", 0, 0)``.
    """
    pairs = []
    for i, hr in enumerate(hr_patches):
        if hr.height % alpha or hr.width % alpha:
            raise DomainError(f"patch dims {hr.shape} not divisible by alpha={alpha}")
        lr = hr.with_values(synthesize_lr(hr.values, alpha, antialias))
        origin = origins[i] if origins is not None else Origin(f"patch{i:05d}", 0, 0)
        pairs.append(PatchPair(lr, hr, alpha, origin))
    return pairs


def build_pairs(maps, patch_size=PATCH_SIZE, alpha=DEFAULT_ALPHA,
                min_nonzero_fraction=MIN_NONZERO_FRACTION, source_ids=None, antialias=False):
    """Slice, filter and pair a sequence of source maps.

    Returns ``(pairs, n_discarded)``.
    """
    pairs, discarded = [], 0
    for k, grid in enumerate(maps):
        source = source_ids[k] if source_ids is not None else f"map{k:04d}"
        kept, origins = [], []
        for r, c, patch in iter_tiles(grid, patch_size):
            if sparsity_filter(patch, min_nonzero_fraction):
                kept.append(patch)
                origins.append(Origin(source, r, c))
            else:
                discarded += 1
        pairs.extend(make_pairs(kept, alpha, origins, antialias))
    return pairs, discarded


def coarsen(grid: EmissionGrid, factor: int) -> EmissionGrid:
    """Block-average ``grid`` by an integer factor, keeping its extent (cells grow ``factor``x)."""
    h, w = grid.height // factor, grid.width // factor
    if h < 1 or w < 1:
        raise DomainError(f"cannot coarsen {grid.shape} by {factor}")
    v = grid.values[:h * factor, :w * factor].reshape(h, factor, w, factor).mean(axis=(1, 3))
    cs = grid.cell_size_deg * factor
    lat_top, lon_left = grid.lat_bounds[1], grid.lon_bounds[0]
    return EmissionGrid(to_envelope(v), (lat_top - h * cs, lat_top), (lon_left, lon_left + w * cs),
                        grid.timestamp, grid.compound)


# --- splits -----------------------------------------------------------------

def split_random(pairs, seed: int) -> DatasetSplit:
    n = len(pairs)
    if n < 10:
        raise DomainError(f"random split needs at least 10 pairs, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_val = n * 7 // 10, n * 2 // 10
    pick = [pairs[i] for i in order]
    return DatasetSplit(pick[:n_train], pick[n_train:n_train + n_val], pick[n_train + n_val:],
                        "random_70_20_10")


def time_bucket(year: int) -> str:
    if year <= TRAIN_LAST_YEAR:
        return "train"
    if year <= VALIDATION_LAST_YEAR:
        return "validation"
    return "test"


def split_time(pairs) -> DatasetSplit:
    parts = {name: [] for name in SPLITS}
    for p in pairs:
        parts[time_bucket(p.timestamp.year)].append(p)
    return DatasetSplit(parts["train"], parts["validation"], parts["test"], "time")


@dataclass(frozen=True)
class Region:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_max > self.lat_min and self.lon_max > self.lon_min):
            raise DomainError(f"degenerate region {self}")

    def contains(self, grid: EmissionGrid) -> bool:
        return (self.lat_min <= grid.lat_bounds[0] and grid.lat_bounds[1] <= self.lat_max
                and self.lon_min <= grid.lon_bounds[0] and grid.lon_bounds[1] <= self.lon_max)

    def disjoint(self, grid: EmissionGrid) -> bool:
        return (grid.lat_bounds[1] <= self.lat_min or grid.lat_bounds[0] >= self.lat_max
                or grid.lon_bounds[1] <= self.lon_min or grid.lon_bounds[0] >= self.lon_max)


def split_time_area(pairs, train_region) -> DatasetSplit:
    """Time split, then train/validation inside ``train_region`` and test fully outside it.

    Patches straddling the region boundary are dropped from every set.
    """
    region = train_region if isinstance(train_region, Region) else Region(*train_region)
    inside = [region.contains(p.hr) for p in pairs]
    outside = [region.disjoint(p.hr) for p in pairs]
    if not any(inside):
        raise DegenerateSplitError("training region contains no patch")
    if not any(outside):
        raise DegenerateSplitError("training region leaves no patch outside it")
    parts = {name: [] for name in SPLITS}
    for p, ins, out in zip(pairs, inside, outside):
        bucket = time_bucket(p.timestamp.year)
        if (bucket == "test" and out) or (bucket != "test" and ins):
            parts[bucket].append(p)
    return DatasetSplit(parts["train"], parts["validation"], parts["test"], "time_and_area")


def subsample_to_cardinality(split: DatasetSplit, target: int, seed: int) -> DatasetSplit:
    """Uniformly subsample the training list to ``target`` pairs, preserving order."""
    n = len(split.train)
    if target > n or target < 0:
        raise DomainError(f"cannot subsample {n} training pairs to {target}")
    keep = np.sort(np.random.default_rng(seed).choice(n, size=target, replace=False))
    return DatasetSplit([split.train[i] for i in keep], list(split.validation), list(split.test),
                        split.protocol)


# --- synthetic emissions ----------------------------------------------------

@dataclass(frozen=True)
class CompoundProfile:
    blob_density: float      # blobs per 1000 cells at the finest texture
    blob_scale: float        # multiplier on blob standard deviation
    amplitude_sd: float      # log-normal spread of blob amplitudes
    value_gamma: float       # shape of the log-value profile inside emitting areas
    peak_decades: tuple = (0.0, 1.0)


COMPOUND_PROFILES = {
    "isoprene": CompoundProfile(4.0, 1.0, 0.6, 0.6),
    "monoterpenes": CompoundProfile(5.5, 0.8, 0.45, 0.75, (0.5, 1.5)),
    "methanol": CompoundProfile(8.0, 0.55, 0.3, 1.2, (0.8, 2.0)),
    "sesquiterpenes": CompoundProfile(3.2, 1.15, 0.8, 0.7, (1.5, 2.5)),
}

CALENDAR_START = Timestamp(2000, 1)
CALENDAR_MONTHS = 21 * 12

# Blob standard deviation in cells at the western and eastern map edges.
_SIGMA_WEST = 9.0
_SIGMA_EAST = 2.5


def _blob_layout(rng, h, w, profile: CompoundProfile) -> np.ndarray:
    """Time-invariant vegetation cover: a sum of anisotropic Gaussian blobs.

    Texture coarsens from east to west, so different sub-regions of the map
    have different spatial statistics.
    """
    def sigma_at(col):
        u = col / max(w - 1, 1)
        return profile.blob_scale * (_SIGMA_WEST + (_SIGMA_EAST - _SIGMA_WEST) * u)

    n_candidates = int(profile.blob_density * h * w / 1000)
    min_sigma = profile.blob_scale * min(_SIGMA_WEST, _SIGMA_EAST)
    rows = rng.uniform(0, h, n_candidates)
    cols = rng.uniform(0, w, n_candidates)
    accept = rng.uniform(0, 1, n_candidates)
    log_ratio = rng.normal(0.0, 0.45, n_candidates)
    theta = rng.uniform(0, np.pi, n_candidates)
    amp = np.exp(rng.normal(0.0, profile.amplitude_sd, n_candidates))

    cover = np.zeros((h, w))
    for k in range(n_candidates):
        sig = sigma_at(cols[k])
        if accept[k] > (min_sigma / sig) ** 2:
            continue
        s_major, s_minor = sig * np.exp(0.5 * log_ratio[k]), sig * np.exp(-0.5 * log_ratio[k])
        reach = int(np.ceil(4 * s_major))
        r0, r1 = max(int(rows[k]) - reach, 0), min(int(rows[k]) + reach + 1, h)
        c0, c1 = max(int(cols[k]) - reach, 0), min(int(cols[k]) + reach + 1, w)
        dy = (np.arange(r0, r1) + 0.5 - rows[k])[:, None]
        dx = (np.arange(c0, c1) + 0.5 - cols[k])[None, :]
        ct, st = np.cos(theta[k]), np.sin(theta[k])
        u = (ct * dx + st * dy) / s_major
        v = (-st * dx + ct * dy) / s_minor
        cover[r0:r1, c0:c1] += amp[k] * np.exp(-0.5 * (u * u + v * v))
    return cover + 1e-300


def _smooth_noise(rng, h, w, n_waves=4, amplitude=0.35) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    field_ = np.zeros((h, w))
    for _ in range(n_waves):
        ky, kx = rng.uniform(0.5, 3.0, 2) * 2 * np.pi / np.array([h, w])
        field_ += np.sin(ky * yy + kx * xx + rng.uniform(0, 2 * np.pi))
    return amplitude * field_ / np.sqrt(n_waves)


def synth_emissions(seed: int, n_maps: int, dims=(256, 512), compound_profile="isoprene",
                    cell_size=0.25, lat_south=None, lon_west=None) -> list:
    """Generate a deterministic monthly corpus of sparse, wide-range emission maps.

    Every map shares one blob layout (the vegetation), modulated by a
    hemisphere-dependent seasonal cycle and a smooth interannual anomaly. Each
    map keeps a random share in [0.02, 0.6] of its cells as emitters; their
    values span 1e-30 up to about 1e-9 on a log scale that rises towards blob
    centres. Maps are spread evenly over 2000-01 .. 2020-12.
    """
    h, w = dims
    if h < PATCH_SIZE or w < PATCH_SIZE:
        raise DomainError(f"synthetic maps must be at least {PATCH_SIZE}x{PATCH_SIZE}, got {dims}")
    if compound_profile not in COMPOUND_PROFILES:
        raise DomainError(f"unknown compound profile {compound_profile!r}; expected one of {COMPOUNDS}")
    profile = COMPOUND_PROFILES[compound_profile]
    rng = np.random.default_rng(seed)
    lat_south = -h * cell_size / 2 if lat_south is None else lat_south
    lon_west = -w * cell_size / 2 if lon_west is None else lon_west
    lat_bounds = (lat_south, lat_south + h * cell_size)
    lon_bounds = (lon_west, lon_west + w * cell_size)

    cover = _blob_layout(rng, h, w, profile)
    row_lat = lat_bounds[1] - (np.arange(h) + 0.5) * cell_size
    hemisphere = np.tanh(row_lat / 15.0)[:, None]

    maps = []
    for k in range(n_maps):
        month_index = k * CALENDAR_MONTHS // max(n_maps, 1)
        year = CALENDAR_START.year + month_index // 12
        month = month_index % 12 + 1
        season = np.exp(0.8 * hemisphere * np.cos(2 * np.pi * (month - 7) / 12))
        field_ = cover * season * np.exp(_smooth_noise(rng, h, w))
        frac = rng.uniform(0.02, 0.6)
        tau = np.quantile(field_, 1.0 - frac)
        peak = field_.max()
        mask = field_ > tau
        r = np.zeros_like(field_)
        r[mask] = np.log(field_[mask] / tau) / np.log(peak / tau)
        top = -9.0 - rng.uniform(*profile.peak_decades)
        logv = -30.0 + (top + 30.0) * np.clip(r, 0.0, 1.0) ** profile.value_gamma
        values = np.where(mask, 10.0 ** logv, 0.0)
        maps.append(EmissionGrid(to_envelope(values), lat_bounds, lon_bounds,
                                 Timestamp(year, month), compound_profile))
    return maps


# --- manifest ---------------------------------------------------------------

MANIFEST_HEADER = "# pair-id, lr-path, hr-path, alpha, year, month, compound, split"


@dataclass
class ManifestEntry:
    pair_id: str
    lr_path: str
    hr_path: str
    alpha: int
    year: int
    month: int
    compound: str
    split: str

    def line(self) -> str:
        return ", ".join(str(x) for x in (self.pair_id, self.lr_path, self.hr_path, self.alpha,
                                          self.year, self.month, self.compound, self.split))


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    root: str = "."

    def by_split(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    def resolve(self, rel: str) -> str:
        return rel if os.path.isabs(rel) else os.path.join(self.root, rel)

    def load_pairs(self, split: str) -> list:
        pairs = []
        for e in self.by_split(split):
            lr, hr = read_grid(self.resolve(e.lr_path)), read_grid(self.resolve(e.hr_path))
            source, row, col = _parse_pair_id(e.pair_id)
            pairs.append(PatchPair(lr, hr, e.alpha, Origin(source, row, col)))
        return pairs

    def load_split(self) -> DatasetSplit:
        protocols = {e.split for e in self.entries}
        return DatasetSplit(self.load_pairs("train"), self.load_pairs("validation"),
                            self.load_pairs("test"), ",".join(sorted(protocols)))


def _parse_pair_id(pair_id: str) -> Origin:
    try:
        source, r, c = pair_id.rsplit("_", 2)
        return Origin(source, int(r.lstrip("r")), int(c.lstrip("c")))
    except ValueError:
        return Origin(pair_id, 0, 0)


def write_manifest(manifest: Manifest, path) -> None:
    lines = [MANIFEST_HEADER] + [e.line() for e in manifest.entries]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest {path}: {exc}") from exc


def read_manifest(path) -> Manifest:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for n, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 8:
            raise FormatError(f"{path}:{n}: expected 8 fields, got {len(fields)}")
        pid, lr, hr, alpha, year, month, compound, split = fields
        try:
            entries.append(ManifestEntry(pid, lr, hr, int(alpha), int(year), int(month), compound, split))
        except ValueError as exc:
            raise FormatError(f"{path}:{n}: {exc}") from exc
        if split not in SPLITS:
            raise FormatError(f"{path}:{n}: unknown split {split!r}")
    return Manifest(entries, os.path.dirname(os.path.abspath(path)))


def write_pair_files(split: DatasetSplit, out_dir) -> Manifest:
    """Write every pair of ``split`` as EMG1 files under ``out_dir`` and return the manifest."""
    os.makedirs(os.path.join(out_dir, "pairs"), exist_ok=True)
    entries = []
    for name, pairs in split.parts().items():
        for p in pairs:
            lr_rel = os.path.join("pairs", f"{p.pair_id}_lr.emg")
            hr_rel = os.path.join("pairs", f"{p.pair_id}_hr.emg")
            write_grid(p.lr, os.path.join(out_dir, lr_rel))
            write_grid(p.hr, os.path.join(out_dir, hr_rel))
            entries.append(ManifestEntry(p.pair_id, lr_rel, hr_rel, p.alpha, p.timestamp.year,
                                         p.timestamp.month, p.compound, name))
    return Manifest(entries, os.path.abspath(out_dir))
