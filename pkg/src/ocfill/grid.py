"""Gridded gappy field data model, value transforms, windowing, and file I/O.

Fields hold daily frames of a log10-valued quantity on a fixed lat/lon grid
with a static land mask. Missing data is double-bookkept: valid_mask is the
authoritative flag and every invalid position holds NaN, so propagation bugs
surface as either a mask/NaN disagreement or a poisoned statistic.

The GFF container is a little-endian binary format: magic "GFF1", u32 header
length, UTF-8 JSON header, then the raw arrays in declared order. Round trips
are bit-exact.
"""

import csv
import json
import struct
import datetime
from dataclasses import dataclass, field, replace

import numpy as np

GFF_MAGIC = b"GFF1"
MISSING = np.float32(np.nan)


@dataclass
class SpatioTemporalField:
    """T x H x W gridded values (float32, log10 units) with masks and metadata."""

    values: np.ndarray            # (T,H,W) float32, NaN where not valid
    valid_mask: np.ndarray        # (T,H,W) bool
    land_mask: np.ndarray         # (H,W) bool, True = land
    time_origin: datetime.date = datetime.date(2000, 1, 1)
    time_step_days: int = 1
    unit: str = "m^-1"
    log10: bool = True
    lat_bounds: tuple = (41.0, 43.5)
    lon_bounds: tuple = (3.0, 6.0)
    sensors: np.ndarray | None = None   # (T,H,W) uint16 bitmask, optional
    sensor_names: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        self.land_mask = np.asarray(self.land_mask, dtype=bool)
        validate_field(self)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_frames(self):
        return self.values.shape[0]

    def date_of(self, t):
        return self.time_origin + datetime.timedelta(days=int(t) * self.time_step_days)

    def frame_slice(self, t0, t1):
        """View-free sub-field over frames [t0, t1)."""
        sens = None if self.sensors is None else self.sensors[t0:t1].copy()
        return replace(
            self,
            values=self.values[t0:t1].copy(),
            valid_mask=self.valid_mask[t0:t1].copy(),
            land_mask=self.land_mask.copy(),
            time_origin=self.date_of(t0),
            sensors=sens,
        )

    def with_observations(self, keep):
        """Same grid, valid only where ``keep``; everything else NaN."""
        keep = np.asarray(keep, dtype=bool)
        vals = np.where(keep, self.values, MISSING).astype(np.float32)
        return replace(self, values=vals, valid_mask=keep.copy(),
                       sensors=None, sensor_names=[])


def validate_field(f):
    T, H, W = f.values.shape
    if T < 1 or H < 1 or W < 1:
        raise ValueError("field extents must be at least 1")
    if f.valid_mask.shape != (T, H, W):
        raise ValueError("valid_mask shape mismatch")
    if f.land_mask.shape != (H, W):
        raise ValueError("land_mask shape mismatch")
    if np.any(f.valid_mask & f.land_mask[None, :, :]):
        raise ValueError("valid_mask overlaps land_mask")
    if not np.all(np.isnan(f.values[~f.valid_mask])):
        raise ValueError("non-NaN value at invalid position")
    if np.any(~np.isfinite(f.values[f.valid_mask])):
        raise ValueError("non-finite value at valid position")
    if f.sensors is not None:
        if f.sensors.shape != (T, H, W):
            raise ValueError("sensors shape mismatch")
        if np.any((f.sensors != 0) & ~f.valid_mask):
            raise ValueError("sensor bits set at invalid position")


@dataclass
class NormStats:
    """Mean/std over valid pixels of the training period (population std)."""

    mean: float
    std: float


@dataclass
class WindowSample:
    """One sliding time window: gappy inputs, gappy targets, loss mask."""

    obs: np.ndarray          # (L,H,W) float, NaN gaps
    target: np.ndarray       # (L,H,W) float, NaN gaps
    target_mask: np.ndarray  # (L,H,W) bool, where the training loss applies
    obs_mask: np.ndarray     # (L,H,W) bool, observed subset
    center_time: int


# ---------------------------------------------------------------------------
# GFF container

def save_field(f, path):
    T, H, W = f.values.shape
    arrays = ["values", "valid_mask", "land_mask"]
    if f.sensors is not None:
        arrays.append("sensors")
    header = {
        "dims": [T, H, W],
        "dtype": "f32le",
        "unit": f.unit,
        "log10": bool(f.log10),
        "time_origin": f.time_origin.isoformat(),
        "time_step_days": f.time_step_days,
        "lat_bounds": list(f.lat_bounds),
        "lon_bounds": list(f.lon_bounds),
        "arrays": arrays,
    }
    if f.sensor_names:
        header["sensor_names"] = list(f.sensor_names)
    hjson = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GFF_MAGIC)
        fh.write(struct.pack("<I", len(hjson)))
        fh.write(hjson)
        fh.write(f.values.astype("<f4").tobytes())
        fh.write(f.valid_mask.astype(np.uint8).tobytes())
        fh.write(f.land_mask.astype(np.uint8).tobytes())
        if f.sensors is not None:
            fh.write(f.sensors.astype("<u2").tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != GFF_MAGIC:
        raise ValueError(f"{path}: malformed header (bad magic or unsupported version)")
    (hlen,) = struct.unpack_from("<I", blob, 4)
    if 8 + hlen > len(blob):
        raise ValueError(f"{path}: malformed header (truncated)")
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: malformed header ({e})") from None
    if header.get("dtype") != "f32le":
        raise ValueError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    T, H, W = (int(d) for d in header["dims"])
    n = T * H * W
    sizes = {"values": 4 * n, "valid_mask": n, "land_mask": H * W, "sensors": 2 * n}
    arrays = header["arrays"]
    off = 8 + hlen
    raw = {}
    for name in arrays:
        if name not in sizes:
            raise ValueError(f"{path}: unknown array {name!r}")
        end = off + sizes[name]
        if end > len(blob):
            raise ValueError(f"{path}: payload truncated in {name!r}")
        raw[name] = blob[off:end]
        off = end
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes after payload")
    values = np.frombuffer(raw["values"], dtype="<f4").reshape(T, H, W).astype(np.float32)
    valid = np.frombuffer(raw["valid_mask"], dtype=np.uint8).reshape(T, H, W) != 0
    land = np.frombuffer(raw["land_mask"], dtype=np.uint8).reshape(H, W) != 0
    sensors = None
    if "sensors" in raw:
        sensors = np.frombuffer(raw["sensors"], dtype="<u2").reshape(T, H, W).copy()
    return SpatioTemporalField(
        values=values.copy(),
        valid_mask=valid,
        land_mask=land,
        time_origin=datetime.date.fromisoformat(header["time_origin"]),
        time_step_days=int(header["time_step_days"]),
        unit=header["unit"],
        log10=bool(header["log10"]),
        lat_bounds=tuple(header["lat_bounds"]),
        lon_bounds=tuple(header["lon_bounds"]),
        sensors=sensors,
        sensor_names=list(header.get("sensor_names", [])),
    )


# ---------------------------------------------------------------------------
# statistics and transforms

def compute_norm_stats(f, time_range=None):
    """Population mean/std over valid, non-land pixels of frames [t0, t1)."""
    t0, t1 = (0, f.n_frames) if time_range is None else time_range
    vals = f.values[t0:t1][f.valid_mask[t0:t1]]
    if vals.size < 2:
        raise ValueError("norm stats need at least 2 valid pixels")
    mean = float(np.mean(vals, dtype=np.float64))
    std = float(np.std(vals, dtype=np.float64))  # population (1/N)
    if std == 0.0:
        raise ValueError("constant field: zero standard deviation")
    return NormStats(mean=mean, std=std)


def standardize(f, stats):
    vals = np.where(f.valid_mask, (f.values - stats.mean) / stats.std, MISSING)
    return replace(f, values=vals.astype(np.float32))


def destandardize(f, stats):
    vals = np.where(f.valid_mask, f.values * stats.std + stats.mean, MISSING)
    return replace(f, values=vals.astype(np.float32))


def missing_ratio(f, t):
    """Fraction of non-land pixels without a valid observation at frame t."""
    sea = ~f.land_mask
    n_sea = int(sea.sum())
    if n_sea == 0:
        return 0.0
    return float((sea & ~f.valid_mask[t]).sum()) / n_sea


def extract_windows(obs_field, target_field, window_len, stride=1):
    """Sliding windows over time; target_mask is the target validity."""
    T = target_field.n_frames
    L = int(window_len)
    if L > T:
        raise ValueError(f"window length {L} exceeds {T} frames")
    if np.any(obs_field.valid_mask & ~target_field.valid_mask):
        raise ValueError("observations outside target validity")
    out = []
    for t0 in range(0, T - L + 1, stride):
        sl = slice(t0, t0 + L)
        out.append(WindowSample(
            obs=obs_field.values[sl].astype(np.float64),
            target=target_field.values[sl].astype(np.float64),
            target_mask=target_field.valid_mask[sl].copy(),
            obs_mask=obs_field.valid_mask[sl].copy(),
            center_time=t0 + L // 2,
        ))
    return out


def export_frame_stats(f, path):
    """CSV of per-frame coverage: t, date, missing_ratio."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "date", "missing_ratio"])
        for t in range(f.n_frames):
            w.writerow([t, f.date_of(t).isoformat(), f"{missing_ratio(f, t):.6g}"])
