"""Synthetic observing system: ground truth, cloud gaps, multi-sensor swaths.

Every acceptance experiment runs against generated data with known truth.
The truth field is a sum of advected Gaussian blobs, a spectrally red noise
background evolving as an AR(1) process, and a seasonal cycle, affinely
mapped into a plausible log10 backscatter range. Clouds are persistent
random ellipses steered to a seasonal per-day coverage target; sensors are
angled swaths with revisit periods and thin instrument-gap stripes.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import SpatioTemporalField, MISSING
from .masking import SensorMaskData

SENSOR_NAMES = ["OLCI-S3A", "MODIS-Aqua", "VIIRS-JPSS1", "VIIRS-SNPP", "OLCI-S3B"]
WIDE_SWATH_SENSOR = "VIIRS-JPSS1"


@dataclass
class TruthConfig:
    T: int = 730
    H: int = 128
    W: int = 128
    n_blobs: int = 12
    blob_amp: tuple = (0.25, 0.9)
    blob_width: tuple = (4.0, 14.0)
    flow_speed: float = 1.2          # px/day advection of blob centres
    background_slope: float = 2.2    # spectral power-law exponent
    background_amp: float = 0.55
    decorrelation_days: float = 10.0
    seasonal_amp: float = 0.25
    level_mean: float = -2.5         # log10 of the physical unit
    level_range: tuple = (-0.5, 0.5)

    def __post_init__(self):
        if min(self.T, self.H, self.W) < 8:
            raise ValueError("extents must be at least 8")
        if self.decorrelation_days < 1:
            raise ValueError("decorrelation scale must be >= 1 day")


@dataclass
class CloudConfig:
    ratio_low: float = 0.10
    ratio_high: float = 0.80
    period_days: float = 365.0
    persistence: float = 0.6         # day-to-day ellipse morphing
    max_ellipse_frac: float = 0.03   # caps per-ellipse overshoot

    def __post_init__(self):
        if not (0.0 <= self.ratio_low <= self.ratio_high <= 1.0):
            raise ValueError("cloud ratios must satisfy 0 <= low <= high <= 1")


@dataclass
class SensorSpec:
    name: str
    swath_frac: float      # fraction of the domain diagonal covered per day
    angle_deg: float
    revisit_days: int
    gap_period: int = 0    # thin dropout stripes (0 = none)
    gap_width: int = 0

    def __post_init__(self):
        if self.revisit_days < 1:
            raise ValueError("revisit period must be >= 1 day")


@dataclass
class SensorConfig:
    specs: list = field(default_factory=lambda: [
        SensorSpec("OLCI-S3A", 0.38, 25.0, 2),
        SensorSpec("MODIS-Aqua", 0.62, -40.0, 1, gap_period=24, gap_width=3),
        SensorSpec("VIIRS-JPSS1", 0.98, 62.0, 1, gap_period=30, gap_width=1),
        SensorSpec("VIIRS-SNPP", 0.60, 58.0, 1, gap_period=22, gap_width=2),
        SensorSpec("OLCI-S3B", 0.38, 115.0, 2),
    ])

    def names(self):
        return [s.name for s in self.specs]


# ---------------------------------------------------------------------------
# ground truth

def _coastline(H, W, rng):
    """Land band along the top edge with a wiggly boundary."""
    x = np.arange(W)
    depth = H * (0.08 + 0.10 * (0.5 + 0.5 * np.sin(2 * np.pi * x / W * 2.3 + rng.uniform(0, 2 * np.pi))))
    depth += rng.normal(0, H * 0.01, W)
    depth = np.maximum(1, depth.astype(int))
    land = np.zeros((H, W), dtype=bool)
    for j in range(W):
        land[:depth[j], j] = True
    return land


def _red_noise_frame(H, W, slope, rng):
    """Spatial power-law field, unit variance."""
    white = rng.standard_normal((H, W))
    f = np.fft.rfft2(white)
    ky = np.fft.fftfreq(H)[:, None]
    kx = np.fft.rfftfreq(W)[None, :]
    k = np.sqrt(ky * ky + kx * kx)
    k[0, 0] = 1.0
    f *= k ** (-slope / 2.0)
    out = np.fft.irfft2(f, s=(H, W))
    out -= out.mean()
    s = out.std()
    return out / s if s > 0 else out


def _flow(H, W, rng, speed):
    """Smooth divergence-free velocity field from a random streamfunction."""
    psi = _red_noise_frame(H, W, 3.0, rng)
    u = np.gradient(psi, axis=0)
    v = -np.gradient(psi, axis=1)
    mag = np.sqrt(u * u + v * v).mean()
    if mag > 0:
        u *= speed / mag
        v *= speed / mag
    return u, v


def gen_truth(cfg, seed):
    """Fully observed synthetic field with a coastline land mask."""
    rng = np.random.default_rng(np.random.Philox(key=np.uint64([seed, 0x7457])))
    H, W, T = cfg.H, cfg.W, cfg.T
    land = _coastline(H, W, rng)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)

    # blob ensemble advected by a static smooth flow
    u, v = _flow(H, W, rng, cfg.flow_speed)
    cy = rng.uniform(0, H, cfg.n_blobs)
    cx = rng.uniform(0, W, cfg.n_blobs)
    amp = rng.uniform(*cfg.blob_amp, cfg.n_blobs) * rng.choice([-1.0, 1.0], cfg.n_blobs)
    wid = rng.uniform(*cfg.blob_width, cfg.n_blobs)
    phase = rng.uniform(0, 2 * np.pi, cfg.n_blobs)

    rho = math.exp(-1.0 / cfg.decorrelation_days)
    bg = _red_noise_frame(H, W, cfg.background_slope, rng).copy()

    raw = np.empty((T, H, W))
    for t in range(T):
        frame = cfg.background_amp * bg
        season = cfg.seasonal_amp * np.sin(2 * np.pi * t / 365.0)
        frame = frame + season
        for b in range(cfg.n_blobs):
            a = amp[b] * (0.6 + 0.4 * np.sin(2 * np.pi * t / 180.0 + phase[b]))
            dy = (yy - cy[b] + H / 2) % H - H / 2
            dx = (xx - cx[b] + W / 2) % W - W / 2
            frame = frame + a * np.exp(-(dy * dy + dx * dx) / (2 * wid[b] ** 2))
        raw[t] = frame
        # advance blob centres along the flow (periodic wrap)
        iy = np.clip(cy.astype(int), 0, H - 1)
        ix = np.clip(cx.astype(int), 0, W - 1)
        cy = (cy + u[iy, ix]) % H
        cx = (cx + v[iy, ix]) % W
        bg = rho * bg + math.sqrt(1 - rho * rho) * _red_noise_frame(
            H, W, cfg.background_slope, rng)

    lo, hi = np.quantile(raw, [0.005, 0.995])
    span = hi - lo
    if span == 0:
        values = np.full((T, H, W), cfg.level_mean)
    else:
        r0, r1 = cfg.level_range
        values = cfg.level_mean + r0 + (raw - lo) / span * (r1 - r0)
        values = np.clip(values, cfg.level_mean + r0 - 0.2, cfg.level_mean + r1 + 0.2)

    valid = np.broadcast_to(~land, (T, H, W)).copy()
    vals = np.where(valid, values, MISSING).astype(np.float32)
    return SpatioTemporalField(values=vals, valid_mask=valid, land_mask=land)


# ---------------------------------------------------------------------------
# clouds

class _Ellipse:
    __slots__ = ("cy", "cx", "ay", "ax", "ang")

    def __init__(self, cy, cx, ay, ax, ang):
        self.cy, self.cx, self.ay, self.ax, self.ang = cy, cx, ay, ax, ang

    def raster(self, yy, xx):
        dy = yy - self.cy
        dx = xx - self.cx
        c, s = math.cos(self.ang), math.sin(self.ang)
        ry = (c * dy - s * dx) / self.ay
        rx = (s * dy + c * dx) / self.ax
        return ry * ry + rx * rx <= 1.0


def cloud_target_ratio(cfg, t):
    mid = 0.5 * (cfg.ratio_low + cfg.ratio_high)
    amp = 0.5 * (cfg.ratio_high - cfg.ratio_low)
    # winter-peaked seasonal cycle (t = 0 taken as January 1st)
    return mid + amp * math.cos(2 * np.pi * t / cfg.period_days)


def gen_cloud_mask(cfg, seed, T, H, W, land):
    """(T,H,W) validity with per-day cloud coverage on a seasonal cycle."""
    rng = np.random.default_rng(np.random.Philox(key=np.uint64([seed, 0xC10D])))
    sea = ~land
    n_sea = int(sea.sum())
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    max_area = cfg.max_ellipse_frac * H * W
    a_hi = math.sqrt(max_area / math.pi)

    def new_ellipse():
        ay = rng.uniform(0.25 * a_hi, a_hi)
        ax = max_area / math.pi / ay
        return _Ellipse(rng.uniform(0, H), rng.uniform(0, W), ay, ax,
                        rng.uniform(0, math.pi))

    pool = [new_ellipse() for _ in range(8)]
    step = (1.0 - cfg.persistence) * 0.35 * (H + W) / 2
    valid = np.empty((T, H, W), dtype=bool)
    for t in range(T):
        for e in pool:  # morph yesterday's ellipses
            e.cy = (e.cy + rng.normal(0, step)) % H
            e.cx = (e.cx + rng.normal(0, step)) % W
        target = float(np.clip(cloud_target_ratio(cfg, t), 0.0, 1.0))
        if n_sea == 0 or target >= 1.0 - 0.5 / max(n_sea, 1):
            valid[t] = False
            continue
        cloud = np.zeros((H, W), dtype=bool)
        if target > 0.0:
            covered = 0
            i = 0
            while covered < target * n_sea:
                if i >= len(pool):
                    pool.append(new_ellipse())
                cloud |= pool[i].raster(yy, xx)
                covered = int((cloud & sea).sum())
                i += 1
        valid[t] = sea & ~cloud
    return valid


# ---------------------------------------------------------------------------
# sensors

def _swath(H, W, angle_deg, frac, offset):
    """Oriented stripe covering ~frac of the domain, sweeping with offset."""
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    ang = math.radians(angle_deg)
    proj = yy * math.cos(ang) + xx * math.sin(ang)
    lo, hi = proj.min(), proj.max()
    span = hi - lo
    width = frac * span
    start = lo + ((offset * 0.37 * span) % max(span - width, 1e-9)) if frac < 1 else lo
    return (proj >= start) & (proj <= start + width)


def _gap_stripes(H, W, angle_deg, period, width):
    if period <= 0 or width <= 0:
        return np.zeros((H, W), dtype=bool)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    ang = math.radians(angle_deg + 90.0)
    proj = yy * math.cos(ang) + xx * math.sin(ang)
    return np.mod(proj, period) < width


def gen_sensor_mask(cfg, seed, cloud_valid, land):
    """Attribute every valid pixel to >= 1 sensor; returns SensorMaskData.

    The wide-swath sensor covers >= 90% of sea pixels on its active days;
    leftover valid pixels (instrument stripes etc.) are assigned to the first
    active sensor of the day so the union matches the cloud validity exactly.
    """
    T, H, W = cloud_valid.shape
    names = cfg.names()
    if WIDE_SWATH_SENSOR in names:
        for s in cfg.specs:
            if s.name == WIDE_SWATH_SENSOR and s.swath_frac < 0.9:
                raise ValueError("wide-swath sensor must cover >= 90%")
    sensors = np.zeros((T, H, W), dtype=np.uint16)
    for t in range(T):
        coverage = []
        for b, s in enumerate(cfg.specs):
            if t % s.revisit_days != (b % s.revisit_days):
                continue
            cov = _swath(H, W, s.angle_deg, s.swath_frac, seed % 97 + t)
            cov &= ~_gap_stripes(H, W, s.angle_deg, s.gap_period, s.gap_width)
            coverage.append((b, cov))
        if not coverage:
            raise ValueError(f"no sensor active on day {t}; adjust revisit periods")
        got = np.zeros((H, W), dtype=bool)
        for b, cov in coverage:
            hit = cloud_valid[t] & cov
            sensors[t][hit] |= np.uint16(1 << b)
            got |= hit
        leftover = cloud_valid[t] & ~got
        if leftover.any():
            b0 = coverage[0][0]
            sensors[t][leftover] |= np.uint16(1 << b0)
    return SensorMaskData(sensors=sensors, sensor_names=names)


def gen_dataset(truth_cfg, cloud_cfg, sensor_cfg, seed):
    """Truth field plus its cloud-masked observed counterpart with sensors."""
    truth = gen_truth(truth_cfg, seed)
    valid = gen_cloud_mask(cloud_cfg, seed, truth_cfg.T, truth_cfg.H,
                           truth_cfg.W, truth.land_mask)
    valid &= truth.valid_mask
    sensor_data = gen_sensor_mask(sensor_cfg, seed, valid, truth.land_mask)
    observed = replace(truth.with_observations(valid),
                       sensors=sensor_data.sensors,
                       sensor_names=sensor_data.sensor_names)
    return truth, observed
