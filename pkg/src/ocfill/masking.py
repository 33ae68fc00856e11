"""Observation sub-sampling: random pixels, random patches, sensor subsets.

Each strategy turns a gappy field into an even gappier observation set; the
complement of the kept pixels within the field's validity is the evaluation
domain. Randomness comes from counter-based streams keyed by (seed, frame),
so masks are reproducible regardless of iteration order or thread count.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import missing_ratio

STRATEGIES = ("random_pixel", "patch", "sensor_subset", "none")


@dataclass
class MaskSpec:
    strategy: str = "patch"
    remove_rate: float = 0.5
    min_side: int = 5
    max_side: int = 25
    exempt_missing_threshold: float = 0.75
    sensor_ids: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy in ("random_pixel", "patch"):
            if not 0.0 < self.remove_rate < 1.0:
                raise ValueError("remove_rate must be in (0, 1)")
        if self.strategy == "patch":
            if not 1 <= self.min_side <= self.max_side:
                raise ValueError("need 1 <= min_side <= max_side")
        if self.strategy == "sensor_subset" and not self.sensor_ids:
            raise ValueError("sensor_subset needs a non-empty sensor_ids")

    def reseeded(self, seed):
        return MaskSpec(strategy=self.strategy, remove_rate=self.remove_rate,
                        min_side=self.min_side, max_side=self.max_side,
                        exempt_missing_threshold=self.exempt_missing_threshold,
                        sensor_ids=list(self.sensor_ids), seed=int(seed))

    def label(self):
        if self.strategy == "random_pixel":
            return f"random_pixel({self.remove_rate:g})"
        if self.strategy == "patch":
            return f"patch({self.remove_rate:g},{self.min_side}-{self.max_side})"
        if self.strategy == "sensor_subset":
            return "sensor_subset(" + "+".join(map(str, self.sensor_ids)) + ")"
        return "none"


@dataclass
class ObservationMask:
    keep: np.ndarray  # (T,H,W) bool, subset of the field's valid_mask


def _frame_rng(seed, t):
    # counter-based stream keyed by (seed, frame); independent of call order
    return np.random.Generator(np.random.Philox(key=np.uint64([seed, t])))


def generate_mask(f, spec, sensor_mask=None):
    """Dispatch on spec.strategy; 'none' keeps every valid pixel."""
    if spec.strategy == "random_pixel":
        return gen_random_pixel_mask(f, spec)
    if spec.strategy == "patch":
        return gen_patch_mask(f, spec)
    if spec.strategy == "sensor_subset":
        if sensor_mask is None:
            raise ValueError("sensor_subset strategy needs a sensor mask")
        return apply_sensor_subset(f, sensor_mask, spec)
    return ObservationMask(keep=f.valid_mask.copy())


def gen_random_pixel_mask(f, spec):
    """Remove each valid pixel independently with probability remove_rate."""
    T, H, W = f.shape
    keep = np.zeros((T, H, W), dtype=bool)
    for t in range(T):
        u = _frame_rng(spec.seed, t).random((H, W))
        keep[t] = f.valid_mask[t] & (u >= spec.remove_rate)
    return ObservationMask(keep=keep)


def gen_patch_mask(f, spec):
    """Blank random rectangles per frame until remove_rate of the valid pixels
    is gone; frames already missing >= the exemption threshold pass through."""
    T, H, W = f.shape
    keep = f.valid_mask.copy()
    for t in range(T):
        valid = f.valid_mask[t]
        n_valid = int(valid.sum())
        if n_valid == 0 or missing_ratio(f, t) >= spec.exempt_missing_threshold:
            continue
        rng = _frame_rng(spec.seed, t)
        removed = np.zeros((H, W), dtype=bool)
        target = spec.remove_rate * n_valid
        n_removed = 0
        while n_removed < target:
            sh = int(rng.integers(spec.min_side, spec.max_side + 1))
            sw = int(rng.integers(spec.min_side, spec.max_side + 1))
            i = int(rng.integers(0, H))
            j = int(rng.integers(0, W))
            removed[i:i + sh, j:j + sw] = True  # clips at borders, may overlap
            n_removed = int((removed & valid).sum())
        keep[t] = valid & ~removed
    return ObservationMask(keep=keep)


class SensorMaskData:
    """Per-pixel bitmask of contributing sensors plus the name->bit order."""

    def __init__(self, sensors, sensor_names):
        self.sensors = np.asarray(sensors)
        self.sensor_names = list(sensor_names)
        if len(self.sensor_names) > 16:
            raise ValueError("at most 16 sensors fit the u16 bitmask")

    def bits_for(self, sensor_ids):
        mask = 0
        for sid in sensor_ids:
            if sid not in self.sensor_names:
                raise ValueError(f"unknown sensor {sid!r}")
            mask |= 1 << self.sensor_names.index(sid)
        return np.uint16(mask)


def apply_sensor_subset(f, sensor_mask, spec):
    """Keep valid pixels that at least one subset sensor contributed to."""
    bits = sensor_mask.bits_for(spec.sensor_ids)
    keep = f.valid_mask & ((sensor_mask.sensors & bits) != 0)
    return ObservationMask(keep=keep)


def split_obs_target(f, obs_mask):
    """(observation field, evaluation domain) from a field and a keep-mask.

    The evaluation domain is every valid pixel that was withheld.
    """
    keep = obs_mask.keep
    if np.any(keep & ~f.valid_mask):
        raise ValueError("mask keeps pixels that were never observed")
    obs_field = f.with_observations(keep)
    eval_domain = f.valid_mask & ~keep
    return obs_field, eval_domain
