"""Observing-system generator: coverage statistics, sensor algebra, determinism."""

import numpy as np
import pytest

from ocfill import synth
from ocfill.synth import (TruthConfig, CloudConfig, SensorConfig, SensorSpec,
                          gen_truth, gen_cloud_mask, gen_sensor_mask,
                          gen_dataset, cloud_target_ratio)


SMALL = dict(T=40, H=24, W=24)


def test_truth_determinism():
    cfg = TruthConfig(**SMALL)
    a = gen_truth(cfg, 7)
    b = gen_truth(cfg, 7)
    assert a.values.tobytes() == b.values.tobytes()
    c = gen_truth(cfg, 8)
    assert a.values.tobytes() != c.values.tobytes()


def test_truth_constant_when_degenerate():
    cfg = TruthConfig(**SMALL, n_blobs=0, background_amp=0.0, seasonal_amp=0.0)
    f = gen_truth(cfg, 3)
    vals = f.values[f.valid_mask]
    assert np.all(vals == vals[0])


def test_truth_finite_at_sea_nan_on_land():
    f = gen_truth(TruthConfig(**SMALL), 11)
    assert np.all(np.isfinite(f.values[f.valid_mask]))
    assert np.all(np.isnan(f.values[:, f.land_mask]))
    assert f.land_mask.any() and (~f.land_mask).any()


def test_truth_temporal_autocorrelation():
    cfg = TruthConfig(T=120, H=24, W=24, decorrelation_days=10.0)
    f = gen_truth(cfg, 5)
    sea = ~f.land_mask
    series = np.array([f.values[t][sea].mean() for t in range(cfg.T)])
    a = series - series.mean()
    r1 = np.sum(a[1:] * a[:-1]) / np.sum(a * a)
    assert r1 > 0.8


def test_truth_extent_validation():
    with pytest.raises(ValueError):
        TruthConfig(T=4, H=24, W=24)
    with pytest.raises(ValueError):
        TruthConfig(T=40, H=24, W=24, decorrelation_days=0.5)


def test_truth_value_range():
    cfg = TruthConfig(**SMALL)
    f = gen_truth(cfg, 9)
    vals = f.values[f.valid_mask]
    assert vals.min() >= cfg.level_mean - 0.7001
    assert vals.max() <= cfg.level_mean + 0.7001


# ---------------------------------------------------------------------------
# clouds

def test_cloud_ratio_band():
    cfg = CloudConfig()
    land = np.zeros((32, 32), bool)
    land[:3] = True
    T = 120
    valid = gen_cloud_mask(cfg, 3, T, 32, 32, land)
    sea_n = (~land).sum()
    for t in range(T):
        target = float(np.clip(cloud_target_ratio(cfg, t), 0, 1))
        achieved = 1.0 - valid[t][~land].sum() / sea_n
        assert abs(achieved - target) <= 0.05, (t, target, achieved)
    assert not valid[:, land].any()


def test_cloud_extremes():
    land = np.zeros((16, 16), bool)
    clear = gen_cloud_mask(CloudConfig(ratio_low=0.0, ratio_high=0.0),
                           1, 4, 16, 16, land)
    assert clear.all()
    overcast = gen_cloud_mask(CloudConfig(ratio_low=1.0, ratio_high=1.0),
                              1, 4, 16, 16, land)
    assert not overcast.any()


def test_cloud_seasonal_amplitude_recovered():
    # regress monthly mean missing ratios on the seasonal sinusoid over
    # 24 simulated months
    cfg = CloudConfig()
    land = np.zeros((24, 24), bool)
    T = 730
    valid = gen_cloud_mask(cfg, 12, T, 24, 24, land)
    sea_n = (~land).sum()
    missing = 1.0 - valid.reshape(T, -1).sum(axis=1) / sea_n
    t = np.arange(T)
    X = np.column_stack([np.ones(T), np.cos(2 * np.pi * t / cfg.period_days)])
    beta = np.linalg.lstsq(X, missing, rcond=None)[0]
    mid = 0.5 * (cfg.ratio_low + cfg.ratio_high)
    amp = 0.5 * (cfg.ratio_high - cfg.ratio_low)
    assert abs(beta[0] - mid) < 0.05
    assert abs(beta[1] - amp) < 0.05


def test_cloud_determinism():
    land = np.zeros((16, 16), bool)
    a = gen_cloud_mask(CloudConfig(), 4, 10, 16, 16, land)
    b = gen_cloud_mask(CloudConfig(), 4, 10, 16, 16, land)
    np.testing.assert_array_equal(a, b)


def test_cloud_ratio_validation():
    with pytest.raises(ValueError):
        CloudConfig(ratio_low=0.5, ratio_high=0.2)


# ---------------------------------------------------------------------------
# sensors

def make_valid(T, H, W, land):
    return np.broadcast_to(~land, (T, H, W)).copy()


def test_sensor_union_matches_validity():
    land = np.zeros((24, 24), bool)
    land[:2] = True
    cloud = gen_cloud_mask(CloudConfig(), 5, 20, 24, 24, land)
    sd = gen_sensor_mask(SensorConfig(), 5, cloud, land)
    np.testing.assert_array_equal(sd.sensors != 0, cloud)


def test_sensor_bits_only_on_valid():
    land = np.zeros((16, 16), bool)
    cloud = gen_cloud_mask(CloudConfig(), 9, 12, 16, 16, land)
    sd = gen_sensor_mask(SensorConfig(), 9, cloud, land)
    assert not np.any((sd.sensors != 0) & ~cloud)


def test_single_full_sensor_everywhere():
    land = np.zeros((12, 12), bool)
    valid = make_valid(6, 12, 12, land)
    cfg = SensorConfig(specs=[SensorSpec("only", 1.0, 0.0, 1)])
    sd = gen_sensor_mask(cfg, 1, valid, land)
    np.testing.assert_array_equal((sd.sensors & 1) != 0, valid)


def test_revisit_two_alternates():
    land = np.zeros((12, 12), bool)
    valid = make_valid(6, 12, 12, land)
    cfg = SensorConfig(specs=[
        SensorSpec("full", 1.0, 0.0, 1),
        SensorSpec("alt", 1.0, 0.0, 2),
    ])
    sd = gen_sensor_mask(cfg, 1, valid, land)
    bit = 1 << 1
    # second sensor active only on days matching its phase (index % revisit)
    active_days = [t for t in range(6) if (sd.sensors[t] & bit).any()]
    assert active_days == [t for t in range(6) if t % 2 == 1]


def test_wide_swath_covers_90pct_of_sea():
    land = np.zeros((32, 32), bool)
    land[:4] = True
    valid = make_valid(4, 32, 32, land)  # cloud-free: attribution = geometry
    sd = gen_sensor_mask(SensorConfig(), 3, valid, land)
    wide_bit = 1 << sd.sensor_names.index(synth.WIDE_SWATH_SENSOR)
    sea_n = (~land).sum()
    for t in range(4):
        cover = ((sd.sensors[t] & wide_bit) != 0)[~land].sum() / sea_n
        assert cover >= 0.90, (t, cover)


def test_no_active_sensor_rejected():
    land = np.zeros((8, 8), bool)
    valid = make_valid(3, 8, 8, land)
    cfg = SensorConfig(specs=[SensorSpec("sparse", 1.0, 0.0, 3)])
    with pytest.raises(ValueError, match="no sensor active"):
        gen_sensor_mask(cfg, 1, valid, land)


def test_dataset_composition():
    tcfg = TruthConfig(**SMALL)
    truth, observed = gen_dataset(tcfg, CloudConfig(), SensorConfig(), 21)
    assert observed.sensors is not None
    assert observed.sensor_names == SensorConfig().names()
    assert not np.any(observed.valid_mask & ~truth.valid_mask)
    np.testing.assert_array_equal(observed.sensors != 0, observed.valid_mask)
    # observed values agree with the truth where kept
    np.testing.assert_array_equal(observed.values[observed.valid_mask],
                                  truth.values[observed.valid_mask])
