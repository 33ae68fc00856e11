"""Field invariants, GFF container round trips, stats, and windowing."""

import datetime

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocfill.grid import (SpatioTemporalField, NormStats, compute_norm_stats,
                         standardize, destandardize, extract_windows,
                         missing_ratio, load_field, save_field,
                         export_frame_stats, MISSING)


def make_field(rng, T=4, H=6, W=5, missing=0.3, with_sensors=False):
    land = np.zeros((H, W), bool)
    land[0, :] = True
    valid = (rng.random((T, H, W)) > missing) & ~land[None]
    vals = np.where(valid, rng.normal(-2.5, 0.3, (T, H, W)), MISSING)
    sensors = None
    names = []
    if with_sensors:
        sensors = np.where(valid, rng.integers(1, 4, (T, H, W)), 0).astype(np.uint16)
        names = ["A", "B"]
    return SpatioTemporalField(values=vals.astype(np.float32),
                               valid_mask=valid, land_mask=land,
                               sensors=sensors, sensor_names=names)


# ---------------------------------------------------------------------------
# invariants

def test_valid_over_land_rejected(rng):
    land = np.zeros((3, 3), bool)
    land[1, 1] = True
    valid = np.ones((2, 3, 3), bool)
    vals = np.zeros((2, 3, 3), np.float32)
    with pytest.raises(ValueError, match="overlaps land"):
        SpatioTemporalField(values=vals, valid_mask=valid, land_mask=land)


def test_value_at_invalid_position_rejected():
    land = np.zeros((2, 2), bool)
    valid = np.zeros((1, 2, 2), bool)
    vals = np.ones((1, 2, 2), np.float32)  # finite but flagged invalid
    with pytest.raises(ValueError, match="non-NaN"):
        SpatioTemporalField(values=vals, valid_mask=valid, land_mask=land)


def test_minimum_extents():
    with pytest.raises(ValueError):
        SpatioTemporalField(values=np.zeros((0, 1, 1), np.float32),
                            valid_mask=np.zeros((0, 1, 1), bool),
                            land_mask=np.zeros((1, 1), bool))


# ---------------------------------------------------------------------------
# GFF round trip

def test_gff_roundtrip_bit_exact(tmp_path, rng):
    f = make_field(rng, with_sensors=True)
    p = tmp_path / "f.gff"
    save_field(f, p)
    g = load_field(p)
    assert f.values.tobytes() == g.values.tobytes()
    np.testing.assert_array_equal(f.valid_mask, g.valid_mask)
    np.testing.assert_array_equal(f.land_mask, g.land_mask)
    np.testing.assert_array_equal(f.sensors, g.sensors)
    assert f.sensor_names == g.sensor_names
    assert f.time_origin == g.time_origin
    # byte-identical file on re-save
    p2 = tmp_path / "g.gff"
    save_field(g, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_gff_one_pixel_roundtrip(tmp_path):
    f = SpatioTemporalField(values=np.full((1, 1, 1), -2.0, np.float32),
                            valid_mask=np.ones((1, 1, 1), bool),
                            land_mask=np.zeros((1, 1), bool))
    save_field(f, tmp_path / "p.gff")
    g = load_field(tmp_path / "p.gff")
    assert g.values[0, 0, 0] == np.float32(-2.0)


def test_gff_truncated_payload(tmp_path, rng):
    p = tmp_path / "f.gff"
    save_field(make_field(rng), p)
    blob = p.read_bytes()
    p.write_bytes(blob[:-5])
    with pytest.raises(ValueError, match="truncated"):
        load_field(p)


def test_gff_bad_magic(tmp_path):
    p = tmp_path / "f.gff"
    p.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(ValueError, match="malformed header"):
        load_field(p)


def test_gff_land_overlap_rejected(tmp_path, rng):
    f = make_field(rng)
    p = tmp_path / "f.gff"
    save_field(f, p)
    blob = bytearray(p.read_bytes())
    # flip a valid_mask byte that sits on the land row
    import struct, json
    hlen = struct.unpack_from("<I", blob, 4)[0]
    header = json.loads(blob[8:8 + hlen].decode())
    T, H, W = header["dims"]
    valid_off = 8 + hlen + 4 * T * H * W
    blob[valid_off] = 1  # (t=0, h=0, w=0) is land
    # also give it a finite value so only the land invariant trips
    struct.pack_into("<f", blob, 8 + hlen, -2.0)
    p.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="overlaps land"):
        load_field(p)


def test_gff_unwritable_target(tmp_path, rng):
    f = make_field(rng)
    blocker = tmp_path / "blocker"
    blocker.write_text("plain file, not a directory")
    with pytest.raises(OSError):
        save_field(f, blocker / "f.gff")


# ---------------------------------------------------------------------------
# norm stats

def test_norm_stats_two_point():
    vals = np.full((1, 1, 3), np.nan, np.float32)
    vals[0, 0, 0] = 1.0
    vals[0, 0, 1] = 3.0
    valid = np.array([[[True, True, False]]])
    f = SpatioTemporalField(values=vals, valid_mask=valid,
                            land_mask=np.zeros((1, 3), bool))
    s = compute_norm_stats(f)
    assert s.mean == pytest.approx(2.0)
    assert s.std == pytest.approx(1.0)  # population formula


def test_norm_stats_constant_rejected():
    vals = np.full((1, 2, 2), 5.0, np.float32)
    f = SpatioTemporalField(values=vals, valid_mask=np.ones((1, 2, 2), bool),
                            land_mask=np.zeros((2, 2), bool))
    with pytest.raises(ValueError, match="zero standard deviation"):
        compute_norm_stats(f)


def test_norm_stats_matches_flat_oracle(rng):
    f = make_field(rng, T=6, H=9, W=8, missing=0.4)
    s = compute_norm_stats(f, (1, 5))
    flat = [float(v) for t in range(1, 5)
            for v in f.values[t][f.valid_mask[t]]]
    assert s.mean == pytest.approx(np.mean(flat), rel=1e-12)
    assert s.std == pytest.approx(np.std(flat), rel=1e-9)


def test_standardize_roundtrip(rng):
    f = make_field(rng)
    s = compute_norm_stats(f)
    g = destandardize(standardize(f, s), s)
    v0 = f.values[f.valid_mask]
    v1 = g.values[g.valid_mask]
    assert np.max(np.abs(v1 - v0) / np.abs(v0)) < 1e-6
    assert np.all(np.isnan(g.values[~g.valid_mask]))


def test_standardize_mean_maps_to_zero():
    vals = np.full((1, 1, 2), np.nan, np.float32)
    vals[0, 0, 0] = -2.0
    vals[0, 0, 1] = -3.0
    f = SpatioTemporalField(values=vals, valid_mask=np.ones((1, 1, 2), bool),
                            land_mask=np.zeros((1, 2), bool))
    g = standardize(f, NormStats(mean=-2.0, std=0.5))
    assert g.values[0, 0, 0] == pytest.approx(0.0)


def test_identity_stats_is_identity(rng):
    f = make_field(rng)
    g = standardize(f, NormStats(mean=0.0, std=1.0))
    np.testing.assert_allclose(g.values[g.valid_mask], f.values[f.valid_mask],
                               rtol=1e-6)


# ---------------------------------------------------------------------------
# windows

def test_single_window_when_L_equals_T(rng):
    f = make_field(rng, T=4)
    ws = extract_windows(f, f, window_len=4)
    assert len(ws) == 1
    np.testing.assert_array_equal(ws[0].target_mask, f.valid_mask)


def test_window_stride(rng):
    f = make_field(rng, T=10)
    ws = extract_windows(f, f, window_len=5, stride=5)
    assert [w.center_time for w in ws] == [2, 7]


@given(T=st.integers(1, 40), L=st.integers(1, 40), stride=st.integers(1, 7))
@settings(max_examples=40, deadline=None)
def test_window_count_closed_form(T, L, stride):
    if L > T:
        return
    land = np.zeros((2, 2), bool)
    f = SpatioTemporalField(values=np.zeros((T, 2, 2), np.float32),
                            valid_mask=np.ones((T, 2, 2), bool),
                            land_mask=land)
    ws = extract_windows(f, f, L, stride)
    assert len(ws) == (T - L) // stride + 1


def test_window_requires_obs_subset(rng):
    f = make_field(rng)
    obs = make_field(np.random.default_rng(99))  # different validity
    if not np.any(obs.valid_mask & ~f.valid_mask):
        pytest.skip("random fields happened to nest")
    with pytest.raises(ValueError, match="outside target"):
        extract_windows(obs, f, 2)


def test_window_too_long_rejected(rng):
    f = make_field(rng, T=3)
    with pytest.raises(ValueError):
        extract_windows(f, f, 4)


# ---------------------------------------------------------------------------
# missing ratio

def test_missing_ratio_full_and_empty():
    land = np.zeros((2, 2), bool)
    land[0, 0] = True
    valid_full = np.ones((1, 2, 2), bool) & ~land[None]
    f = SpatioTemporalField(
        values=np.where(valid_full, np.float32(-2), MISSING),
        valid_mask=valid_full, land_mask=land)
    assert missing_ratio(f, 0) == 0.0
    g = SpatioTemporalField(values=np.full((1, 2, 2), MISSING),
                            valid_mask=np.zeros((1, 2, 2), bool),
                            land_mask=land)
    assert missing_ratio(g, 0) == 1.0


def test_missing_ratio_half():
    land = np.zeros((1, 4), bool)
    valid = np.array([[[True, True, False, False]]])
    f = SpatioTemporalField(values=np.where(valid, np.float32(-2), MISSING),
                            valid_mask=valid, land_mask=land)
    assert missing_ratio(f, 0) == pytest.approx(0.5)


def test_missing_ratio_ignores_land(rng):
    land = np.zeros((2, 2), bool)
    land[0, :] = True  # half the grid is land
    valid = np.zeros((1, 2, 2), bool)
    valid[0, 1, 0] = True
    f = SpatioTemporalField(values=np.where(valid, np.float32(-2), MISSING),
                            valid_mask=valid, land_mask=land)
    assert missing_ratio(f, 0) == pytest.approx(0.5)  # 1 of 2 sea pixels


def test_frame_stats_csv(tmp_path, rng):
    f = make_field(rng, T=3)
    p = tmp_path / "stats.csv"
    export_frame_stats(f, p)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "t,date,missing_ratio"
    assert len(lines) == 4
    assert lines[1].startswith("0,2000-01-01,")
