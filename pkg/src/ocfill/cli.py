"""Command-line orchestration of the full experimental protocol.

Subcommands: synth, train, interpolate, eval, bench, crossmatrix, ablate.
Every command is a pure function of (config, input files, seed); reruns
reproduce outputs bit-identically apart from wall-clock columns.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import dataclasses
import datetime
import hashlib
import itertools
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dineof, masking, metrics, synth, varnet
from .grid import (SpatioTemporalField, load_field, save_field,
                   export_frame_stats, MISSING)
from .masking import MaskSpec, ObservationMask, SensorMaskData, split_obs_target
from .varnet import SolverConfig, NumericalFailure, mix64

ALL_METHODS = ("dineof", "edineof", "direct-cnn", "direct-unet",
               "varnet-cnn", "varnet-unet")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration

_TOP_KEYS = {"seed", "out", "data", "split", "method", "mask", "solver",
             "eval", "bench", "crossmatrix", "ablate"}
_DATA_KEYS = {"synth", "truth_file", "observed_file"}
_SYNTH_KEYS = {"truth", "cloud"}
_MASK_KEYS = {"strategy", "remove_rate", "min_side", "max_side",
              "exempt_missing_threshold", "sensor_ids", "seed"}
_SOLVER_KEYS = {"n_iters", "lr", "beta1", "beta2", "epochs", "batch",
                "window_len", "width", "hidden", "val_stride"}
_EVAL_KEYS = {"holdout_rate", "pgm_vmin", "pgm_vmax"}
_BENCH_KEYS = {"dineof_ranks", "cv_fraction", "reuse_checkpoints", "methods"}
_CROSS_KEYS = {"pixel_remove_rate", "sensor_ids", "reuse_checkpoints"}
_ABLATE_KEYS = {"holdout_rate", "min_side", "max_side", "reuse_checkpoints"}


def _check_keys(d, allowed, where):
    for k in d:
        if k not in allowed:
            raise ConfigError(f"unknown config key {where}.{k}")


def load_config(path):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    _check_keys(cfg, _TOP_KEYS, "")
    data = cfg.get("data", {})
    _check_keys(data, _DATA_KEYS, "data")
    if "synth" in data:
        _check_keys(data["synth"], _SYNTH_KEYS, "data.synth")
        for sect, cls in (("truth", synth.TruthConfig), ("cloud", synth.CloudConfig)):
            sub = data["synth"].get(sect, {})
            allowed = {f.name for f in dataclasses.fields(cls)}
            _check_keys(sub, allowed, f"data.synth.{sect}")
    for name in ("truth_file", "observed_file"):
        if name in data and not Path(data[name]).exists():
            raise ConfigError(f"data.{name} does not exist: {data[name]}")
    if "mask" in cfg:
        _check_keys(cfg["mask"], _MASK_KEYS, "mask")
    if "solver" in cfg:
        _check_keys(cfg["solver"], _SOLVER_KEYS, "solver")
    if "eval" in cfg:
        _check_keys(cfg["eval"], _EVAL_KEYS, "eval")
    if "bench" in cfg:
        _check_keys(cfg["bench"], _BENCH_KEYS, "bench")
    if "crossmatrix" in cfg:
        _check_keys(cfg["crossmatrix"], _CROSS_KEYS, "crossmatrix")
    if "ablate" in cfg:
        _check_keys(cfg["ablate"], _ABLATE_KEYS, "ablate")
    if "method" in cfg and cfg["method"] not in ALL_METHODS:
        raise ConfigError(f"unknown method {cfg['method']!r}")
    return cfg


def _fingerprint(*parts):
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def build_mask_spec(cfg, seed):
    m = dict(cfg.get("mask", {}))
    m.setdefault("strategy", "patch")
    m.setdefault("seed", seed)
    try:
        return MaskSpec(**m)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad mask spec: {e}") from None


def build_solver_cfg(cfg):
    try:
        return SolverConfig(**cfg.get("solver", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad solver config: {e}") from None


def get_dataset(cfg, seed):
    """(truth, observed) fields from synth config or from GFF files."""
    data = cfg.get("data", {})
    if "synth" in data:
        s = data["synth"]
        tcfg = synth.TruthConfig(**s.get("truth", {}))
        ccfg = synth.CloudConfig(**s.get("cloud", {}))
        return synth.gen_dataset(tcfg, ccfg, synth.SensorConfig(), seed)
    if "observed_file" not in data:
        raise ConfigError("data needs either 'synth' or 'observed_file'")
    observed = load_field(data["observed_file"])
    truth = load_field(data["truth_file"]) if "truth_file" in data else observed
    return truth, observed


def resolve_split(cfg, f):
    """Frame ranges for the train/val/test date ranges of the config."""
    split = cfg.get("split")
    if split is None:
        raise ConfigError("config needs a split section")
    ranges = {}
    for name in ("train", "val", "test"):
        if name not in split:
            raise ConfigError(f"split.{name} missing")
        d0, d1 = (datetime.date.fromisoformat(x) for x in split[name])
        t0 = (d0 - f.time_origin).days // f.time_step_days
        t1 = (d1 - f.time_origin).days // f.time_step_days
        if not 0 <= t0 < t1 <= f.n_frames:
            raise ConfigError(f"split.{name} [{d0}, {d1}) outside the data range")
        ranges[name] = (t0, t1)
    if not ranges["train"][1] <= ranges["val"][0] or \
       not ranges["val"][1] <= ranges["test"][0]:
        raise ConfigError("split ranges must be disjoint and ordered "
                          "train < val < test")
    return ranges


def _sensor_data(f):
    if f.sensors is None:
        return None
    return SensorMaskData(f.sensors, f.sensor_names)


# ---------------------------------------------------------------------------
# small output helpers

def write_pgm(path, frame, vmin, vmax):
    """8-bit grayscale PGM with a fixed value window; NaN maps to black."""
    a = np.asarray(frame, dtype=np.float64)
    scaled = (a - vmin) / (vmax - vmin)
    scaled = np.clip(np.nan_to_num(scaled, nan=0.0), 0.0, 1.0)
    img = (scaled * 255).astype(np.uint8)
    H, W = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode())
        fh.write(img.tobytes())


def save_mask_gff(keep, land, path, like):
    vals = np.where(keep, np.float32(0.0), MISSING)
    f = dataclasses.replace(like, values=vals, valid_mask=keep.copy(),
                            sensors=None, sensor_names=[])
    save_field(f, path)


def _csv_write(path, header, rows):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(_fmt6(v) for v in r))
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt6(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# ---------------------------------------------------------------------------
# shared experiment plumbing

def _test_obs(cfg, test_f, seed, sensor_data):
    spec = build_mask_spec(cfg, mix64(seed, 0x7E57))
    keep = masking.generate_mask(test_f, spec, sensor_mask=sensor_data).keep
    return spec, ObservationMask(keep=keep)


def _train_or_reuse(kind, cfg, out, seed, train_f, val_f, mask_spec, scfg,
                    reuse, log_name=None):
    """Train a mapper, or load a checkpoint whose fingerprint matches."""
    fp = _fingerprint(kind, cfg.get("data"), cfg.get("split"),
                      mask_spec.label(), dataclasses.asdict(scfg), seed)
    ck = Path(out) / f"{kind}_{mask_spec.strategy}.gfw"
    side = Path(str(ck) + ".json")
    if reuse and ck.exists() and side.exists():
        meta = json.loads(side.read_text())
        if meta.get("fingerprint") == fp:
            return varnet.load_mapper(ck), []
    mapper, history = varnet.train_mapper(
        kind, train_f, val_f, mask_spec, scfg, seed=seed,
        sensor_data=_sensor_data(train_f), val_sensor_data=_sensor_data(val_f))
    mapper.save(ck)
    meta = json.loads(side.read_text())
    meta["fingerprint"] = fp
    side.write_text(json.dumps(meta, indent=1, sort_keys=True))
    if history:
        name = log_name or f"{kind}_{mask_spec.strategy}_epochs.csv"
        _csv_write(Path(out) / name, ["epoch", "train_loss", "val_rmsle"],
                   [(e, l, v) for e, l, v in history])
    return mapper, history


def _dineof_reconstruction(train_f, test_obs_f, ranks, cv_fraction, seed,
                           enhanced, filter_width=3):
    """Complete train(gappy truth) + test(observations) jointly; returns the
    test-period frames plus a completion report."""
    comb_vals = np.concatenate([train_f.values, test_obs_f.values])
    comb_valid = np.concatenate([train_f.valid_mask, test_obs_f.valid_mask])
    comb = dataclasses.replace(train_f, values=comb_vals,
                               valid_mask=comb_valid,
                               sensors=None, sensor_names=[])
    mat, sea = dineof.field_to_matrix(comb)
    rank = dineof.select_rank(mat, ranks, cv_fraction, seed)
    cfg_d = dineof.DineofConfig(rank=rank, temporal_filter_width=filter_width)
    res = dineof.edineof(mat, cfg_d) if enhanced else dineof.dineof(mat, cfg_d)
    T, H, W = comb.shape
    frames = dineof.matrix_to_frames(res.completed, sea, T, H, W)
    report = {"rank": rank, "iterations": res.n_iter,
              "final_residual": res.final_change}
    return frames[train_f.n_frames:], report


def _recon_field_from_frames(test_f, frames):
    sea = ~test_f.land_mask
    valid = np.broadcast_to(sea, test_f.shape).copy()
    vals = np.where(valid, frames, MISSING).astype(np.float32)
    return dataclasses.replace(test_f, values=vals, valid_mask=valid,
                               sensors=None, sensor_names=[])


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(cfg, out, seed):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    truth, observed = get_dataset(cfg, seed)
    save_field(truth, out / "truth.gff")
    save_field(observed, out / "observed.gff")
    export_frame_stats(observed, out / "frame_stats.csv")
    synth_cfg = cfg.get("data", {}).get("synth", {})
    manifest = {
        "seed": seed,
        "truth_config": synth_cfg.get("truth", {}),
        "cloud_config": synth_cfg.get("cloud", {}),
        "sensor_names": observed.sensor_names,
        "files": ["truth.gff", "observed.gff", "frame_stats.csv"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1,
                                                  sort_keys=True))
    print(json.dumps({"synth": {"frames": truth.n_frames,
                                "grid": list(truth.shape[1:])}}))
    return 0


def cmd_train(cfg, out, seed, resume=False):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    method = cfg.get("method")
    if method in (None, "dineof", "edineof"):
        raise ConfigError("train needs a neural method in config.method")
    truth, observed = get_dataset(cfg, seed)
    sp = resolve_split(cfg, observed)
    train_f = observed.frame_slice(*sp["train"])
    val_f = observed.frame_slice(*sp["val"])
    mask_spec = build_mask_spec(cfg, seed)
    scfg = build_solver_cfg(cfg)
    ck = out / f"{method}.gfw"
    start_epoch = 0
    mapper = None
    if resume:
        if not ck.exists():
            raise ConfigError(f"cannot resume: {ck} missing")
        mapper = varnet.load_mapper(ck)
        start_epoch = mapper.best_epoch
    mapper, history = varnet.train_mapper(
        method, train_f, val_f, mask_spec, scfg, seed=seed,
        sensor_data=_sensor_data(train_f),
        val_sensor_data=_sensor_data(val_f), start_epoch=start_epoch,
        mapper=mapper)
    mapper.save(ck)
    mode = "a" if resume and (out / f"{method}_epochs.csv").exists() else "w"
    log_path = out / f"{method}_epochs.csv"
    with open(log_path, mode) as fh:
        if mode == "w":
            fh.write("epoch,train_loss,val_rmsle\n")
        for e, l, v in history:
            fh.write(f"{e},{l:.6g},{v:.6g}\n")
    print(json.dumps({"train": {"method": method, "best_epoch": mapper.best_epoch,
                                "val_rmsle": mapper.val_rmsle}}))
    return 0


def cmd_interpolate(cfg, out, seed, checkpoint=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    method = cfg.get("method")
    truth, observed = get_dataset(cfg, seed)
    sp = resolve_split(cfg, observed)
    train_f = observed.frame_slice(*sp["train"])
    test_f = observed.frame_slice(*sp["test"])
    spec, obs_mask = _test_obs(cfg, test_f, seed, _sensor_data(test_f))
    test_obs_f, _ = split_obs_target(test_f, obs_mask)
    if method in ("dineof", "edineof"):
        bench_cfg = cfg.get("bench", {})
        frames, report = _dineof_reconstruction(
            train_f, test_obs_f, bench_cfg.get("dineof_ranks", [2, 4, 8, 16]),
            bench_cfg.get("cv_fraction", 0.1), seed, method == "edineof")
        recon = _recon_field_from_frames(test_f, frames)
        print(json.dumps({"method": method, **report}))
    else:
        if checkpoint is None:
            raise ConfigError("neural interpolation needs --checkpoint")
        if not Path(checkpoint).exists():
            raise ConfigError(f"checkpoint not found: {checkpoint}")
        mapper = varnet.load_mapper(checkpoint)
        recon = varnet.reconstruct_series(mapper, test_f, obs_mask)
        print(json.dumps({"method": mapper.kind,
                          "checkpoint": str(checkpoint)}))
    save_field(recon, out / f"{method}_recon.gff")
    save_mask_gff(obs_mask.keep, test_f.land_mask, out / "test_obs_mask.gff",
                  test_f)
    return 0


def cmd_eval(truth_path, recon_path, mask_path, out, method="", mask_label="",
             seed=0):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    truth = load_field(truth_path)
    recon = load_field(recon_path)
    keep = load_field(mask_path).valid_mask
    report = metrics.evaluate(truth, recon, ObservationMask(keep=keep),
                              method=method, mask_spec=mask_label, seed=seed)
    metrics.append_report(out / "reports.csv", report)
    print(json.dumps({"eval": {"rmsle": report.rmsle,
                               "mre_percent": report.mre_percent,
                               "n_pixels": report.n_pixels}}))
    return 0


def _bench_setup(cfg, seed):
    truth, observed = get_dataset(cfg, seed)
    sp = resolve_split(cfg, observed)
    parts = {k: observed.frame_slice(*v) for k, v in sp.items()}
    truth_test = truth.frame_slice(*sp["test"])
    return truth, observed, parts, truth_test


def cmd_bench(cfg, out, seed):
    """Six-method comparison on one dataset with patch-based observations."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pgm").mkdir(exist_ok=True)
    bench_cfg = cfg.get("bench", {})
    methods = bench_cfg.get("methods", list(ALL_METHODS))
    reuse = bool(bench_cfg.get("reuse_checkpoints", True))
    truth, observed, parts, _ = _bench_setup(cfg, seed)
    train_f, val_f, test_f = parts["train"], parts["val"], parts["test"]
    mask_spec = build_mask_spec(cfg, seed)
    scfg = build_solver_cfg(cfg)
    spec_t, obs_mask = _test_obs(cfg, test_f, seed, _sensor_data(test_f))
    test_obs_f, _ = split_obs_target(test_f, obs_mask)
    ev = cfg.get("eval", {})
    vmin = ev.get("pgm_vmin", -3.1)
    vmax = ev.get("pgm_vmax", -1.9)
    write_pgm(out / "pgm" / "target.pgm", test_f.values[0], vmin, vmax)
    write_pgm(out / "pgm" / "obs.pgm", test_obs_f.values[0], vmin, vmax)

    rows = []
    for method in methods:
        t0 = time.perf_counter()
        if method in ("dineof", "edineof"):
            frames, report = _dineof_reconstruction(
                train_f, test_obs_f,
                bench_cfg.get("dineof_ranks", [2, 4, 8, 16]),
                bench_cfg.get("cv_fraction", 0.1), seed,
                method == "edineof")
            recon = _recon_field_from_frames(test_f, frames)
        else:
            mapper, _ = _train_or_reuse(method, cfg, out, seed, train_f,
                                        val_f, mask_spec, scfg, reuse)
            recon = varnet.reconstruct_series(mapper, test_f, obs_mask)
        wall = time.perf_counter() - t0
        rep = metrics.evaluate(test_f, recon, obs_mask, method=method,
                               mask_spec=mask_spec.label(), seed=seed)
        write_pgm(out / "pgm" / f"{method}.pgm", recon.values[0], vmin, vmax)
        rows.append(rep.row() + [f"{wall:.6g}"])
        print(json.dumps({"bench": {"method": method, "rmsle": rep.rmsle,
                                    "mre_percent": rep.mre_percent}}))
    _csv_write(out / "bench.csv", metrics.REPORT_COLUMNS + ["wallclock_s"],
               rows)
    return 0


def _cross_specs(cfg, seed):
    cross = cfg.get("crossmatrix", {})
    patch = build_mask_spec(cfg, seed)
    pixel = MaskSpec(strategy="random_pixel",
                     remove_rate=cross.get("pixel_remove_rate", 0.5),
                     seed=seed)
    sensor = MaskSpec(strategy="sensor_subset",
                      sensor_ids=cross.get("sensor_ids", ["OLCI-S3A"]),
                      seed=seed)
    return {"patch": patch, "random_pixel": pixel, "sensor_subset": sensor}


def cmd_crossmatrix(cfg, out, seed):
    """Train under each masking pattern, test under all patterns."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    reuse = bool(cfg.get("crossmatrix", {}).get("reuse_checkpoints", True))
    truth, observed, parts, _ = _bench_setup(cfg, seed)
    train_f, val_f, test_f = parts["train"], parts["val"], parts["test"]
    scfg = build_solver_cfg(cfg)
    specs = _cross_specs(cfg, seed)
    sensor_test = _sensor_data(test_f)

    mappers = {}
    for name, spec in specs.items():
        mappers[name], _ = _train_or_reuse(
            "varnet-cnn", cfg, out, seed, train_f, val_f, spec, scfg, reuse)

    rows = []
    results = {}
    for test_name, test_spec in specs.items():
        spec_t = test_spec.reseeded(mix64(seed, 0x7E57))
        keep = masking.generate_mask(test_f, spec_t,
                                     sensor_mask=sensor_test).keep
        obs_mask = ObservationMask(keep=keep)
        for train_name, mapper in mappers.items():
            recon = varnet.reconstruct_series(mapper, test_f, obs_mask)
            rep = metrics.evaluate(test_f, recon, obs_mask,
                                   method=f"varnet-cnn[{train_name}]",
                                   mask_spec=test_spec.label(), seed=seed)
            results[(train_name, test_name)] = rep.rmsle
            rows.append([train_name, test_name, f"{rep.rmsle:.6g}",
                         f"{rep.mre_percent:.6g}", f"{rep.mv_prop:.6g}",
                         rep.n_pixels, seed])
            print(json.dumps({"crossmatrix": {"train": train_name,
                                              "test": test_name,
                                              "rmsle": rep.rmsle}}))
    _csv_write(out / "crossmatrix.csv",
               ["train_pattern", "test_pattern", "rmsle", "mre_percent",
                "mv_prop", "n_pixels", "seed"], rows)
    names = list(specs)
    summary = {}
    for test_name in names:
        col = {tr: results[(tr, test_name)] for tr in names}
        ranked = sorted(col, key=col.get)
        summary[test_name] = {
            "best_train_pattern": ranked[0],
            "diagonal_is_best": ranked[0] == test_name,
            "patch_not_worst": ranked[-1] != "patch",
            "rmsle": col,
        }
    (out / "crossmatrix_summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True))
    return 0


def cmd_ablate(cfg, out, seed):
    """Sensor-combination sweep with a fixed common evaluation holdout."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    abl = cfg.get("ablate", {})
    reuse = bool(abl.get("reuse_checkpoints", True))
    truth, observed, parts, _ = _bench_setup(cfg, seed)
    train_f, val_f, test_f = parts["train"], parts["val"], parts["test"]
    if test_f.sensors is None:
        raise ConfigError("sensor ablation needs sensor data in the dataset")
    sensor_test = _sensor_data(test_f)
    names = sensor_test.sensor_names
    mask_spec = build_mask_spec(cfg, seed)
    scfg = build_solver_cfg(cfg)
    mapper, _ = _train_or_reuse("varnet-cnn", cfg, out, seed, train_f, val_f,
                                mask_spec, scfg, reuse)

    # fixed 10% patch-based holdout: the common evaluation support
    hold_spec = MaskSpec(strategy="patch",
                         remove_rate=abl.get("holdout_rate", 0.1),
                         min_side=abl.get("min_side", mask_spec.min_side),
                         max_side=abl.get("max_side", mask_spec.max_side),
                         exempt_missing_threshold=1.0,
                         seed=mix64(seed, 0xAB1A))
    base_keep = masking.generate_mask(test_f, hold_spec).keep
    holdout = test_f.valid_mask & ~base_keep
    save_mask_gff(holdout, test_f.land_mask, out / "holdout.gff", test_f)

    rows = []
    scores = {}
    for r in range(1, len(names) + 1):
        for combo in itertools.combinations(range(len(names)), r):
            subset = [names[i] for i in combo]
            bits = sensor_test.bits_for(subset)
            keep = base_keep & ((sensor_test.sensors & bits) != 0)
            obs_mask = ObservationMask(keep=keep)
            recon = varnet.reconstruct_series(mapper, test_f, obs_mask)
            dom_rmsle = metrics.rmsle(test_f.values, recon.values, holdout)
            dom_mre = metrics.mre(test_f.values, recon.values, holdout)
            sea_n = int((~test_f.land_mask).sum()) * test_f.n_frames
            mv = 1.0 - float(keep.sum()) / sea_n
            label = "+".join(str(i + 1) for i in combo)
            scores[frozenset(combo)] = dom_rmsle
            rows.append([label, "+".join(subset), f"{dom_rmsle:.6g}",
                         f"{dom_mre:.6g}", f"{mv:.6g}", int(holdout.sum()),
                         seed])
            print(json.dumps({"ablate": {"subset": label,
                                         "rmsle": dom_rmsle, "mv": mv}}))
    _csv_write(out / "ablation.csv",
               ["subset", "sensors", "rmsle", "mre_percent", "mv_prop",
                "n_pixels", "seed"], rows)

    wide = names.index(synth.WIDE_SWATH_SENSOR) if synth.WIDE_SWATH_SENSOR in names else 0
    all_idx = frozenset(range(len(names)))
    pairs = []
    others = [i for i in range(len(names)) if i != wide]
    for r in range(1, len(others) + 1):
        for combo in itertools.combinations(others, r):
            a = frozenset(combo)
            b = a | {wide}
            pairs.append(bool(scores[b] < scores[a]))
    summary = {
        "all_sensors_rmsle": scores[all_idx],
        "all_sensors_is_best": scores[all_idx] == min(scores.values()),
        "wide_swath_sensor": names[wide],
        "wide_swath_wins": int(sum(pairs)),
        "wide_swath_pairs": len(pairs),
    }
    (out / "ablation_summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# entry point

def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ocfill",
        description="Gap-free reconstruction of gappy gridded fields")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="64-bit seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="numba thread count (best effort)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "train", "interpolate", "bench", "crossmatrix",
                 "ablate"):
        sub.add_parser(name)
    p_train = sub.choices["train"]
    p_train.add_argument("--resume", action="store_true")
    p_int = sub.choices["interpolate"]
    p_int.add_argument("--checkpoint", default=None)
    p_eval = sub.add_parser("eval")
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--recon", required=True)
    p_eval.add_argument("--obs-mask", required=True)
    p_eval.add_argument("--method", default="")
    p_eval.add_argument("--mask-label", default="")
    args = parser.parse_args(argv)

    if args.threads:
        try:
            import numba
            numba.set_num_threads(args.threads)
        except (ImportError, ValueError):
            pass

    try:
        if args.command == "eval":
            out = args.out or "."
            return cmd_eval(args.truth, args.recon, args.obs_mask, out,
                            method=args.method, mask_label=args.mask_label,
                            seed=args.seed or 0)
        if not args.config:
            raise ConfigError(f"{args.command} needs --config")
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        out = args.out or cfg.get("out")
        if out is None:
            raise ConfigError("no output directory (--out or config.out)")
        if args.command == "synth":
            return cmd_synth(cfg, out, seed)
        if args.command == "train":
            return cmd_train(cfg, out, seed, resume=args.resume)
        if args.command == "interpolate":
            return cmd_interpolate(cfg, out, seed, checkpoint=args.checkpoint)
        if args.command == "bench":
            return cmd_bench(cfg, out, seed)
        if args.command == "crossmatrix":
            return cmd_crossmatrix(cfg, out, seed)
        if args.command == "ablate":
            return cmd_ablate(cfg, out, seed)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (NumericalFailure, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
