"""Trainable variational mapping and the observation-only training loops.

The reconstruction state is a standardized time window (L,H,W). The
variational cost balances fidelity to the observed pixels against fidelity
to a learned prior; its gradient w.r.t. the state is computed by the tape
and fed to a convolutional-recurrent cell that proposes the next state
update. Cost weights, prior, and cell are trained jointly end-to-end.

Training never sees complete fields: each window's input is a freshly
degraded copy of the gappy target, and the loss runs over every available
target pixel. Hidden-pixel error on a fixed validation mask selects the
checkpoint.
"""

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .grid import NormStats, compute_norm_stats, MISSING
from .masking import generate_mask, SensorMaskData
from .models import PriorPhi, ConvLstmCell, DirectCnn, DirectUNet

logger = logging.getLogger("ocfill")

_M64 = (1 << 64) - 1


def mix64(*vals):
    """Deterministic 64-bit stream splitter (splitmix64 chain)."""
    x = 0x243F6A8885A308D3
    for v in vals:
        x = (x ^ (int(v) & _M64))
        x = (x + 0x9E3779B97F4A7C15) & _M64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        x = z ^ (z >> 31)
    return x


class NumericalFailure(RuntimeError):
    pass


@dataclass
class SolverConfig:
    n_iters: int = 12
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 100
    batch: int = 4
    window_len: int = 5
    width: int = 32
    hidden: int = 32
    val_stride: int = 0  # 0 = window_len

    def __post_init__(self):
        if self.n_iters < 1:
            raise ValueError("need at least one solver iteration")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")


class VarCostParams:
    """Trainable positive cost weights, stored as logs."""

    def __init__(self, store, prefix="lam/", init1=1.0, init2=1.0):
        self.log1 = store.add(prefix + "log_lambda1", np.log(init1))
        self.log2 = store.add(prefix + "log_lambda2", np.log(init2))

    def lambda1(self):
        return ad.exp(self.log1)

    def lambda2(self):
        return ad.exp(self.log2)


def var_cost(x, y, omega, phi, params):
    """lambda1 * sum_omega (x-y)^2 + lambda2 * sum (x - phi(x))^2."""
    omega = np.asarray(omega, dtype=bool)
    if not omega.any():
        logger.warning("variational cost over a fully blind window: "
                       "observation term is zero")
        obs_term = ad.Tensor(np.zeros(()))
    else:
        d = ad.masked_diff(x, y, omega)
        obs_term = ad.sum_all(ad.mul(d, d))
    r = ad.sub(x, phi.apply(x))
    prior_term = ad.sum_all(ad.mul(r, r))
    return ad.add(ad.mul(params.lambda1(), obs_term),
                  ad.mul(params.lambda2(), prior_term))


def solve(y, omega, phi, params, cell, n_iters, differentiable=False,
          plain_rho=None):
    """Iterate the gradient-driven state update from a zero-anomaly start.

    y: (L,H,W) standardized observations (NaN at gaps); omega: bool mask.
    With plain_rho set, the recurrent cell is bypassed and the update is a
    fixed-step descent (diagnostic mode). Returns the final state Tensor.
    """
    omega = np.asarray(omega, dtype=bool)
    y0 = np.where(omega, np.nan_to_num(np.asarray(y, dtype=np.float64)), 0.0)
    x = ad.Tensor(y0, requires_grad=True)
    state = None if plain_rho is not None else cell.zero_state(*y0.shape[1:])

    def one_iter(k, x, state):
        u = var_cost(x, y, omega, phi, params)
        gx = ad.grad(u, [x], create_graph=differentiable)[0]
        if not np.all(np.isfinite(gx.data)):
            raise NumericalFailure(
                f"non-finite state gradient at solver iteration {k} "
                f"(|g| max {np.nanmax(np.abs(gx.data))})")
        if plain_rho is not None:
            return ad.add(x, ad.scale(gx, -plain_rho)), state
        inc, state = cell.step(gx, state)
        return ad.add(x, inc), state

    for k in range(1, n_iters + 1):
        if differentiable:
            x, state = one_iter(k, x, state)
        else:
            with ad.Tape():
                x_new, state = one_iter(k, x, state)
            x = ad.Tensor(x_new.data, requires_grad=True)
            if state is not None:
                state = (state[0].detach(), state[1].detach())
    return x


# ---------------------------------------------------------------------------
# trained mapper container

MAPPER_KINDS = ("direct-cnn", "direct-unet", "varnet-cnn", "varnet-unet")


@dataclass
class TrainedMapper:
    kind: str
    weights: ad.ParamStore
    stats: NormStats
    window_len: int
    mask_spec_label: str = ""
    n_iters: int = 12
    width: int = 32
    hidden: int = 32
    seed: int = 0
    best_epoch: int = 0
    val_rmsle: float = float("nan")
    phi: object = None
    cell: object = None
    params: object = None
    net: object = None

    def save(self, path):
        extra = {f"opt.m/{k}": v for k, v in self.weights._m.items()}
        extra.update({f"opt.v/{k}": v for k, v in self.weights._v.items()})
        extra["opt.step"] = np.array(float(self.weights.step_count))
        self.weights.save(path, self.kind, extra=extra)
        sidecar = {
            "kind": self.kind,
            "window_len": self.window_len,
            "norm_mean": self.stats.mean,
            "norm_std": self.stats.std,
            "mask_spec": self.mask_spec_label,
            "n_iters": self.n_iters,
            "width": self.width,
            "hidden": self.hidden,
            "seed": self.seed,
            "epoch": self.best_epoch,
            "val_rmsle": self.val_rmsle,
        }
        with open(str(path) + ".json", "w") as fh:
            json.dump(sidecar, fh, indent=1, sort_keys=True)


def build_mapper(kind, window_len, width, hidden, seed):
    """Fresh models with seeded init, all parameters in one store."""
    if kind not in MAPPER_KINDS:
        raise ValueError(f"unknown mapper kind {kind!r}")
    store = ad.ParamStore()
    rng = np.random.Generator(np.random.Philox(key=np.uint64([mix64(seed, 0x1417) & _M64, 0x11])))
    m = TrainedMapper(kind=kind, weights=store, stats=NormStats(0.0, 1.0),
                      window_len=window_len, width=width, hidden=hidden,
                      seed=seed)
    if kind.startswith("varnet"):
        variant = kind.split("-")[1]
        m.phi = PriorPhi(window_len, variant, width, store, "phi/", rng)
        m.cell = ConvLstmCell(window_len, hidden, store, "cell/", rng)
        m.params = VarCostParams(store)
    else:
        cls = DirectCnn if kind == "direct-cnn" else DirectUNet
        m.net = cls(window_len, width, store, "net/", rng)
    return m


def load_mapper(path):
    arch, values = ad.ParamStore.read(path)
    with open(str(path) + ".json") as fh:
        side = json.load(fh)
    m = build_mapper(side["kind"], side["window_len"], side["width"],
                     side["hidden"], side["seed"])
    m.stats = NormStats(side["norm_mean"], side["norm_std"])
    m.mask_spec_label = side["mask_spec"]
    m.n_iters = side["n_iters"]
    m.best_epoch = side["epoch"]
    m.val_rmsle = side["val_rmsle"]
    for name in m.weights.names():
        m.weights[name].data[...] = values[name]
        if f"opt.m/{name}" in values:
            m.weights._m[name] = values[f"opt.m/{name}"].copy()
            m.weights._v[name] = values[f"opt.v/{name}"].copy()
    if "opt.step" in values:
        m.weights.step_count = int(values["opt.step"])
    return m


# ---------------------------------------------------------------------------
# window plumbing

def _standardized(values, stats):
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std


def _direct_input(z_obs, keep):
    """Stack zero-filled standardized values with validity indicators."""
    z0 = np.where(keep, z_obs, 0.0)
    return ad.Tensor(np.concatenate([z0, keep.astype(np.float64)], axis=0))


def _window_starts(T, L, stride):
    return list(range(0, T - L + 1, stride))


def _draw_window_mask(f, t0, L, spec, sensor_data):
    sub = f.frame_slice(t0, t0 + L)
    sens = None
    if spec.strategy == "sensor_subset":
        if sensor_data is None:
            raise ValueError("sensor_subset mask needs sensor data")
        sens = SensorMaskData(sensor_data.sensors[t0:t0 + L],
                              sensor_data.sensor_names)
    return generate_mask(sub, spec, sensor_mask=sens).keep


def _reconstruct_window(mapper, z_target, keep, differentiable=False):
    """Standardized reconstruction of one window from kept pixels."""
    if mapper.kind.startswith("direct"):
        return mapper.net.forward(_direct_input(z_target, keep))
    y = np.where(keep, z_target, np.nan)
    return solve(y, keep, mapper.phi, mapper.params, mapper.cell,
                 mapper.n_iters, differentiable=differentiable)


# ---------------------------------------------------------------------------
# training

def _validation_rmsle(mapper, field, spec, sensor_data, seed, stride):
    """Hidden-pixel RMSLE on a fixed mask draw over the validation period."""
    stats = mapper.stats
    L = mapper.window_len
    T = field.n_frames
    vspec = spec.reseeded(mix64(seed, 0xA11D))
    keep_all = generate_mask(field, vspec, sensor_mask=sensor_data).keep
    errs = []
    weights = []
    for t0 in _window_starts(T, L, stride):
        sl = slice(t0, t0 + L)
        valid = field.valid_mask[sl]
        keep = keep_all[sl] & valid
        hidden = valid & ~keep
        if not hidden.any():
            continue
        z_t = _standardized(np.where(valid, field.values[sl], np.nan), stats)
        x = _reconstruct_window(mapper, z_t, keep)
        log_rec = x.data * stats.std + stats.mean
        log_tru = z_t * stats.std + stats.mean
        errs.append(np.sum((log_rec[hidden] - log_tru[hidden]) ** 2))
        weights.append(hidden.sum())
    if not errs:
        return float("nan")
    return float(np.sqrt(np.sum(errs) / np.sum(weights)))


def train_mapper(kind, train_field, val_field, mask_spec, cfg, seed=0,
                 sensor_data=None, val_sensor_data=None, log_cb=None,
                 start_epoch=0, mapper=None):
    """Observation-only training loop shared by all four mapper kinds.

    Per epoch and window a fresh observation mask is drawn online; the loss
    is the masked MSE against every available target pixel. Returns the
    mapper with the best-validation weights restored, plus the epoch log.
    """
    L = cfg.window_len
    if train_field.n_frames < L:
        raise ValueError("training period shorter than the window")
    starts = _window_starts(train_field.n_frames, L, 1)
    if not starts:
        raise ValueError("empty training set")
    if mapper is None:
        mapper = build_mapper(kind, L, cfg.width, cfg.hidden, seed)
        mapper.stats = compute_norm_stats(train_field)
    mapper.mask_spec_label = mask_spec.label()
    mapper.n_iters = cfg.n_iters
    stats = mapper.stats
    store = mapper.weights
    z_train = _standardized(np.where(train_field.valid_mask,
                                     train_field.values, np.nan), stats)
    val_stride = cfg.val_stride or L

    best_crit = np.inf
    best_val = float("nan")
    best_state = store.copy_values()
    best_epoch = start_epoch
    history = []
    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        order_rng = np.random.Generator(np.random.Philox(
            key=np.uint64([mix64(seed, 0x0E90C, epoch) & _M64, 0x1])))
        order = order_rng.permutation(len(starts))
        losses = []
        for b0 in range(0, len(order), cfg.batch):
            idxs = order[b0:b0 + cfg.batch]
            with ad.Tape():
                batch_terms = []
                for wi in idxs:
                    t0 = starts[wi]
                    spec_w = mask_spec.reseeded(mix64(seed, epoch, int(wi)))
                    keep = _draw_window_mask(train_field, t0, L, spec_w,
                                             sensor_data)
                    valid = train_field.valid_mask[t0:t0 + L]
                    keep = keep & valid
                    z_t = z_train[t0:t0 + L]
                    x = _reconstruct_window(mapper, z_t, keep, differentiable=True)
                    batch_terms.append(ad.masked_mse(x, z_t, valid))
                loss = batch_terms[0]
                for term in batch_terms[1:]:
                    loss = ad.add(loss, term)
                loss = ad.scale(loss, 1.0 / len(batch_terms))
                lval = loss.item()
                if not np.isfinite(lval):
                    raise NumericalFailure(
                        f"non-finite loss at epoch {epoch}, step {b0 // cfg.batch}")
                ad.backward(loss)
            ad.adam_step(store, cfg.lr, cfg.beta1, cfg.beta2)
            store.zero_grad()
            losses.append(lval)
        val = _validation_rmsle(mapper, val_field, mask_spec,
                                val_sensor_data, seed, val_stride)
        train_loss = float(np.mean(losses))
        history.append((epoch, train_loss, val))
        if log_cb:
            log_cb(epoch, train_loss, val)
        # a mask that hides nothing gives no validation signal; fall back to
        # the training loss so checkpoint selection still tracks progress
        crit = val if np.isfinite(val) else train_loss
        if crit < best_crit:
            best_crit = crit
            best_val = val
            best_state = store.copy_values()
            best_epoch = epoch
    store.load_values(best_state)
    mapper.best_epoch = best_epoch
    mapper.val_rmsle = float(best_val)
    return mapper, history


def train_varnet(train_field, val_field, mask_spec, cfg, variant="cnn",
                 seed=0, sensor_data=None, val_sensor_data=None, log_cb=None):
    return train_mapper(f"varnet-{variant}", train_field, val_field,
                        mask_spec, cfg, seed, sensor_data, val_sensor_data,
                        log_cb)


def train_direct(train_field, val_field, mask_spec, cfg, arch="cnn",
                 seed=0, sensor_data=None, val_sensor_data=None, log_cb=None):
    return train_mapper(f"direct-{arch}", train_field, val_field,
                        mask_spec, cfg, seed, sensor_data, val_sensor_data,
                        log_cb)


# ---------------------------------------------------------------------------
# inference

def reconstruct_series(mapper, f, obs_mask):
    """Gap-free reconstruction of a whole series from kept observations.

    Slides stride-1 windows, averages overlapping frame predictions with
    uniform weights, and reports raw model output everywhere at sea (no
    substitution of observed pixels).
    """
    L = mapper.window_len
    T, H, W = f.shape
    if T < L:
        raise ValueError(f"series has {T} frames, window needs {L}")
    keep_all = obs_mask.keep & f.valid_mask
    stats = mapper.stats
    z_all = _standardized(np.where(f.valid_mask, f.values, np.nan), stats)
    acc = np.zeros((T, H, W))
    cnt = np.zeros(T)
    for t0 in _window_starts(T, L, 1):
        sl = slice(t0, t0 + L)
        x = _reconstruct_window(mapper, z_all[sl], keep_all[sl])
        acc[sl] += x.data
        cnt[sl] += 1.0
    z_rec = acc / cnt[:, None, None]
    log_rec = z_rec * stats.std + stats.mean
    sea = ~f.land_mask
    valid = np.broadcast_to(sea, (T, H, W)).copy()
    vals = np.where(valid, log_rec, MISSING).astype(np.float32)
    return replace(f, values=vals, valid_mask=valid, sensors=None,
                   sensor_names=[])
