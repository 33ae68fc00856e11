"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Every op appends a node (inputs, output, backward rule) to the active tape;
the tape's execution order is a valid topological order, so backward simply
walks it in reverse. Backward rules are written in terms of the same ops, so
running them with recording enabled (``create_graph=True``) yields gradients
that are themselves differentiable - which is what lets a gradient-descent
inner loop sit inside an outer training loss.

Shapes must match exactly; the only implicit broadcast is scalar-vs-tensor.
All data is float64.
"""

import struct
import json

import numpy as np

from . import kernels

__all__ = [
    "Tensor",
    "Tape",
    "no_grad",
    "backward",
    "grad",
    "ParamStore",
    "adam_step",
    "add", "sub", "mul", "scale", "exp", "relu", "tanh", "sigmoid",
    "conv2d", "avg_pool2", "upsample2_nearest", "concat_channels",
    "slice_channels", "channel_sum", "sum_all", "mask_mul", "masked_diff",
    "masked_mse",
]

GFW_MAGIC = b"GFW1"


class Tensor:
    """Contiguous float64 array plus an on-demand gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        d = np.asarray(data, dtype=np.float64)
        if not d.flags["C_CONTIGUOUS"]:
            d = np.copy(d, order="C")
        self.data = d
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("inputs", "output", "rule")

    def __init__(self, inputs, output, rule):
        self.inputs = inputs
        self.output = output
        self.rule = rule


class Tape:
    """Ordered record of executed ops; reverse order drives backward."""

    def __init__(self):
        self._nodes = []
        self._by_output = {}

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.pop()
        return False

    def _record(self, node):
        self._by_output[id(node.output)] = node
        self._nodes.append(node)

    def __len__(self):
        return len(self._nodes)


_tape_stack = []
_grad_enabled = True


class no_grad:
    """Context manager suppressing tape recording (detached arithmetic)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _active_tape():
    return _tape_stack[-1] if _tape_stack else None


def _make(data, inputs, rule):
    """Create the output tensor and record the node when tracing applies."""
    track = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    tape = _active_tape()
    if track and tape is not None:
        tape._record(_Node(inputs, out, rule))
    return out


def _traverse(root, tape, create_graph, accumulate, stop_at=frozenset()):
    """Reverse sweep from root; returns {id(tensor): grad Tensor}.

    Tensors whose id is in ``stop_at`` are treated as leaves: their grad is
    kept as a result and not propagated through their producing node, which
    makes grad() a partial derivative w.r.t. the requested tensors.
    """
    if root.data.shape != ():
        raise ValueError("backward root must be scalar")
    pending = {id(root): Tensor(np.ones(()))}
    nodes = list(tape._nodes)  # rules may append while we walk
    for node in reversed(nodes):
        oid = id(node.output)
        if oid not in pending or oid in stop_at:
            continue
        g = pending.pop(oid)
        if accumulate and node.output.requires_grad:
            _accum_grad(node.output, g)
        if create_graph:
            in_grads = node.rule(g)
        else:
            with no_grad():
                in_grads = node.rule(g)
        for t, gt in zip(node.inputs, in_grads):
            if gt is None or not t.requires_grad:
                continue
            prev = pending.get(id(t))
            if prev is None:
                pending[id(t)] = gt
            else:
                if create_graph:
                    pending[id(t)] = add(prev, gt)
                else:
                    with no_grad():
                        pending[id(t)] = add(prev, gt)
    return pending


def _accum_grad(t, g):
    if t.grad is None:
        t.grad = g.data.copy()
    else:
        t.grad += g.data


def backward(loss):
    """Populate .grad with dloss/dt for every requires_grad tensor on the tape."""
    tape = _active_tape()
    if tape is None:
        raise RuntimeError("backward() needs an active Tape")
    leaves = _traverse(loss, tape, create_graph=False, accumulate=True)
    # tensors never produced by a node (leaves) remain pending
    for node in tape._nodes:
        leaves.pop(id(node.output), None)
    by_id = {}
    for node in tape._nodes:
        for t in node.inputs:
            by_id[id(t)] = t
    for tid, g in leaves.items():
        t = by_id.get(tid)
        if t is not None and t.requires_grad:
            _accum_grad(t, g)


def grad(output, inputs, create_graph=False):
    """Partial d(output)/d(inputs) without touching .grad accumulators.

    With create_graph=True the returned tensors stay on the tape and are
    differentiable themselves.
    """
    tape = _active_tape()
    if tape is None:
        raise RuntimeError("grad() needs an active Tape")
    stop = frozenset(id(t) for t in inputs)
    pending = _traverse(output, tape, create_graph, accumulate=False, stop_at=stop)
    out = []
    for t in inputs:
        g = pending.get(id(t))
        if g is None:
            g = Tensor(np.zeros(t.data.shape))
        out.append(g)
    return out


# ---------------------------------------------------------------------------
# elementwise ops

def _binary_shapes(a, b):
    if a.data.shape == b.data.shape:
        return
    if a.data.shape == () or b.data.shape == ():
        return
    raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")


def _reduce_to(g, shape):
    # collapse a broadcasted gradient back onto a scalar operand
    if shape == () and g.data.shape != ():
        return sum_all(g)
    return g


def add(a, b):
    _binary_shapes(a, b)
    def rule(g):
        return _reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)
    return _make(a.data + b.data, (a, b), rule)


def sub(a, b):
    _binary_shapes(a, b)
    def rule(g):
        return _reduce_to(g, a.data.shape), _reduce_to(scale(g, -1.0), b.data.shape)
    return _make(a.data - b.data, (a, b), rule)


def mul(a, b):
    _binary_shapes(a, b)
    def rule(g):
        return _reduce_to(mul(g, b), a.data.shape), _reduce_to(mul(g, a), b.data.shape)
    return _make(a.data * b.data, (a, b), rule)


def scale(a, c):
    c = float(c)
    def rule(g):
        return (scale(g, c),)
    return _make(a.data * c, (a,), rule)


def exp(a):
    out_data = np.exp(a.data)
    def rule(g):
        return (mul(g, out),)
    out = _make(out_data, (a,), rule)
    return out


def relu(a):
    mask = a.data > 0  # subgradient 0 at exactly 0
    def rule(g):
        return (mask_mul(g, mask),)
    return _make(np.where(mask, a.data, 0.0), (a,), rule)


def tanh(a):
    out_data = np.tanh(a.data)
    def rule(g):
        one = Tensor(np.ones(out.data.shape))
        return (mul(g, sub(one, mul(out, out))),)
    out = _make(out_data, (a,), rule)
    return out


def sigmoid(a):
    d = a.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out_data[~pos] = e / (1.0 + e)
    def rule(g):
        one = Tensor(np.ones(out.data.shape))
        return (mul(g, mul(out, sub(one, out))),)
    out = _make(out_data, (a,), rule)
    return out


def mask_mul(a, mask):
    """Multiply by a constant boolean/float mask (exact zeros where false)."""
    m = np.asarray(mask, dtype=np.float64)
    def rule(g):
        return (mask_mul(g, m),)
    return _make(a.data * m, (a,), rule)


def sum_all(a):
    shape = a.data.shape
    def rule(g):
        return (mul(g, Tensor(np.ones(shape))),)
    return _make(np.sum(a.data), (a,), rule)


# ---------------------------------------------------------------------------
# structural ops

def conv2d(x, w, b=None):
    """Same-padded stride-1 correlation; x (C,H,W), w (O,C,kh,kw), b (O,)."""
    O, C, kh, kw = w.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel sides must be odd for same padding")
    if x.data.shape[0] != C:
        raise ValueError(f"input has {x.data.shape[0]} channels, kernel expects {C}")
    out_data = kernels.conv2d_fwd(x.data, w.data)
    if b is not None:
        out_data = out_data + b.data[:, None, None]
        def rule(g):
            return conv2d_igrad_op(g, w), conv2d_wgrad_op(x, g, kh, kw), channel_sum(g)
        return _make(out_data, (x, w, b), rule)
    def rule(g):
        return conv2d_igrad_op(g, w), conv2d_wgrad_op(x, g, kh, kw)
    return _make(out_data, (x, w), rule)


def conv2d_igrad_op(g, w):
    # linear in both args; adjoints are the sibling conv primitives
    O, C, kh, kw = w.data.shape
    def rule(gg):
        return conv2d(gg, w), conv2d_wgrad_op(gg, g, kh, kw)
    return _make(kernels.conv2d_igrad(g.data, w.data), (g, w), rule)


def conv2d_wgrad_op(x, g, kh, kw):
    def rule(gw):
        return conv2d_igrad_op(g, gw), conv2d(x, gw)
    return _make(kernels.conv2d_wgrad(x.data, g.data, kh, kw), (x, g), rule)


def channel_sum(a):
    """Sum (C,H,W) over space to (C,); adjoint of broadcasting a bias."""
    C, H, W = a.data.shape
    def rule(g):
        return (broadcast_spatial(g, H, W),)
    return _make(a.data.sum(axis=(1, 2)), (a,), rule)


def broadcast_spatial(b, H, W):
    def rule(g):
        return (channel_sum(g),)
    return _make(np.broadcast_to(b.data[:, None, None], (b.data.shape[0], H, W)).copy(),
                 (b,), rule)


def avg_pool2(a):
    C, H, W = a.data.shape
    if H % 2 or W % 2:
        raise ValueError("avg_pool2 needs even spatial extents")
    pooled = a.data.reshape(C, H // 2, 2, W // 2, 2).mean(axis=(2, 4))
    def rule(g):
        return (scale(upsample2_nearest(g), 0.25),)
    return _make(pooled, (a,), rule)


def upsample2_nearest(a):
    up = np.repeat(np.repeat(a.data, 2, axis=1), 2, axis=2)
    def rule(g):
        return (scale(avg_pool2(g), 4.0),)
    return _make(up, (a,), rule)


def concat_channels(a, b):
    ca = a.data.shape[0]
    cb = b.data.shape[0]
    def rule(g):
        return slice_channels(g, 0, ca), slice_channels(g, ca, ca + cb)
    return _make(np.concatenate([a.data, b.data], axis=0), (a, b), rule)


def slice_channels(a, lo, hi):
    total = a.data.shape[0]
    def rule(g):
        return (pad_channels(g, lo, total),)
    return _make(a.data[lo:hi].copy(), (a,), rule)


def pad_channels(a, lo, total):
    c, H, W = a.data.shape
    def rule(g):
        return (slice_channels(g, lo, lo + c),)
    out = np.zeros((total, H, W))
    out[lo:lo + c] = a.data
    return _make(out, (a,), rule)


# ---------------------------------------------------------------------------
# losses

def masked_diff(pred, target, mask):
    """pred - target where mask, exact 0 elsewhere; NaNs under ~mask are inert."""
    m = np.asarray(mask, dtype=bool)
    if pred.data.shape != np.asarray(target).shape or pred.data.shape != m.shape:
        raise ValueError("masked_diff shape mismatch")
    d = np.where(m, pred.data - np.asarray(target, dtype=np.float64), 0.0)
    def rule(g):
        return (mask_mul(g, m),)
    return _make(d, (pred,), rule)


def masked_mse(pred, target, mask):
    """Mean squared difference over mask-true entries only."""
    m = np.asarray(mask, dtype=bool)
    n = int(m.sum())
    if n == 0:
        raise ValueError("masked_mse: empty mask")
    d = masked_diff(pred, target, m)
    return scale(sum_all(mul(d, d)), 1.0 / n)


# ---------------------------------------------------------------------------
# parameters and optimizer

class ParamStore:
    """Named parameter tensors in stable insertion order, plus Adam slots."""

    def __init__(self):
        self._params = {}
        self._m = {}
        self._v = {}
        self.step_count = 0

    def add(self, name, data, requires_grad=True):
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(data, requires_grad=requires_grad)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def n_values(self):
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def copy_values(self):
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_values(self, values):
        for k, t in self._params.items():
            t.data[...] = values[k]

    # -- GFW1 container ----------------------------------------------------

    def save(self, path, arch, extra=None):
        entries = []
        payload = bytearray()
        items = list(self._params.items())
        if extra:
            items += [(k, Tensor(v)) for k, v in extra.items()]
        for name, t in items:
            entries.append({"name": name, "shape": list(t.data.shape),
                            "offset": len(payload)})
            payload += np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        header = json.dumps({"arch": arch, "params": entries}).encode("utf-8")
        with open(path, "wb") as f:
            f.write(GFW_MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(bytes(payload))

    @staticmethod
    def read(path, expect_arch=None):
        """Returns (arch, {name: float64 array})."""
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:4] != GFW_MAGIC:
            raise ValueError("not a GFW1 weight file")
        (hlen,) = struct.unpack_from("<I", blob, 4)
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
        arch = header["arch"]
        if expect_arch is not None and arch != expect_arch:
            raise ValueError(f"weight file is {arch!r}, expected {expect_arch!r}")
        payload = blob[8 + hlen:]
        out = {}
        for e in header["params"]:
            n = int(np.prod(e["shape"])) if e["shape"] else 1
            lo = e["offset"]
            hi = lo + 8 * n
            if hi > len(payload):
                raise ValueError("weight payload truncated")
            arr = np.frombuffer(payload[lo:hi], dtype="<f8").reshape(e["shape"])
            out[e["name"]] = arr.astype(np.float64)
        return arch, out


def adam_step(store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One adaptive-moment update with bias correction over all parameters."""
    store.step_count += 1
    t = store.step_count
    b1c = 1.0 - beta1 ** t
    b2c = 1.0 - beta2 ** t
    for name, p in store._params.items():
        g = p.grad
        if g is None:
            continue
        m = store._m.get(name)
        if m is None:
            m = store._m[name] = np.zeros_like(p.data)
        v = store._v.get(name)
        if v is None:
            v = store._v[name] = np.zeros_like(p.data)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + eps)
