"""Network architectures: direct inversion nets, the learned prior, and the
convolutional-recurrent solver cell.

All models are shape-preserving on (C,H,W) inputs, built from stride-1 same
convolutions plus explicit 2x pool/upsample. Time enters as channels (one
channel per frame of the window). Weights are Kaiming-uniform from a seeded
stream, biases zero. Widths default to 32 but are configurable; the direct
nets take twice the window length as input channels (values + validity
indicators).
"""

import numpy as np

from . import autodiff as ad

ARCH_IDS = ("direct-cnn", "direct-unet", "phi-cnn", "phi-unet", "convlstm32")


def _kaiming(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _conv_params(store, prefix, c_in, c_out, k, rng):
    w = store.add(f"{prefix}.w", _kaiming(rng, (c_out, c_in, k, k)))
    b = store.add(f"{prefix}.b", np.zeros(c_out))
    return w, b


def _pad4(x):
    """Zero-pad (C,H,W) so H and W are multiples of 4; returns (tensor, H, W)."""
    C, H, W = x.data.shape
    H4 = -(-H // 4) * 4
    W4 = -(-W // 4) * 4
    if (H4, W4) == (H, W):
        return x, H, W
    return _embed_op(x, H4, W4), H, W


def _crop_op(x, H, W):
    """Keep the top-left (H,W) corner; adjoint of _embed_op."""
    C, Hp, Wp = x.data.shape
    def rule(g):
        return (_embed_op(g, Hp, Wp),)
    return ad._make(x.data[:, :H, :W].copy(), (x,), rule)


def _embed_op(x, Hp, Wp):
    C, H, W = x.data.shape
    data = np.zeros((C, Hp, Wp))
    data[:, :H, :W] = x.data
    def rule(g):
        return (_crop_op(g, H, W),)
    return ad._make(data, (x,), rule)


OUT_LAYER_SCALE = 0.1  # keeps early solver gradients off the gate saturation


class _FiveLayerCnn:
    """conv3 stack c_in -> w -> 2w -> 2w -> w -> c_out, relu between, linear last."""

    def __init__(self, store, prefix, c_in, c_out, width, rng):
        self.store = store
        ws = [c_in, width, 2 * width, 2 * width, width, c_out]
        self.layers = [
            _conv_params(store, f"{prefix}c{i + 1}", ws[i], ws[i + 1], 3, rng)
            for i in range(5)
        ]
        self.layers[-1][0].data *= OUT_LAYER_SCALE

    def forward(self, x):
        h = x
        for i, (w, b) in enumerate(self.layers):
            h = ad.conv2d(h, w, b)
            if i < len(self.layers) - 1:
                h = ad.relu(h)
        return h


class _TwoLevelUnet:
    """Two pool levels with skip connections; final 1x1 linear projection."""

    def __init__(self, store, prefix, c_in, c_out, width, rng):
        self.store = store
        w = width
        self.e1 = _conv_params(store, f"{prefix}e1", c_in, w, 3, rng)
        self.e2 = _conv_params(store, f"{prefix}e2", w, 2 * w, 3, rng)
        self.bk = _conv_params(store, f"{prefix}bk", 2 * w, 2 * w, 3, rng)
        self.d2 = _conv_params(store, f"{prefix}d2", 4 * w, 2 * w, 3, rng)
        self.d1 = _conv_params(store, f"{prefix}d1", 3 * w, w, 3, rng)
        self.out = _conv_params(store, f"{prefix}out", w, c_out, 1, rng)
        self.out[0].data *= OUT_LAYER_SCALE

    def forward(self, x):
        x, H, W = _pad4(x)
        e1 = ad.relu(ad.conv2d(x, *self.e1))
        p1 = ad.avg_pool2(e1)
        e2 = ad.relu(ad.conv2d(p1, *self.e2))
        p2 = ad.avg_pool2(e2)
        bk = ad.relu(ad.conv2d(p2, *self.bk))
        u2 = ad.upsample2_nearest(bk)
        d2 = ad.relu(ad.conv2d(ad.concat_channels(u2, e2), *self.d2))
        u1 = ad.upsample2_nearest(d2)
        d1 = ad.relu(ad.conv2d(ad.concat_channels(u1, e1), *self.d1))
        y = ad.conv2d(d1, *self.out)
        if y.data.shape[1:] != (H, W):
            y = _crop_op(y, H, W)
        return y


class DirectCnn:
    """Feed-forward gap filler; input is 2L channels (values + indicators)."""

    arch_id = "direct-cnn"

    def __init__(self, window_len, width=32, store=None, prefix="", rng=None):
        self.window_len = window_len
        self.width = width
        self.store = store if store is not None else ad.ParamStore()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.net = _FiveLayerCnn(self.store, prefix, 2 * window_len,
                                 window_len, width, rng)

    def forward(self, x):
        return self.net.forward(x)


class DirectUNet:
    arch_id = "direct-unet"

    def __init__(self, window_len, width=32, store=None, prefix="", rng=None):
        self.window_len = window_len
        self.width = width
        self.store = store if store is not None else ad.ParamStore()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.net = _TwoLevelUnet(self.store, prefix, 2 * window_len,
                                 window_len, width, rng)

    def forward(self, x):
        return self.net.forward(x)


class PriorPhi:
    """State-space prior: maps an (L,H,W) state to a same-shape prediction."""

    def __init__(self, window_len, variant="cnn", width=32, store=None,
                 prefix="phi/", rng=None):
        if variant not in ("cnn", "unet"):
            raise ValueError(f"unknown prior variant {variant!r}")
        self.window_len = window_len
        self.variant = variant
        self.width = width
        self.store = store if store is not None else ad.ParamStore()
        rng = rng if rng is not None else np.random.default_rng(0)
        cls = _FiveLayerCnn if variant == "cnn" else _TwoLevelUnet
        self.net = cls(self.store, prefix, window_len, window_len, width, rng)

    @property
    def arch_id(self):
        return f"phi-{self.variant}"

    def apply(self, x):
        return self.net.forward(x)


class ConvLstmCell:
    """Gated recurrent cell over gradient fields; emits a state increment."""

    def __init__(self, window_len, hidden=32, store=None, prefix="cell/", rng=None):
        self.window_len = window_len
        self.hidden = hidden
        self.store = store if store is not None else ad.ParamStore()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.gates = _conv_params(self.store, f"{prefix}gates",
                                  window_len + hidden, 4 * hidden, 3, rng)
        self.head = _conv_params(self.store, f"{prefix}head",
                                 hidden, window_len, 3, rng)
        self.head[0].data *= OUT_LAYER_SCALE

    @property
    def arch_id(self):
        return f"convlstm{self.hidden}"

    def zero_state(self, H, W):
        z = np.zeros((self.hidden, H, W))
        return ad.Tensor(z), ad.Tensor(z.copy())

    def step(self, grad_in, state):
        h_prev, c_prev = state
        z = ad.conv2d(ad.concat_channels(grad_in, h_prev), *self.gates)
        n = self.hidden
        i = ad.sigmoid(ad.slice_channels(z, 0, n))
        f = ad.sigmoid(ad.slice_channels(z, n, 2 * n))
        o = ad.sigmoid(ad.slice_channels(z, 2 * n, 3 * n))
        g = ad.tanh(ad.slice_channels(z, 3 * n, 4 * n))
        c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        inc = ad.conv2d(h, *self.head)
        return inc, (h, c)


def identity_prior_weights(phi):
    """Overwrite a CNN prior so that phi(x) == x exactly, relus included.

    Layer 1 writes +x and -x into separate channel banks; the final linear
    layer recombines relu(x) - relu(-x) = x. Requires width >= window length.
    """
    if phi.variant != "cnn":
        raise ValueError("identity weights only defined for the cnn variant")
    L, w = phi.window_len, phi.width
    if w < 2 * L:
        raise ValueError("width must be at least twice the window length")
    for key in phi.store.names():
        phi.store[key].data[...] = 0.0
    layers = phi.net.layers
    neg0 = w - L
    w1 = layers[0][0]
    for c in range(L):
        w1.data[c, c, 1, 1] = 1.0
        w1.data[neg0 + c, c, 1, 1] = -1.0
    # middle layers pass both banks through (relu keeps them non-negative)
    for (wk, _) in layers[1:4]:
        c_out, c_in = wk.data.shape[0], wk.data.shape[1]
        for c in range(min(c_in, c_out)):
            wk.data[c, c, 1, 1] = 1.0
    w5 = layers[4][0]
    for c in range(L):
        w5.data[c, c, 1, 1] = 1.0
        w5.data[c, neg0 + c, 1, 1] = -1.0


def save_model(store, path, arch, extra=None):
    if arch not in ARCH_IDS and not arch.startswith("varnet"):
        raise ValueError(f"unknown architecture id {arch!r}")
    store.save(path, arch, extra=extra)


def load_weights(path, expect_arch):
    arch, values = ad.ParamStore.read(path, expect_arch=expect_arch)
    return values
