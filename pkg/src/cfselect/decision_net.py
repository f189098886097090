"""Actor-critic decision network with hand-written backprop and Adam.

Layout (k = number of CF models, S = input side, 64 by default)::

    state (k, S, S)
      policy branch: conv5x5-32 s2 -> conv3x3-32 s2 -> conv3x3-32 s2 -> flatten
      value branch:  conv5x5-32 s2 -> conv3x3-32 s2 -> conv3x3-32 s2 -> flatten
      shared FC512 (one weight set, applied to each branch separately)
      policy: FC512 -> head (k logits)      value: FC512 -> head (1)

ReLU follows every conv and every hidden FC layer.  Activations are kept in
NHWC order; the flattened conv features are therefore ordered (h, w, c).
"""

import struct
from dataclasses import dataclass, field

import numba
import numpy as np

CONV_CHANNELS = 32
HIDDEN = 512
CONV_SPECS = ((5, 2, 2), (3, 2, 1), (3, 2, 1))  # (kernel, stride, padding)

CHECKPOINT_MAGIC = b"CFTRL1"


def param_shapes(k, input_size=64):
    """Ordered (name, shape) list; this order is also the checkpoint layout."""
    if input_size % 8:
        raise ValueError(f"input size must be divisible by 8, got {input_size}")
    flat = CONV_CHANNELS * (input_size // 8) ** 2
    shapes = []
    for branch in ("policy", "value"):
        in_ch = k
        for i, (ks, _, _) in enumerate(CONV_SPECS, start=1):
            shapes.append((f"{branch}_conv{i}_w", (CONV_CHANNELS, in_ch, ks, ks)))
            shapes.append((f"{branch}_conv{i}_b", (CONV_CHANNELS,)))
            in_ch = CONV_CHANNELS
    shapes += [
        ("shared_fc_w", (flat, HIDDEN)),
        ("shared_fc_b", (HIDDEN,)),
        ("policy_fc_w", (HIDDEN, HIDDEN)),
        ("policy_fc_b", (HIDDEN,)),
        ("value_fc_w", (HIDDEN, HIDDEN)),
        ("value_fc_b", (HIDDEN,)),
        ("policy_head_w", (HIDDEN, k)),
        ("policy_head_b", (k,)),
        ("value_head_w", (HIDDEN, 1)),
        ("value_head_b", (1,)),
    ]
    return shapes


def _fan_in(shape):
    return int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]


@dataclass(eq=False)
class DecisionParams:
    k: int
    input_size: int
    tensors: dict

    def names(self):
        return [name for name, _ in param_shapes(self.k, self.input_size)]

    def n_params(self):
        return sum(t.size for t in self.tensors.values())

    def copy(self):
        return DecisionParams(self.k, self.input_size, {n: t.copy() for n, t in self.tensors.items()})

    def flat(self):
        return np.concatenate([self.tensors[n].ravel() for n in self.names()])

    def cast(self, dtype):
        """Tensors in ``dtype``; cached because parameter sets are never mutated in place."""
        dtype = np.dtype(dtype)
        if dtype == np.float64:
            return self.tensors
        cache = self.__dict__.setdefault("_cast", {})
        if dtype not in cache:
            cache[dtype] = {n: t.astype(dtype) for n, t in self.tensors.items()}
        return cache[dtype]

    def same_as(self, other):
        return (
            self.k == other.k
            and self.input_size == other.input_size
            and all(np.array_equal(self.tensors[n], other.tensors[n]) for n in self.names())
        )


def net_init(seed, k=3, input_size=64) -> DecisionParams:
    """He-normal weights from a seeded generator, zero biases."""
    if k < 2:
        raise ValueError(f"need at least 2 actions, got k={k}")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(k, input_size):
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.standard_normal(shape) * np.sqrt(2.0 / _fan_in(shape))
    return DecisionParams(k, input_size, tensors)


# -- convolution via im2col (NHWC) -------------------------------------------


def _im2col(x, ks, stride, pad):
    """Patch matrix with rows (n, ho, wo) and columns ordered (ki, kj, c)."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - ks) // stride + 1
    wo = (w + 2 * pad - ks) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (ks, ks), axis=(1, 2))
    win = win[:, : stride * ho : stride, : stride * wo : stride]  # (n, ho, wo, c, ki, kj)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n * ho * wo, ks * ks * c), (n, ho, wo)


def _weight_matrix(w):
    # (o, c, ki, kj) -> (ki*kj*c, o), matching the im2col column order
    o = w.shape[0]
    return w.transpose(2, 3, 1, 0).reshape(-1, o)


def _conv_forward(x, w, b, stride, pad):
    ks = w.shape[-1]
    cols, (n, ho, wo) = _im2col(x, ks, stride, pad)
    out = cols @ _weight_matrix(w).astype(x.dtype, copy=False) + b.astype(x.dtype, copy=False)
    return out.reshape(n, ho, wo, w.shape[0]), cols


def _conv_backward(dout, cols, x_shape, w, stride, pad, need_dx=True):
    o, c, ks, _ = w.shape
    n, ho, wo, _ = dout.shape
    dflat = dout.reshape(-1, o)
    dw = (cols.T @ dflat).reshape(ks, ks, c, o).transpose(3, 2, 0, 1)
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    # col2im, one kernel tap at a time, into a stride-phase layout so every add hits a plain slice
    _, h, wd, _ = x_shape
    ph = -(-(h + 2 * pad) // stride)
    pw = -(-(wd + 2 * pad) // stride)
    dxp = np.zeros((n, ph, stride, pw, stride, c), dtype=dout.dtype)
    taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1), dtype=dout.dtype)  # (ki, kj, o, c)
    for i in range(ks):
        for j in range(ks):
            tap = (dflat @ taps[i, j]).reshape(n, ho, wo, c)
            dxp[:, i // stride : i // stride + ho, i % stride, j // stride : j // stride + wo, j % stride] += tap
    dxp = dxp.reshape(n, ph * stride, pw * stride, c)
    return dxp[:, pad : pad + h, pad : pad + wd, :], dw, db


# -- forward / backward --------------------------------------------------------


@dataclass
class NetOutput:
    logits: np.ndarray  # (N, k)
    action_probs: np.ndarray  # (N, k)
    log_probs: np.ndarray  # (N, k)
    value: np.ndarray  # (N,)
    cache: dict = field(repr=False)


def _branch_convs(t, branch, h, caches):
    # layers 2 and 3 of one branch; layer 1 of both branches runs jointly in forward()
    for i, (_, stride, pad) in enumerate(CONV_SPECS[1:], start=2):
        z, cols = _conv_forward(h, t[f"{branch}_conv{i}_w"], t[f"{branch}_conv{i}_b"], stride, pad)
        caches.append((h.shape, cols, z))
        h = np.maximum(z, 0.0)
    return h


def forward(params: DecisionParams, state, dtype=np.float64) -> NetOutput:
    """Run both branches on a batch of states shaped (N, k, S, S) or (k, S, S).

    ``dtype`` selects the compute precision; outputs are always float64.
    """
    state = np.asarray(state, dtype=np.float64)
    if state.ndim == 3:
        state = state[None]
    expected = (params.k, params.input_size, params.input_size)
    if state.ndim != 4 or state.shape[1:] != expected:
        raise ValueError(f"state shape {state.shape[1:]} does not match network input {expected}")
    t = params.cast(dtype)
    x = state.transpose(0, 2, 3, 1).astype(dtype, copy=False)
    n = x.shape[0]
    cache = {"params": params, "dtype": np.dtype(dtype)}

    # both branches read the same input: one patch matrix, weights side by side
    ks, stride, pad = CONV_SPECS[0]
    w1 = np.concatenate([t["policy_conv1_w"], t["value_conv1_w"]])
    b1 = np.concatenate([t["policy_conv1_b"], t["value_conv1_b"]])
    z1, cols1 = _conv_forward(x, w1, b1, stride, pad)
    cache["conv1"] = (x.shape, cols1, w1)
    conv_out = {}
    for c, branch in enumerate(("policy", "value")):
        z = z1[..., c * CONV_CHANNELS : (c + 1) * CONV_CHANNELS]
        caches = [(x.shape, None, z)]
        conv_out[branch] = _branch_convs(t, branch, np.maximum(z, 0.0), caches)
        cache[branch] = caches
    conv_shape = conv_out["policy"].shape
    # the shared FC is applied to both branches in one product
    flat = np.concatenate([conv_out["policy"].reshape(n, -1), conv_out["value"].reshape(n, -1)])
    z_shared = flat @ t["shared_fc_w"] + t["shared_fc_b"]
    h_shared = np.maximum(z_shared, 0.0)
    cache["shared"] = (conv_shape, flat, z_shared)
    hidden = {}
    for c, branch in enumerate(("policy", "value")):
        hs = h_shared[c * n : (c + 1) * n]
        z_fc = hs @ t[f"{branch}_fc_w"] + t[f"{branch}_fc_b"]
        h_fc = np.maximum(z_fc, 0.0)
        cache[branch + "_fc"] = (hs, z_fc, h_fc)
        hidden[branch] = h_fc
    logits = (hidden["policy"] @ t["policy_head_w"] + t["policy_head_b"]).astype(np.float64)
    value = (hidden["value"] @ t["value_head_w"] + t["value_head_b"])[:, 0].astype(np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    return NetOutput(logits, probs, log_probs, value, cache)


def backward(params: DecisionParams, cache, d_logits, d_value):
    """Gradients of sum(d_logits * logits) + sum(d_value * value) for every tensor,
    in the compute dtype of the forward pass."""
    if cache.get("params") is not params:
        raise ValueError("cache was produced by a different parameter set")
    dtype = cache["dtype"]
    t = params.cast(dtype)
    d_logits = np.atleast_2d(np.asarray(d_logits, dtype=dtype))
    d_value = np.atleast_1d(np.asarray(d_value, dtype=dtype))
    n = d_logits.shape[0]
    grads = {}
    upstream = {"policy": (d_logits, "policy_head"), "value": (d_value[:, None], "value_head")}
    d_shared = []
    for branch in ("policy", "value"):
        d_out, head = upstream[branch]
        hs, z_fc, h_fc = cache[branch + "_fc"]
        grads[f"{head}_w"] = h_fc.T @ d_out
        grads[f"{head}_b"] = d_out.sum(axis=0)
        dz = (d_out @ t[f"{head}_w"].T) * (z_fc > 0)
        grads[f"{branch}_fc_w"] = hs.T @ dz
        grads[f"{branch}_fc_b"] = dz.sum(axis=0)
        d_shared.append(dz @ t[f"{branch}_fc_w"].T)
    conv_shape, flat, z_shared = cache["shared"]
    dz = np.concatenate(d_shared) * (z_shared > 0)
    grads["shared_fc_w"] = flat.T @ dz
    grads["shared_fc_b"] = dz.sum(axis=0)
    d_flat = dz @ t["shared_fc_w"].T
    d_conv1 = []
    for c, branch in enumerate(("policy", "value")):
        dh = d_flat[c * n : (c + 1) * n].reshape(conv_shape)
        caches = cache[branch]
        for i in range(len(CONV_SPECS), 1, -1):
            x_shape, cols, z = caches[i - 1]
            _, stride, pad = CONV_SPECS[i - 1]
            dh, dw, db = _conv_backward(dh * (z > 0), cols, x_shape, t[f"{branch}_conv{i}_w"], stride, pad)
            grads[f"{branch}_conv{i}_w"] = dw
            grads[f"{branch}_conv{i}_b"] = db
        d_conv1.append(dh * (caches[0][2] > 0))
    x_shape, cols1, w1 = cache["conv1"]
    _, stride, pad = CONV_SPECS[0]
    _, dw, db = _conv_backward(np.concatenate(d_conv1, axis=-1), cols1, x_shape, w1, stride, pad, need_dx=False)
    grads["policy_conv1_w"], grads["value_conv1_w"] = dw[:CONV_CHANNELS], dw[CONV_CHANNELS:]
    grads["policy_conv1_b"], grads["value_conv1_b"] = db[:CONV_CHANNELS], db[CONV_CHANNELS:]
    return {name: grads[name] for name in params.names()}


def sample_action(probs, rng=None, mode="sample"):
    """Pick an action from one probability row; returns (action, log_prob)."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    if mode == "greedy":
        action = int(np.argmax(probs))
    elif mode == "sample":
        if rng is None:
            raise ValueError("sampling needs a random generator")
        action = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        action = min(action, probs.size - 1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return action, float(np.log(probs[action]))


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float64):
        """Zero moments; ``dtype`` float32 halves the memory traffic of a step."""
        zeros = {n: np.zeros(a.shape, dtype=dtype) for n, a in params.tensors.items()}
        return cls({n: z.copy() for n, z in zeros.items()}, zeros, 0, lr, beta1, beta2, eps)


@numba.njit(cache=True, error_model="numpy")
def _adam_kernel(g, m, v, b1, b2, one, c2, lr_t, eps):
    """Fused elementwise Adam moments and step, in the dtype of ``m``."""
    out_m = np.empty_like(m)
    out_v = np.empty_like(v)
    step = np.empty_like(m)
    for i in range(g.size):
        gi = g[i]
        mi = m[i] * b1 + (one - b1) * gi
        vi = gi * gi * (one - b2) + b2 * v[i]
        out_m[i] = mi
        out_v[i] = vi
        step[i] = (mi * lr_t) / (np.sqrt(vi / c2) + eps)
    return step, out_m, out_v


def adam_step(params: DecisionParams, grads, opt: AdamState):
    """One bias-corrected Adam step; returns new (params, state) objects.

    Moment arithmetic runs in the moments' dtype; parameters stay float64.
    """
    step = opt.step + 1
    new_t, new_m, new_v = {}, {}, {}
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        dt = opt.m[name].dtype.type
        upd, m, v = _adam_kernel(
            np.ascontiguousarray(g, dtype=dt).ravel(), opt.m[name].ravel(), opt.v[name].ravel(),
            dt(opt.beta1), dt(opt.beta2), dt(1.0), dt(1.0 - opt.beta2**step),
            dt(opt.lr / (1.0 - opt.beta1**step)), dt(opt.eps),
        )
        new_t[name] = p - upd.reshape(p.shape)
        new_m[name], new_v[name] = m.reshape(p.shape), v.reshape(p.shape)
    return (
        DecisionParams(params.k, params.input_size, new_t),
        AdamState(new_m, new_v, step, opt.lr, opt.beta1, opt.beta2, opt.eps),
    )


# -- checkpoints -------------------------------------------------------------------
#
# magic "CFTRL1" | k u32 | input_size u32 | n_params u64 | params f64[n] |
# adam step u64 | lr, beta1, beta2, eps f64[4] | m f64[n] | v f64[n]
# All integers and floats little-endian; tensors concatenated in param_shapes() order.

_HEADER = struct.Struct("<IIQ")
_ADAM = struct.Struct("<Q4d")


def _concat(k, input_size, tensors):
    return np.concatenate([tensors[n].ravel() for n, _ in param_shapes(k, input_size)]).astype("<f8")


def _split(k, input_size, flat):
    out, pos = {}, 0
    for name, shape in param_shapes(k, input_size):
        size = int(np.prod(shape))
        out[name] = flat[pos : pos + size].astype(np.float64).reshape(shape)
        pos += size
    return out


def save_checkpoint(params: DecisionParams, opt: AdamState, path):
    n = params.n_params()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_HEADER.pack(params.k, params.input_size, n))
        fh.write(_concat(params.k, params.input_size, params.tensors).tobytes())
        fh.write(_ADAM.pack(opt.step, opt.lr, opt.beta1, opt.beta2, opt.eps))
        fh.write(_concat(params.k, params.input_size, opt.m).tobytes())
        fh.write(_concat(params.k, params.input_size, opt.v).tobytes())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path, expected_k=None):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a CFTRL1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    if len(data) < pos + _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    k, input_size, n = _HEADER.unpack_from(data, pos)
    pos += _HEADER.size
    if expected_k is not None and k != expected_k:
        raise CheckpointError(f"{path}: checkpoint was trained with k={k}, run expects k={expected_k}")
    try:
        shapes = param_shapes(k, input_size)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if n != sum(int(np.prod(s)) for _, s in shapes):
        raise CheckpointError(f"{path}: parameter count {n} inconsistent with k={k}, input {input_size}")
    need = pos + 8 * n + _ADAM.size + 16 * n
    if len(data) != need:
        raise CheckpointError(f"{path}: expected {need} bytes, found {len(data)} (truncated or padded)")

    def read_block(offset):
        return np.frombuffer(data, dtype="<f8", count=n, offset=offset)

    params = DecisionParams(k, input_size, _split(k, input_size, read_block(pos)))
    pos += 8 * n
    step, lr, b1, b2, eps = _ADAM.unpack_from(data, pos)
    pos += _ADAM.size
    m = _split(k, input_size, read_block(pos))
    v = _split(k, input_size, read_block(pos + 8 * n))
    return params, AdamState(m, v, step, lr, b1, b2, eps)
