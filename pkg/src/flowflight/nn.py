"""Actor-critic network in plain numpy with an analytic backward pass.

Architecture: three conv layers over the ``(3, 36, 6)`` sensing tensor,
an FC layer to 128 units followed by ReLU and L2 normalization, fused with the
9-d state (goal direction, velocity, last action) by a ``[256, 256]`` MLP, and
two linear heads: the Gaussian action mean and the state value. The action
log-std is a free parameter vector.

All parameters live in one flat vector (:class:`ParamSet`) so optimizers and
checkpoints handle a single array.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError

__all__ = [
    "NetSpec",
    "ParamSet",
    "ActorCritic",
    "conv_output_shape",
    "conv2d_forward",
    "conv2d_backward",
    "l2_normalize_forward",
    "l2_normalize_backward",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = "FLOWFLIGHT-CHECKPOINT"
CHECKPOINT_VERSION = 1
NORM_EPS = 1e-8


@dataclass
class NetSpec:
    in_channels: int = 3
    in_shape: tuple = (36, 6)
    # (out_channels, kernel, stride, padding)
    conv: tuple = (
        (4, (5, 3), (2, 1), (0, 0)),
        (16, (5, 3), (2, 1), (2, 1)),
        (16, (5, 3), (2, 1), (2, 1)),
    )
    feature_dim: int = 128
    state_dim: int = 9
    hidden: tuple = (256, 256)
    action_dim: int = 3
    log_std_init: float = math.log(0.5)
    log_std_bounds: tuple = (-5.0, 1.0)

    def conv_chain(self):
        """Shapes ``(C, H, W)`` from the input through every conv layer."""
        shapes = [(self.in_channels,) + tuple(self.in_shape)]
        for i, (out_c, k, s, pad) in enumerate(self.conv):
            c, h, w = shapes[-1]
            try:
                ho, wo = conv_output_shape((h, w), k, s, pad)
            except ValueError as exc:
                raise ConfigError(f"policy.conv[{i}]", str(exc)) from None
            shapes.append((out_c, ho, wo))
        return shapes

    @property
    def flat_dim(self):
        c, h, w = self.conv_chain()[-1]
        return c * h * w

    def validate(self, path="policy"):
        self.conv_chain()
        lo, hi = self.log_std_bounds
        if not lo < hi:
            raise ConfigError(f"{path}.log_std_bounds", "lower bound must be < upper bound")
        if not lo <= self.log_std_init <= hi:
            raise ConfigError(f"{path}.log_std_init", "must lie inside log_std_bounds")
        if self.feature_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError(f"{path}.hidden", "layer widths must be >= 1")

    def layout(self):
        """Ordered ``(name, shape)`` list of every parameter."""
        out = []
        chain = self.conv_chain()
        for i, (oc, k, _s, _p) in enumerate(self.conv):
            ic = chain[i][0]
            out += [(f"conv{i + 1}.w", (oc, ic, k[0], k[1])), (f"conv{i + 1}.b", (oc,))]
        out += [("fc.w", (self.flat_dim, self.feature_dim)), ("fc.b", (self.feature_dim,))]
        width = self.feature_dim + self.state_dim
        for i, h in enumerate(self.hidden):
            out += [(f"mlp{i + 1}.w", (width, h)), (f"mlp{i + 1}.b", (h,))]
            width = h
        out += [("actor.w", (width, self.action_dim)), ("actor.b", (self.action_dim,)),
                ("critic.w", (width, 1)), ("critic.b", (1,)),
                ("log_std", (self.action_dim,))]
        return out


def conv_output_shape(in_hw, kernel, stride, pad):
    out = []
    for n, k, s, p in zip(in_hw, kernel, stride, pad):
        o = (n - k + 2 * p) // s + 1
        if o < 1:
            raise ValueError(f"kernel {kernel} does not fit input {in_hw} with padding {pad}")
        out.append(o)
    return tuple(out)


class ParamSet:
    """Flat parameter vector plus a name -> (offset, shape) manifest."""

    def __init__(self, layout, flat=None, dtype=np.float32):
        self.layout = [(name, tuple(shape)) for name, shape in layout]
        self.offsets = {}
        off = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self.offsets[name] = (off, shape)
            off += size
        self.size = off
        if flat is None:
            flat = np.zeros(off, dtype=dtype)
        flat = np.asarray(flat)
        if flat.shape != (off,):
            raise ValueError(f"expected {off} parameters, got {flat.shape}")
        self.flat = flat

    def __getitem__(self, name):
        off, shape = self.offsets[name]
        return self.flat[off:off + int(np.prod(shape))].reshape(shape)

    def copy(self, dtype=None):
        return ParamSet(self.layout, self.flat.astype(dtype or self.flat.dtype, copy=True))

    def manifest_lines(self):
        return [f"param {name} {self.offsets[name][0]} {','.join(map(str, shape))}" for name, shape in self.layout]


def _orthogonal(rng, shape, gain):
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(spec, rng, dtype=np.float32):
    """Orthogonal init: gain sqrt(2) hidden, 0.01 actor head, 1 critic head."""
    ps = ParamSet(spec.layout(), dtype=dtype)
    hidden_gain = math.sqrt(2.0)
    for name, shape in ps.layout:
        if name.endswith(".b"):
            continue
        if name == "log_std":
            ps[name][...] = spec.log_std_init
            continue
        gain = {"actor.w": 0.01, "critic.w": 1.0}.get(name, hidden_gain)
        if name.startswith("conv"):
            mat = _orthogonal(rng, (shape[0], int(np.prod(shape[1:]))), gain)
        else:
            mat = _orthogonal(rng, shape, gain)
        ps[name][...] = mat.reshape(shape)
    return ps


# -- layers ------------------------------------------------------------------

def conv2d_forward(x, w, b, stride, pad):
    """``x (N, C, H, W)`` -> ``(N, O, Ho, Wo)`` via im2col and one matrix product."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    ho, wo = conv_output_shape((h, wd), (kh, kw), stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    xp = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    out = w.reshape(o, -1) @ cols + b[:, None]
    return out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3), (cols, x.shape, w, stride, pad)


def conv2d_backward(dout, cache, need_dx=True):
    cols, xshape, w, (sh, sw), (ph, pw) = cache
    n, c, h, wd = xshape
    o, _, kh, kw = w.shape
    ho, wo = dout.shape[2:]
    d = dout.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
    dw = (d @ cols.T).reshape(w.shape)
    db = d.sum(axis=1)
    if not need_dx:
        return None, dw, db
    dcols = (w.reshape(o, -1).T @ d).reshape(c, kh, kw, n, ho, wo)
    dxp = np.zeros((c, n, h + 2 * ph, wd + 2 * pw), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += dcols[:, i, j]
    dx = dxp[:, :, ph:ph + h, pw:pw + wd].transpose(1, 0, 2, 3)
    return dx, dw, db


def l2_normalize_forward(x):
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    scale = np.maximum(norm, NORM_EPS)
    y = x / scale
    return y, (y, norm, scale)


def l2_normalize_backward(dy, cache):
    y, norm, scale = cache
    proj = (y * dy).sum(axis=-1, keepdims=True)
    active = norm > NORM_EPS
    return np.where(active, (dy - y * proj) / scale, dy / scale)


# -- network -----------------------------------------------------------------

class ActorCritic:
    """Shared-encoder actor-critic over flat parameters."""

    def __init__(self, spec=None, params=None, rng=None, dtype=np.float32):
        self.spec = spec or NetSpec()
        self.spec.validate()
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = init_params(self.spec, rng, dtype)
        if params.size != ParamSet(self.spec.layout()).size:
            raise ConfigError("policy", "parameter count does not match the network spec")
        self.params = params

    @property
    def dtype(self):
        return self.params.flat.dtype

    def forward(self, sensing, state):
        """Returns ``(mean (N, A), log_std (A,), value (N,), cache)``."""
        ps = self.params
        dt = self.dtype
        x = np.asarray(sensing, dtype=dt)
        s = np.asarray(state, dtype=dt)
        if x.ndim == 3:
            x, s = x[None], s[None]
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s))):
            raise NonFiniteError("observation contains non-finite values")
        cache = {"conv": [], "relu": []}
        h = x
        for i, (_oc, _k, stride, pad) in enumerate(self.spec.conv):
            h, c = conv2d_forward(h, ps[f"conv{i + 1}.w"], ps[f"conv{i + 1}.b"], stride, pad)
            cache["conv"].append(c)
            cache["relu"].append(h > 0)
            h = np.maximum(h, 0)
        n = h.shape[0]
        cache["flat_shape"] = h.shape
        flat = h.reshape(n, -1)
        cache["flat"] = flat
        f = flat @ ps["fc.w"] + ps["fc.b"]
        cache["fc_relu"] = f > 0
        f = np.maximum(f, 0)
        feat, cache["norm"] = l2_normalize_forward(f)
        z = np.concatenate([feat, s], axis=1)
        cache["mlp_in"] = []
        cache["mlp_relu"] = []
        for i in range(len(self.spec.hidden)):
            cache["mlp_in"].append(z)
            z = z @ ps[f"mlp{i + 1}.w"] + ps[f"mlp{i + 1}.b"]
            cache["mlp_relu"].append(z > 0)
            z = np.maximum(z, 0)
        cache["head_in"] = z
        mean = z @ ps["actor.w"] + ps["actor.b"]
        value = (z @ ps["critic.w"] + ps["critic.b"])[:, 0]
        lo, hi = self.spec.log_std_bounds
        raw = ps["log_std"]
        cache["log_std_active"] = (raw >= lo) & (raw <= hi)
        log_std = np.clip(raw, lo, hi)
        return mean, log_std, value, cache

    def backward(self, cache, d_mean, d_log_std, d_value):
        """Gradient of ``sum(d_mean * mean) + sum(d_log_std * log_std) + sum(d_value * value)``."""
        ps = self.params
        grad = ParamSet(ps.layout, np.zeros_like(ps.flat))
        dt = self.dtype
        d_mean = np.asarray(d_mean, dtype=dt)
        d_value = np.asarray(d_value, dtype=dt).reshape(-1, 1)
        z = cache["head_in"]
        grad["actor.w"][...] = z.T @ d_mean
        grad["actor.b"][...] = d_mean.sum(axis=0)
        grad["critic.w"][...] = z.T @ d_value
        grad["critic.b"][...] = d_value.sum(axis=0)
        grad["log_std"][...] = np.where(cache["log_std_active"], np.asarray(d_log_std, dtype=dt), 0)
        dz = d_mean @ ps["actor.w"].T + d_value @ ps["critic.w"].T
        for i in reversed(range(len(self.spec.hidden))):
            dz = dz * cache["mlp_relu"][i]
            zin = cache["mlp_in"][i]
            grad[f"mlp{i + 1}.w"][...] = zin.T @ dz
            grad[f"mlp{i + 1}.b"][...] = dz.sum(axis=0)
            dz = dz @ ps[f"mlp{i + 1}.w"].T
        dfeat = dz[:, :self.spec.feature_dim]
        df = l2_normalize_backward(dfeat, cache["norm"]) * cache["fc_relu"]
        grad["fc.w"][...] = cache["flat"].T @ df
        grad["fc.b"][...] = df.sum(axis=0)
        dh = (df @ ps["fc.w"].T).reshape(cache["flat_shape"])
        for i in reversed(range(len(self.spec.conv))):
            dh = dh * cache["relu"][i]
            dh, dw, db = conv2d_backward(dh, cache["conv"][i], need_dx=i > 0)
            grad[f"conv{i + 1}.w"][...] = dw
            grad[f"conv{i + 1}.b"][...] = db
        return grad.flat


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, net, meta=None):
    """Text manifest terminated by ``END``, then little-endian float32 values."""
    ps = net.params
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", "dtype <f4", f"count {ps.size}"]
    chain = "->".join("x".join(map(str, s)) for s in net.spec.conv_chain())
    lines.append(f"conv_chain {chain}")
    pads = ";".join(f"{p[0]},{p[1]}" for (_o, _k, _s, p) in net.spec.conv)
    lines.append(f"conv_padding {pads}")
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {value}")
    lines += ps.manifest_lines()
    lines.append("END")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        fh.write(ps.flat.astype("<f4").tobytes())


def load_checkpoint(path, spec=None):
    """Returns ``(ActorCritic, meta dict)``; the manifest must match ``spec``."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.index(b"\nEND\n") + len(b"\nEND\n")
    header = data[:end].decode("utf-8").splitlines()
    magic, version = header[0].split()
    if magic != CHECKPOINT_MAGIC or int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    meta, layout, count = {}, [], None
    for line in header[1:-1]:
        kind, _, rest = line.partition(" ")
        if kind == "count":
            count = int(rest)
        elif kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "param":
            name, _off, shape = rest.split()
            layout.append((name, tuple(int(x) for x in shape.split(","))))
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=end).astype(np.float32)
    spec = spec or NetSpec()
    if layout != [(n, tuple(s)) for n, s in spec.layout()]:
        raise ValueError(f"{path}: parameter manifest does not match the network spec")
    return ActorCritic(spec, ParamSet(layout, flat)), meta
