"""Point flow: dense motion between stacked LiDAR grayscale images.

Images are ``[u, v]`` arrays (width first). Every function accepts leading
batch axes so one call serves all parallel environments.
"""

from dataclasses import dataclass

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError

__all__ = [
    "FlowConfig",
    "FlowField",
    "BlockMatchingFlow",
    "PointFlowPipeline",
    "resize_bilinear",
    "stack_frames",
    "flow_to_color",
]


@dataclass
class FlowConfig:
    resized_shape: tuple = (96, 16)
    window: int = 5
    average_span: int = 5
    z_h: float = 16.0
    z_w: float = 96.0
    out_shape: tuple = (36, 6)
    estimator: str = "block"
    patch: tuple = (5, 3)
    search_radius: int = 4
    levels: int = 2

    def validate(self, path="flow"):
        if self.window < 3:
            raise ConfigError(f"{path}.window", "must be >= 3")
        if self.average_span < 1:
            raise ConfigError(f"{path}.average_span", "must be >= 1")
        for name in ("z_h", "z_w"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{path}.{name}", "must be > 0")
        if self.estimator not in ("block", "none"):
            raise ConfigError(f"{path}.estimator", "must be 'block' or 'none'")
        if any(p % 2 == 0 or p < 1 for p in self.patch):
            raise ConfigError(f"{path}.patch", "patch sides must be odd")
        if self.search_radius < 1:
            raise ConfigError(f"{path}.search_radius", "must be >= 1")
        if self.levels < 1:
            raise ConfigError(f"{path}.levels", "must be >= 1")
        w, h = self.resized_shape
        if w % (1 << (self.levels - 1)) or h % (1 << (self.levels - 1)):
            raise ConfigError(f"{path}.resized_shape", "must be divisible by 2**(levels-1)")

    @property
    def warmup(self):
        """Frames before the first full emission (0-based index of the first one)."""
        return self.window - 3 + (self.average_span - 1) + 2

    @property
    def max_displacement(self):
        r = self.search_radius
        return r * ((1 << self.levels) - 1) + 0.5


@dataclass(eq=False)
class FlowField:
    flow: np.ndarray  # (..., 2, W, H): (du, dv) in pixels
    valid: np.ndarray  # (..., W, H)


def _lerp_taps(n_in, n_out):
    """Corner-aligned source indices ``(i0, i1)`` and weights ``f`` for one axis."""
    x = np.zeros(1) if n_out == 1 else np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.clip(np.floor(x).astype(int), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, x - i0


def resize_bilinear(img, shape):
    """Bilinear resize of the last two axes to ``shape`` (corner-aligned).

    Lerp along ``v`` first, then along ``u``; elementwise, so the result of
    one image never depends on what else is in the batch.
    """
    img = np.asarray(img)
    u0, u1, fu = _lerp_taps(img.shape[-2], shape[0])
    v0, v1, fv = _lerp_taps(img.shape[-1], shape[1])
    fu = fu[:, None]
    rows0 = img[..., u0, :]
    rows1 = img[..., u1, :]
    c0 = (1.0 - fv) * rows0[..., v0] + fv * rows0[..., v1]
    c1 = (1.0 - fv) * rows1[..., v0] + fv * rows1[..., v1]
    return (1.0 - fu) * c0 + fu * c1


def stack_frames(frames):
    """Three consecutive resized frames -> one 3-channel image (oldest first)."""
    return np.stack(list(frames), axis=-3)


def _box_sum(x, ku, kv):
    """Sum over ``ku x kv`` windows of axes 1, 2 ('valid' mode).

    Taps are added one at a time, vertical first, in the same order as the
    compiled kernel so both paths round identically.
    """
    W, H = x.shape[1] - ku + 1, x.shape[2] - kv + 1
    col = np.zeros((x.shape[0], x.shape[1], H) + x.shape[3:])
    for j in range(kv):
        col += x[:, :, j:j + H]
    out = np.zeros((x.shape[0], W, H) + x.shape[3:])
    for i in range(ku):
        out += col[:, i:i + W]
    return out


@numba.njit(cache=True, nogil=True)
def _match_kernel(a, b, gu, gv, cand_u, cand_v, lut, r, pu, pv):
    E, W, H = b.shape
    K = cand_u.shape[0]
    side = 2 * r + 1
    PW, PH = W + 2 * pu, H + 2 * pv
    du_out = np.zeros((E, W, H))
    dv_out = np.zeros((E, W, H))
    valid = np.zeros((E, W, H), dtype=np.bool_)
    cost = np.empty((K, W, H), dtype=b.dtype)
    cmin = np.empty((W, H), dtype=b.dtype)
    cmax = np.empty((W, H), dtype=b.dtype)
    best = np.empty((W, H), dtype=np.int64)
    bp = np.empty((PW, PH), dtype=b.dtype)
    ap = np.empty((PW + 2 * r, PH + 2 * r), dtype=b.dtype)
    ad = np.empty((PW, PH), dtype=b.dtype)
    col = np.empty((PW, H), dtype=b.dtype)
    acc = np.empty(H, dtype=b.dtype)
    for e in range(E):
        for i in range(PW):
            xi = min(max(i - pu, 0), W - 1)
            for j in range(PH):
                bp[i, j] = b[e, xi, min(max(j - pv, 0), H - 1)]
        # prev warped by the guess, edge-padded by patch half + radius
        for i in range(PW + 2 * r):
            xi = min(max(i - pu - r, 0), W - 1)
            for j in range(PH + 2 * r):
                yj = min(max(j - pv - r, 0), H - 1)
                sx = min(max(xi - gu[e, xi, yj], 0), W - 1)
                sy = min(max(yj - gv[e, xi, yj], 0), H - 1)
                ap[i, j] = a[e, sx, sy]
        cmin[:] = np.inf
        cmax[:] = -np.inf
        best[:] = 0
        for k in range(K):
            du = cand_u[k]
            dv = cand_v[k]
            for i in range(PW):
                for j in range(PH):
                    ad[i, j] = abs(bp[i, j] - ap[i + r - du, j + r - dv])
            # window sums: vertical taps, then horizontal taps
            for i in range(PW):
                for y in range(H):
                    col[i, y] = 0.0
                for j in range(2 * pv + 1):
                    for y in range(H):
                        col[i, y] += ad[i, y + j]
            for x in range(W):
                for y in range(H):
                    acc[y] = 0.0
                for i in range(2 * pu + 1):
                    for y in range(H):
                        acc[y] += col[x + i, y]
                for y in range(H):
                    s = acc[y]
                    tu = x - gu[e, x, y] - du
                    tv = y - gv[e, x, y] - dv
                    if tu < 0 or tu >= W or tv < 0 or tv >= H:
                        cost[k, x, y] = np.inf
                        continue
                    cost[k, x, y] = s
                    # first minimum in candidate order wins ties
                    if s < cmin[x, y]:
                        cmin[x, y] = s
                        best[x, y] = k
                    if s > cmax[x, y]:
                        cmax[x, y] = s
        for x in range(W):
            for y in range(H):
                c0 = cmin[x, y]
                if not cmax[x, y] > c0:
                    continue
                valid[e, x, y] = True
                bu = cand_u[best[x, y]]
                bv = cand_v[best[x, y]]
                off_u = 0.0
                off_v = 0.0
                # an exact match needs no sub-pixel correction
                for axis in range(2 if c0 > 0 else 0):
                    ou = 1 if axis == 0 else 0
                    ov = 1 - ou
                    mu, mv, qu, qv = bu - ou, bv - ov, bu + ou, bv + ov
                    if abs(mu) > r or abs(mv) > r or abs(qu) > r or abs(qv) > r:
                        continue
                    cm = cost[lut[(mu + r) * side + (mv + r)], x, y]
                    cp = cost[lut[(qu + r) * side + (qv + r)], x, y]
                    cm = np.float64(cm)
                    cp = np.float64(cp)
                    den = cm - 2.0 * np.float64(c0) + cp
                    if cm != np.inf and cp != np.inf and den > 0:
                        off = min(max(0.5 * (cm - cp) / den, -0.5), 0.5)
                        if axis == 0:
                            off_u = off
                        else:
                            off_v = off
                du_out[e, x, y] = gu[e, x, y] + bu + off_u
                dv_out[e, x, y] = gv[e, x, y] + bv + off_v
    return du_out, dv_out, valid


class BlockMatchingFlow:
    """Coarse-to-fine SAD block matching on channel-mean images.

    For every pixel of the current image, finds the displacement ``d`` such
    that ``prev(x - d)`` best matches ``curr(x)`` over a ``patch`` window, so
    the flow is expressed at current-frame coordinates. Each pyramid level
    searches ``+-search_radius`` pixels around the upsampled coarser estimate,
    then refines with a parabola fit on the score.
    """

    def __init__(self, patch=(5, 3), search_radius=4, levels=2, vectorized=False):
        self.patch = tuple(patch)
        # the numpy path is a slow cross-check of the compiled kernel
        self.vectorized = vectorized
        self.radius = int(search_radius)
        self.levels = int(levels)
        r = self.radius
        du, dv = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
        du, dv = du.ravel(), dv.ravel()
        # ties resolve toward the smallest displacement
        order = np.lexsort((np.abs(dv), np.abs(du), np.abs(du) + np.abs(dv)))
        self._du = np.ascontiguousarray(du[order].astype(np.int64))
        self._dv = np.ascontiguousarray(dv[order].astype(np.int64))
        self._flat = (r - self._du) * (2 * r + 1) + (r - self._dv)
        self._lut = np.empty((2 * r + 1) ** 2, dtype=int)
        self._lut[(self._du + r) * (2 * r + 1) + (self._dv + r)] = np.arange(len(self._du))

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.patch, cfg.search_radius, cfg.levels)

    def _match(self, a, b, guess):
        """One level: search around integer ``guess`` (E, 2, W, H)."""
        if not self.vectorized:
            pu, pv = self.patch[0] // 2, self.patch[1] // 2
            du, dv, valid = _match_kernel(a.astype(np.float64), b.astype(np.float64),
                                          np.ascontiguousarray(guess[:, 0]), np.ascontiguousarray(guess[:, 1]),
                                          self._du, self._dv, self._lut, self.radius, pu, pv)
            return np.stack([du, dv], axis=1), valid
        a = a.astype(np.float64)
        b = b.astype(np.float64)
        E, W, H = b.shape
        r = self.radius
        pu, pv = self.patch[0] // 2, self.patch[1] // 2
        iu = np.arange(W)[None, :, None]
        iv = np.arange(H)[None, None, :]
        gu, gv = guess[:, 0], guess[:, 1]
        # warp prev by the guess so the residual search is centered at zero
        eidx = np.arange(E)[:, None, None]
        aw = a[eidx, np.clip(iu - gu, 0, W - 1), np.clip(iv - gv, 0, H - 1)]

        ap = np.pad(aw, ((0, 0), (pu + r, pu + r), (pv + r, pv + r)), mode="edge")
        bp = np.pad(b, ((0, 0), (pu, pu), (pv, pv)), mode="edge")
        win = sliding_window_view(ap, (2 * r + 1, 2 * r + 1), axis=(1, 2))
        ad = np.abs(bp[..., None, None] - win)
        cost = _box_sum(ad, 2 * pu + 1, 2 * pv + 1)  # (E, W, H, 2r+1, 2r+1)
        cost = cost.reshape(E, W, H, -1)[..., self._flat]

        tu = gu[..., None] + self._du
        tv = gv[..., None] + self._dv
        src_ok = ((iu[..., None] - tu >= 0) & (iu[..., None] - tu < W)
                  & (iv[..., None] - tv >= 0) & (iv[..., None] - tv < H))
        cost = np.where(src_ok, cost, np.inf)

        best = np.argmin(cost, axis=-1)
        c0 = np.take_along_axis(cost, best[..., None], -1)[..., 0]
        finite = np.where(np.isfinite(cost), cost, -np.inf)
        valid = finite.max(axis=-1) > c0

        bu = self._du[best]
        bv = self._dv[best]
        full = cost.reshape(E, W, H, -1)
        sub = []
        for axis_d, (ou, ov) in ((bu, (1, 0)), (bv, (0, 1))):
            cm = self._cost_at(full, bu - ou, bv - ov)
            cp = self._cost_at(full, bu + ou, bv + ov)
            den = cm - 2.0 * c0 + cp
            ok = np.isfinite(cm) & np.isfinite(cp) & (den > 0) & (c0 > 0)
            with np.errstate(invalid="ignore", divide="ignore"):
                off = np.where(ok, 0.5 * (cm - cp) / np.where(ok, den, 1.0), 0.0)
            sub.append(np.clip(off, -0.5, 0.5))
        du = np.where(valid, gu + bu + sub[0], 0.0)
        dv = np.where(valid, gv + bv + sub[1], 0.0)
        return np.stack([du, dv], axis=1), valid

    def _cost_at(self, cost, du, dv):
        r = self.radius
        inside = (np.abs(du) <= r) & (np.abs(dv) <= r)
        k = self._lut[(np.clip(du, -r, r) + r) * (2 * r + 1) + (np.clip(dv, -r, r) + r)]
        c = np.take_along_axis(cost, k[..., None], -1)[..., 0]
        return np.where(inside, c, np.inf)

    def __call__(self, prev, curr):
        """``prev``, ``curr``: stacked images ``(..., 3, W, H)`` -> :class:`FlowField`."""
        prev = np.asarray(prev, dtype=np.float64)
        curr = np.asarray(curr, dtype=np.float64)
        lead = curr.shape[:-3]
        W, H = curr.shape[-2:]
        a = prev.mean(axis=-3).reshape((-1, W, H))
        b = curr.mean(axis=-3).reshape((-1, W, H))
        E = b.shape[0]

        pyramid = [(a, b)]
        for _ in range(self.levels - 1):
            pa, pb = pyramid[-1]
            w2, h2 = pa.shape[1] // 2, pa.shape[2] // 2
            pyramid.append((pa.reshape(E, w2, 2, h2, 2).mean(axis=(2, 4)),
                            pb.reshape(E, w2, 2, h2, 2).mean(axis=(2, 4))))

        flow = np.zeros((E, 2) + pyramid[-1][1].shape[1:])
        valid = None
        for level in range(self.levels - 1, -1, -1):
            la, lb = pyramid[level]
            if flow.shape[-2:] != lb.shape[1:]:
                flow = 2.0 * flow.repeat(2, axis=-2).repeat(2, axis=-1)
            guess = np.rint(flow).astype(np.int64)
            flow, valid = self._match(la, lb, guess)

        degenerate = (np.ptp(a.reshape(E, -1), axis=1) == 0) | (np.ptp(b.reshape(E, -1), axis=1) == 0)
        flow[degenerate] = 0.0
        valid[degenerate] = False
        return FlowField(flow=flow.reshape(lead + (2, W, H)), valid=valid.reshape(lead + (W, H)))


class PointFlowPipeline:
    """Streaming grayscale frames -> ``(E, 2, 36, 6)`` point flow.

    At frame ``k`` (0-based, per environment) the flow ``F_k`` compares the
    stacked images ``I_{k-n+3}`` and ``I_k``; the emission is the plain mean of
    the last ``average_span`` flows, bilinearly downsampled and divided by
    ``(z_h, z_w)``. Emissions are exactly zero until the history is full.
    """

    def __init__(self, cfg, n_envs=1, estimator=None):
        self.cfg = cfg
        self.n_envs = n_envs
        if estimator is None and cfg.estimator == "block":
            estimator = BlockMatchingFlow.from_config(cfg)
        self.estimator = estimator
        self.k = np.zeros(n_envs, dtype=int)
        W, H = cfg.resized_shape
        lag = cfg.window - 3
        self._frames = np.zeros((n_envs, 3, W, H), dtype=np.float32)
        self._stacks = np.zeros((n_envs, lag + 1, 3, W, H), dtype=np.float32)
        self._flows = np.zeros((n_envs, cfg.average_span, 2, W, H))
        self.last_field = None

    def reset(self, envs=None):
        idx = slice(None) if envs is None else np.asarray(envs)
        self.k[idx] = 0
        self._frames[idx] = 0
        self._stacks[idx] = 0
        self._flows[idx] = 0

    def push(self, gray, envs=None):
        """Consume one ``(E, 108, 18)`` grayscale frame per environment.

        ``envs`` restricts the update to a subset; ``gray`` then holds one
        frame per listed environment and the result is ``(len(envs), 2, 36, 6)``.
        """
        cfg = self.cfg
        idx = np.arange(self.n_envs) if envs is None else np.asarray(envs, dtype=int)
        gray = np.asarray(gray).reshape((len(idx),) + np.shape(gray)[-2:])
        out = np.zeros((len(idx), 2) + tuple(cfg.out_shape))
        if self.estimator is None or len(idx) == 0:
            self.k[idx] += 1
            return out
        k = self.k[idx]
        resized = resize_bilinear(gray, cfg.resized_shape).astype(np.float32)
        frames = np.roll(self._frames[idx], -1, axis=1)
        frames[:, -1] = resized
        stacks = np.roll(self._stacks[idx], -1, axis=1)
        stacks[:, -1] = frames
        flows = np.roll(self._flows[idx], -1, axis=1)
        flows[:, -1] = 0.0

        ready = np.flatnonzero(k >= cfg.window - 1)
        if ready.size:
            ff = self.estimator(stacks[ready, 0], stacks[ready, -1])
            flows[ready, -1] = ff.flow
            self.last_field = ff
        full = np.flatnonzero(k >= cfg.warmup)
        if full.size:
            mean = flows[full].mean(axis=1)
            low = resize_bilinear(mean, tuple(cfg.out_shape))
            out[full, 0] = low[:, 0] / cfg.z_h
            out[full, 1] = low[:, 1] / cfg.z_w
        self._frames[idx] = frames
        self._stacks[idx] = stacks
        self._flows[idx] = flows
        self.k[idx] += 1
        return out


def _color_wheel():
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    cols = []
    for n, start, end in ((ry, (255, 0, 0), (255, 255, 0)), (yg, (255, 255, 0), (0, 255, 0)),
                          (gc, (0, 255, 0), (0, 255, 255)), (cb, (0, 255, 255), (0, 0, 255)),
                          (bm, (0, 0, 255), (255, 0, 255)), (mr, (255, 0, 255), (255, 0, 0))):
        f = np.arange(n)[:, None] / n
        cols.append(np.array(start)[None] * (1 - f) + np.array(end)[None] * f)
    return np.concatenate(cols) / 255.0


def flow_to_color(flow, max_norm=None):
    """Middlebury-style color coding of a ``(2, W, H)`` flow -> ``(H, W, 3)`` RGB."""
    u, v = np.asarray(flow, dtype=float)
    rad = np.hypot(u, v)
    if max_norm is None:
        max_norm = max(float(rad.max()), 1e-9)
    u, v, rad = u / max_norm, v / max_norm, np.clip(rad / max_norm, 0, 1)
    wheel = _color_wheel()
    ncols = len(wheel)
    ang = np.arctan2(-v, -u) / np.pi
    fk = (ang + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = (1 - f) * wheel[k0] + f * wheel[k1]
    col = np.clip(1 - rad[..., None] * (1 - col), 0.0, 1.0)
    return np.transpose(col, (1, 0, 2))[::-1]
