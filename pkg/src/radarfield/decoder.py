"""Radar decoder: rendered ray features -> per-ray Bernoulli parameters.

Forward and reverse passes are written out by hand in numpy. All arrays
carry a leading scan axis ``B`` so several scans share one pass.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .losses import PredictionParams, logit
from .rfs import MultiBernoulli, PointCloud, mb_sample

__all__ = ["DecoderConfig", "DecoderWeights", "ForwardCache", "VARIANTS",
           "init_weights", "embed_and_fuse", "forward", "backward", "decode",
           "emit_deterministic", "emit_probabilistic", "to_multi_bernoulli"]

TABULAR, MLP, TRANSFORMER, NAIVE_QUERY = "tabular", "mlp", "transformer", "naive_query"
VARIANTS = (TABULAR, MLP, TRANSFORMER, NAIVE_QUERY)

INIT_R = 0.1
INIT_SCALE = 0.5


@dataclass(frozen=True)
class DecoderConfig:
    variant: str = TRANSFORMER
    feature_dim: int = 32
    hidden_dim: int = 32
    num_heads: int = 2
    num_layers: int = 1
    max_offset: float = 1.5
    probabilistic: bool = False
    baseline_zero_offset: bool = False
    # absolute positions of the query variant are raw head outputs times this
    naive_position_scale: float = 10.0
    # return positions are divided by this (meters, the desk radar range) before embedding
    position_norm: float = 100.0
    # post-norm LayerNorm after each residual of the attention blocks
    layer_norm: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if min(self.feature_dim, self.hidden_dim, self.num_heads, self.num_layers) < 1:
            raise ValueError("decoder dimensions must be >= 1")
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if not self.max_offset > 0:
            raise ValueError("max_offset must be positive")
        if not self.position_norm > 0:
            raise ValueError("position_norm must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class DecoderWeights:
    config: DecoderConfig
    tensors: dict
    num_rays: int
    seed: int = 0

    def copy(self):
        return DecoderWeights(self.config, {k: v.copy() for k, v in self.tensors.items()},
                              self.num_rays, self.seed)

    def __getitem__(self, key):
        return self.tensors[key]


def _heads(cfg):
    heads = {"conf": 1, "off": 3}
    if cfg.probabilistic:
        heads["scale"] = 3
    return heads


def _norm_params(t, name, dim):
    t[name + "_g"] = np.ones(dim)
    t[name + "_b"] = np.zeros(dim)


def init_weights(cfg, num_rays, seed=0):
    """Seeded initialisation; confidences start at 0.1 and scales at 0.5 m."""
    rng = np.random.default_rng(seed)
    F, H = cfg.feature_dim, cfg.hidden_dim
    t = {}

    def dense(name, n_in, n_out, std=None):
        std = 1.0 / math.sqrt(n_in) if std is None else std
        t[name + "_w"] = rng.normal(0.0, std, (n_in, n_out))
        t[name + "_b"] = np.zeros(n_out)

    t["pe_w"] = rng.normal(0.0, 0.02, (3, F))
    if cfg.variant == TABULAR:
        t["tab_conf"] = np.full(num_rays, logit(INIT_R))
        t["tab_off"] = np.zeros((num_rays, 3))
        if cfg.probabilistic:
            t["tab_scale"] = np.full((num_rays, 3), math.log(INIT_SCALE))
        return DecoderWeights(cfg, t, num_rays, seed)
    dense("in", F, H)
    if cfg.variant == TRANSFORMER:
        for l in range(cfg.num_layers):
            for p in "qkvo":
                dense(f"l{l}_{p}", H, H)
            dense(f"l{l}_ff1", H, 2 * H)
            dense(f"l{l}_ff2", 2 * H, H, std=0.5 / math.sqrt(2 * H))
            if cfg.layer_norm:
                _norm_params(t, f"l{l}_ln1", H)
                _norm_params(t, f"l{l}_ln2", H)
    elif cfg.variant == NAIVE_QUERY:
        t["queries"] = rng.normal(0.0, 1.0, (num_rays, H))
        for p in "qkvo":
            dense(f"x_{p}", H, H)
        dense("x_ff1", H, 2 * H)
        dense("x_ff2", 2 * H, H, std=0.5 / math.sqrt(2 * H))
        if cfg.layer_norm:
            _norm_params(t, "x_ln1", H)
            _norm_params(t, "x_ln2", H)
    for name, k in _heads(cfg).items():
        dense(f"h_{name}1", H, H)
        dense(f"h_{name}2", H, k, std=0.01)
    t["h_conf2_b"][:] = logit(INIT_R)
    if cfg.probabilistic:
        t["h_scale2_b"][:] = math.log(INIT_SCALE)
    return DecoderWeights(cfg, t, num_rays, seed)


# -- primitive layers ---------------------------------------------------------

def _silu(x):
    s = expit(x)
    return x * s, s


def _silu_grad(x, s, g):
    return g * s * (1.0 + x * (1.0 - s))


def _lin(x, t, name):
    return x @ t[name + "_w"] + t[name + "_b"]


def _lin_back(x, g, t, name, grads):
    grads[name + "_w"] = grads.get(name + "_w", 0) + x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    grads[name + "_b"] = grads.get(name + "_b", 0) + g.reshape(-1, g.shape[-1]).sum(axis=0)
    return g @ t[name + "_w"].T


def _split(x, nh):
    *lead, n, h = x.shape
    return x.reshape(*lead, n, nh, h // nh).swapaxes(-2, -3)


def _merge(x):
    *lead, nh, n, d = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, n, nh * d)


def _attention(q_in, kv_in, t, prefix, nh):
    """Multi-head softmax attention followed by the output projection."""
    q = _split(_lin(q_in, t, prefix + "_q"), nh)
    k = _split(_lin(kv_in, t, prefix + "_k"), nh)
    v = _split(_lin(kv_in, t, prefix + "_v"), nh)
    d = q.shape[-1]
    s = q @ k.swapaxes(-1, -2) / math.sqrt(d)
    s = s - s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    o = _merge(p @ v)
    out = _lin(o, t, prefix + "_o")
    return out, (q_in, kv_in, q, k, v, p, o)


def _attention_back(g, cache, t, prefix, nh, grads):
    q_in, kv_in, q, k, v, p, o = cache
    d = q.shape[-1]
    g_o = _split(_lin_back(o, g, t, prefix + "_o", grads), nh)
    g_p = g_o @ v.swapaxes(-1, -2)
    g_v = p.swapaxes(-1, -2) @ g_o
    g_s = p * (g_p - (g_p * p).sum(axis=-1, keepdims=True)) / math.sqrt(d)
    g_q = g_s @ k
    g_k = g_s.swapaxes(-1, -2) @ q
    g_qin = _lin_back(q_in, _merge(g_q), t, prefix + "_q", grads)
    g_kv = (_lin_back(kv_in, _merge(g_k), t, prefix + "_k", grads)
            + _lin_back(kv_in, _merge(g_v), t, prefix + "_v", grads))
    return g_qin, g_kv


def _ffn(u, t, prefix):
    a = _lin(u, t, prefix + "_ff1")
    z, s = _silu(a)
    return _lin(z, t, prefix + "_ff2"), (u, a, s, z)


def _ffn_back(g, cache, t, prefix, grads):
    u, a, s, z = cache
    g_z = _lin_back(z, g, t, prefix + "_ff2", grads)
    return _lin_back(u, _silu_grad(a, s, g_z), t, prefix + "_ff1", grads)


LN_EPS = 1e-5


def _layer_norm(x, t, name):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * t[name + "_g"] + t[name + "_b"], (xhat, inv)


def _layer_norm_back(g, cache, t, name, grads):
    xhat, inv = cache
    flat_g = g.reshape(-1, g.shape[-1])
    grads[name + "_g"] = grads.get(name + "_g", 0) + (flat_g * xhat.reshape(flat_g.shape)).sum(axis=0)
    grads[name + "_b"] = grads.get(name + "_b", 0) + flat_g.sum(axis=0)
    gx = g * t[name + "_g"]
    return inv * (gx - gx.mean(axis=-1, keepdims=True)
                  - xhat * (gx * xhat).mean(axis=-1, keepdims=True))


def _block(q_in, kv_in, t, prefix, nh, norm):
    """Attention and feed-forward sublayers, each residual; post-norm when ``norm``."""
    a, ac = _attention(q_in, kv_in, t, prefix, nh)
    u = q_in + a
    n1 = None
    if norm:
        u, n1 = _layer_norm(u, t, prefix + "_ln1")
    ff, fc = _ffn(u, t, prefix)
    out = u + ff
    n2 = None
    if norm:
        out, n2 = _layer_norm(out, t, prefix + "_ln2")
    return out, (ac, fc, n1, n2)


def _block_back(g, cache, t, prefix, nh, grads):
    """Returns (grad wrt q_in, grad wrt kv_in)."""
    ac, fc, n1, n2 = cache
    if n2 is not None:
        g = _layer_norm_back(g, n2, t, prefix + "_ln2", grads)
    g_u = g + _ffn_back(g, fc, t, prefix, grads)
    if n1 is not None:
        g_u = _layer_norm_back(g_u, n1, t, prefix + "_ln1", grads)
    g_qin, g_kv = _attention_back(g_u, ac, t, prefix, nh, grads)
    return g_u, g_qin, g_kv


# -- decoder -----------------------------------------------------------------

@dataclass
class ForwardCache:
    feats: np.ndarray
    positions: np.ndarray
    raw_off: np.ndarray
    steps: dict = field(default_factory=dict)


def embed_and_fuse(features, positions, weights):
    """Rendered feature plus the learned linear embedding of the return position."""
    if isinstance(weights, dict):
        pe, norm = weights["pe_w"], 1.0
    else:
        pe, norm = weights.tensors["pe_w"], weights.config.position_norm
    return np.asarray(features, float) + (np.asarray(positions, float) / norm) @ pe


def _as_batch(features, positions):
    f = np.asarray(features, dtype=float)
    p = np.asarray(positions, dtype=float)
    single = f.ndim == 2
    if single:
        f, p = f[None], p[None]
    return f, p, single


def forward(features, positions, weights):
    """Batched forward pass.

    Returns (anchors, offsets, logit_r, log_scale) arrays with a leading scan
    axis and the cache needed by :func:`backward`.
    """
    cfg = weights.config
    t = weights.tensors
    f, p, _ = _as_batch(features, positions)
    B, N, F = f.shape
    if F != cfg.feature_dim:
        raise ValueError(f"feature dim {F} does not match decoder config {cfg.feature_dim}")
    if cfg.variant == TABULAR and N != weights.num_rays:
        raise ValueError(f"tabular decoder was built for {weights.num_rays} rays, got {N}")
    x = f + (p / cfg.position_norm) @ t["pe_w"]
    steps = {"x": x}
    if cfg.variant == TABULAR:
        conf = np.broadcast_to(t["tab_conf"], (B, N)).copy()
        raw_off = np.broadcast_to(t["tab_off"], (B, N, 3)).copy()
        ls = np.broadcast_to(t["tab_scale"], (B, N, 3)).copy() if cfg.probabilistic else None
        outs = {"conf": conf[..., None], "off": raw_off, "scale": ls}
    else:
        h0 = _lin(x, t, "in")
        steps["h0"] = h0
        if cfg.variant == MLP:
            h, s = _silu(h0)
            steps["mlp"] = s
        elif cfg.variant == TRANSFORMER:
            h = h0
            for l in range(cfg.num_layers):
                h, steps[f"l{l}"] = _block(h, h, t, f"l{l}", cfg.num_heads, cfg.layer_norm)
        else:
            Q = np.broadcast_to(t["queries"], (B,) + t["queries"].shape)
            h, steps["x_att"] = _block(Q, h0, t, "x", cfg.num_heads, cfg.layer_norm)
        steps["h"] = h
        outs = {}
        for name in _heads(cfg):
            a1 = _lin(h, t, f"h_{name}1")
            z, s = _silu(a1)
            steps[f"head_{name}"] = (a1, s, z)
            outs[name] = _lin(z, t, f"h_{name}2")
        outs.setdefault("scale", None)
        raw_off = outs["off"]
    K = raw_off.shape[1]
    if cfg.variant == NAIVE_QUERY:
        anchors = np.zeros((B, K, 3))
        offsets = cfg.naive_position_scale * raw_off
    else:
        anchors = p.copy()
        if cfg.baseline_zero_offset:
            offsets = np.zeros_like(raw_off)
        else:
            offsets = cfg.max_offset * np.tanh(raw_off)
    logit_r = outs["conf"][..., 0]
    log_scale = outs["scale"]
    cache = ForwardCache(f, p, raw_off, steps)
    return (anchors, offsets, logit_r, log_scale), cache


def backward(cache, weights, g_offsets, g_logit_r, g_log_scale=None):
    """Gradients of a scalar loss w.r.t. every weight tensor.

    ``g_*`` are loss gradients w.r.t. the forward outputs (same shapes).
    """
    if cache is None:
        raise ValueError("backward needs the cache of a forward pass")
    cfg = weights.config
    t = weights.tensors
    grads = {k: np.zeros_like(v) for k, v in t.items()}
    g_offsets = np.asarray(g_offsets, float).reshape(cache.raw_off.shape)
    g_logit_r = np.asarray(g_logit_r, float).reshape(cache.raw_off.shape[:2])
    if cfg.variant == NAIVE_QUERY:
        g_raw = cfg.naive_position_scale * g_offsets
    elif cfg.baseline_zero_offset:
        g_raw = np.zeros_like(g_offsets)
    else:
        g_raw = g_offsets * cfg.max_offset * (1.0 - np.tanh(cache.raw_off) ** 2)
    if cfg.variant == TABULAR:
        grads["tab_conf"] = g_logit_r.sum(axis=0)
        grads["tab_off"] = g_raw.sum(axis=0)
        if cfg.probabilistic and g_log_scale is not None:
            grads["tab_scale"] = np.asarray(g_log_scale, float).sum(axis=0)
        return grads

    st = cache.steps
    h = st["h"]
    g_out = {"conf": g_logit_r[..., None], "off": g_raw}
    if cfg.probabilistic:
        g_out["scale"] = (np.zeros(cache.raw_off.shape) if g_log_scale is None
                          else np.asarray(g_log_scale, float).reshape(cache.raw_off.shape))
    acc = {}
    g_h = np.zeros_like(h)
    for name in _heads(cfg):
        a1, s, z = st[f"head_{name}"]
        g_z = _lin_back(z, g_out[name], t, f"h_{name}2", acc)
        g_h += _lin_back(h, _silu_grad(a1, s, g_z), t, f"h_{name}1", acc)

    h0 = st["h0"]
    if cfg.variant == MLP:
        g_h0 = _silu_grad(h0, st["mlp"], g_h)
    elif cfg.variant == TRANSFORMER:
        g = g_h
        for l in reversed(range(cfg.num_layers)):
            g_u, g_qin, g_kv = _block_back(g, st[f"l{l}"], t, f"l{l}", cfg.num_heads, acc)
            g = g_u + g_qin + g_kv
        g_h0 = g
    else:
        g_u, g_q, g_h0 = _block_back(g_h, st["x_att"], t, "x", cfg.num_heads, acc)
        acc["queries"] = (g_u + g_q).sum(axis=0)
    g_x = _lin_back(st["x"], g_h0, t, "in", acc)
    acc["pe_w"] = np.einsum("bni,bnj->ij", cache.positions / cfg.position_norm, g_x)
    for k, v in acc.items():
        grads[k] = grads[k] + v
    return grads


def decode(features, positions, weights):
    """Single-scan decode into :class:`PredictionParams`."""
    (a, o, l, s), _ = forward(features, positions, weights)
    return PredictionParams(a[0], o[0], l[0], None if s is None else s[0])


def emit_deterministic(params, threshold=0.5):
    """Points of rays whose existence probability is strictly above threshold."""
    keep = params.r > threshold
    return PointCloud(params.positions[keep], {"ray": np.flatnonzero(keep)})


def to_multi_bernoulli(params, family):
    if params.log_scale is None:
        raise ValueError("probabilistic emission needs predicted scales")
    return MultiBernoulli(params.r, params.positions, np.exp(params.log_scale), family)


def emit_probabilistic(params, family, seed=0):
    """One sampled point cloud from the predicted multi-Bernoulli."""
    cloud = mb_sample(to_multi_bernoulli(params, family), seed)
    return PointCloud(cloud.points, {"ray": cloud.attributes["component"]})
