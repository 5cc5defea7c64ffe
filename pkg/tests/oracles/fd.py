"""Finite-difference harnesses for the decoder backward pass."""
import numpy as np

from radarfield.decoder import DecoderConfig, backward, forward, init_weights


def _objective(outs, coef):
    """Smooth scalar of the decoder outputs: linear plus half-square terms."""
    total = 0.0
    grads = []
    for o, c in zip(outs, coef):
        if o is None:
            grads.append(None)
            continue
        total += float((c * o).sum() + 0.5 * (o * o).sum())
        grads.append(c + o)
    return total, grads


def random_decoder_instance(variant, probabilistic, seed, num_rays=6, scans=2,
                            feature_dim=8, hidden_dim=8, **config):
    rng = np.random.default_rng(seed)
    cfg = DecoderConfig(variant=variant, feature_dim=feature_dim, hidden_dim=hidden_dim,
                        num_heads=2, probabilistic=probabilistic, **config)
    w = init_weights(cfg, num_rays, seed=seed)
    # move every tensor off its initial value so no coordinate sits at a special point
    for k in w.tensors:
        w.tensors[k] = w.tensors[k] + rng.normal(0.0, 0.3, w.tensors[k].shape)
    feats = rng.normal(size=(scans, num_rays, feature_dim))
    pos = rng.normal(0.0, 5.0, size=(scans, num_rays, 3))
    outs, _ = forward(feats, pos, w)
    coef = [None if o is None else rng.normal(size=o.shape) for o in outs]
    return w, feats, pos, coef


def decoder_fd_error(w, feats, pos, coef, num_coords=50, h=1e-5, floor=1e-6, seed=0):
    """Max relative error of backward() against central differences on sampled coordinates.

    Central differences of an objective of size L are quantized in steps of
    about ulp(L)/h, so gradients far below 1e-6*|L| cannot be resolved; the
    denominator floor scales with |L| for that reason (key biases, for
    instance, have an exactly zero gradient under softmax).
    """
    outs, cache = forward(feats, pos, w)
    L, g = _objective(outs, coef)
    floor = max(floor, 1e-6 * abs(L))
    grads = backward(cache, w, g[1], g[2], g[3])
    keys = sorted(w.tensors)
    sizes = np.array([w.tensors[k].size for k in keys])
    rng = np.random.default_rng(seed)
    flat_ids = rng.choice(sizes.sum(), size=min(num_coords, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for fid in flat_ids:
        ki = int(np.searchsorted(offsets, fid, side="right") - 1)
        key, local = keys[ki], int(fid - offsets[ki])
        t = w.tensors[key]
        idx = np.unravel_index(local, t.shape)
        old = t[idx]
        t[idx] = old + h
        fp, _ = _objective(forward(feats, pos, w)[0], coef)
        t[idx] = old - h
        fm, _ = _objective(forward(feats, pos, w)[0], coef)
        t[idx] = old
        num = (fp - fm) / (2 * h)
        a = grads[key][idx]
        worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    return worst
