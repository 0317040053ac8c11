"""Independent reference implementations used by several test modules."""

import numpy as np

from polypwsi.nnet.layers import softmax_xent_batch
from polypwsi.nnet.model import TinyResNet, loss_and_gradients

# One PASS/FAIL line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_LINES = []


def direct_conv(x, weights, biases, stride):
    """Loop-based 'same' cross-correlation for one (C, H, W) input."""
    out_c, in_c, k, _ = weights.shape
    p = k // 2
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    oh, ow = -(-h // stride), -(-w // stride)
    y = np.empty((out_c, oh, ow))
    for o in range(out_c):
        for i in range(oh):
            for j in range(ow):
                win = xp[:, i * stride:i * stride + k, j * stride:j * stride + k]
                y[o, i, j] = (win * weights[o]).sum() + biases[o]
    return y


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_check(model: TinyResNet, x, labels, step=1e-6, per_tensor=6, rng=None):
    """Worst relative error of analytic vs central-difference gradients.

    Checks ``per_tensor`` random coordinates of every parameter tensor.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    _, grads = loss_and_gradients(model, x, labels)

    def loss():
        return softmax_xent_batch(model.forward(x), labels)[0]

    worst = 0.0
    for name, p in model.parameters().items():
        flat, gflat = p.reshape(-1), grads[name].reshape(-1)
        for idx in rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss()
            flat[idx] = orig - step
            down = loss()
            flat[idx] = orig
            numeric = (up - down) / (2 * step)
            worst = max(worst, relative_error(gflat[idx], numeric, floor=1e-7))
    return worst


# Two blocks: an identity shortcut and a projection (stride and width change).
GRADCHECK_STAGES = ((4, 1), (6, 2))


def gradcheck_model(seed):
    rng = np.random.default_rng(seed)
    model = TinyResNet.build(rng, in_channels=3, stem_width=4, stages=GRADCHECK_STAGES,
                             residual_gain=1.0, head_gain=1.0)
    for p in model.parameters().values():
        if p.ndim == 1:
            p[...] = rng.uniform(-0.1, 0.1, p.shape)
    x = rng.normal(size=(2, 3, 6, 6))
    labels = rng.integers(0, 6, size=2)
    return model, x, labels


def cp_bisection_oracle(n, alpha=0.05, iters=60):
    """Clopper-Pearson bounds for every k in 0..n via scipy's binomial CDF.

    Vectorized bisection over k; returns (lower, upper) arrays.
    """
    from scipy.special import bdtr

    k = np.arange(n + 1)
    half = alpha / 2
    # Upper: largest p with P(X <= k) >= alpha/2; the CDF decreases in p.
    lo, hi = np.zeros(n + 1), np.ones(n + 1)
    for _ in range(iters):
        mid = (lo + hi) / 2
        ok = bdtr(k, n, mid) >= half
        lo, hi = np.where(ok, mid, lo), np.where(ok, hi, mid)
    upper = np.where(k == n, 1.0, lo)
    # Lower: smallest p with P(X >= k) = 1 - P(X <= k-1) >= alpha/2.
    lo, hi = np.zeros(n + 1), np.ones(n + 1)
    km1 = np.maximum(k - 1, 0)
    for _ in range(iters):
        mid = (lo + hi) / 2
        ok = 1 - bdtr(km1, n, mid) >= half
        lo, hi = np.where(ok, lo, mid), np.where(ok, mid, hi)
    lower = np.where(k == 0, 0.0, hi)
    return lower, upper


def coverage_map(width, height, spec):
    """Brute-force oracle: count patches covering each pixel."""
    from polypwsi.tiler import tile

    cover = np.zeros((height, width), dtype=int)
    for o in tile(width, height, spec):
        cover[o.y:o.y + spec.patch_height, o.x:o.x + spec.patch_width] += 1
    return cover
