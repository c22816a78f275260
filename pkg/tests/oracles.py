"""Independent brute-force references used by the tests."""
from fractions import Fraction

import numpy as np

from widr.model import (
    NetworkConfig,
    backward_batch,
    dropout_mask,
    forward_batch,
    init_params,
    is_buffer,
    softmax,
)

SMALL_NET = NetworkConfig(conv_channels=(4, 6), feature_dim=8, num_classes=3, dropout_rate=0.5, input_side=16)


def otsu_bruteforce(hist):
    """Exhaustive argmax of w0*w1*(mu0-mu1)^2 over all 256 thresholds, exact
    rationals, first maximizer wins."""
    total = sum(int(h) for h in hist)
    best_t, best = None, None
    for t in range(256):
        c0 = [(i, int(hist[i])) for i in range(t + 1)]
        c1 = [(i, int(hist[i])) for i in range(t + 1, 256)]
        n0 = sum(c for _, c in c0)
        n1 = sum(c for _, c in c1)
        if n0 == 0 or n1 == 0:
            var = Fraction(0)
        else:
            w0, w1 = Fraction(n0, total), Fraction(n1, total)
            mu0 = Fraction(sum(i * c for i, c in c0), n0)
            mu1 = Fraction(sum(i * c for i, c in c1), n1)
            var = w0 * w1 * (mu0 - mu1) ** 2
        if best is None or var > best:
            best_t, best = t, var
    return best_t


def ap_bruteforce(rel):
    """AP by explicitly recounting hits in the top-k prefix at every rank."""
    R = sum(rel)
    s = 0.0
    for k in range(1, len(rel) + 1):
        if rel[k - 1]:
            s += sum(rel[:k]) / k
    return s / R


def conv2d_reference(x, w, stride=2, pad=1):
    """Direct nested-loop convolution (cross-correlation)."""
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i * stride : i * stride + k, j * stride : j * stride + k]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3]))
    return out


def numeric_grad(params, loss_fn, h=1e-6):
    out = {}
    for name, t in params.tensors.items():
        if is_buffer(name):
            continue
        g = np.zeros_like(t)
        for idx in np.ndindex(t.shape):
            old = t[idx]
            t[idx] = old + h
            a = loss_fn()
            t[idx] = old - h
            b = loss_fn()
            t[idx] = old
            g[idx] = (a - b) / (2 * h)
        out[name] = g
    return out


def backprop_relative_error(seed, train_mode):
    """Norm-relative gap between analytic and central-difference parameter
    gradients of the mean cross-entropy on a random 3-sample batch."""
    rng = np.random.default_rng(seed)
    params = init_params(SMALL_NET, seed)
    for name, t in params.tensors.items():  # perturb away from gamma=1, beta=0
        if not is_buffer(name):
            t += rng.normal(scale=0.1, size=t.shape)
    x = rng.random((3, 1, 16, 16))
    q = rng.dirichlet(np.ones(3), size=3)
    mask = dropout_mask((3, 8), 0.5, seed) if train_mode else None

    def loss():
        logits, _, _ = forward_batch(params, x, mask, train_mode)
        return float(-(q * np.log(softmax(logits))).sum(axis=1).mean())

    logits, _, cache = forward_batch(params, x, mask, train_mode)
    analytic = backward_batch(params, cache, (softmax(logits) - q) / 3)
    numeric = numeric_grad(params, loss)
    a = np.concatenate([analytic[k].ravel() for k in numeric])
    n = np.concatenate([numeric[k].ravel() for k in numeric])
    return np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n))
