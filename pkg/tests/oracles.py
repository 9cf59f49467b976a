"""Independent reference implementations used as oracles by the test suite.

Everything here is deliberately naive (explicit loops, no vectorization, no
calls into the package) so a test comparing package output against these is a
genuine cross-check rather than a reimplementation of the same code path.
"""

from __future__ import annotations

import numpy as np


def conv3d_naive(x, weight, bias):
    """Direct triple-loop 3D convolution with zero 'same' padding.

    x: (c_in, d, h, w); weight: (c_out, c_in, kd, kh, kw); bias: (c_out,).
    Returns (c_out, d, h, w).
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    c_in, d, h, w = x.shape
    c_out, _, kd, kh, kw = weight.shape
    pd, ph, pw = kd // 2, kh // 2, kw // 2
    out = np.zeros((c_out, d, h, w))
    for co in range(c_out):
        for z in range(d):
            for y in range(h):
                for xx in range(w):
                    acc = bias[co]
                    for ci in range(c_in):
                        for dz in range(kd):
                            for dy in range(kh):
                                for dx in range(kw):
                                    sz = z + dz - pd
                                    sy = y + dy - ph
                                    sx = xx + dx - pw
                                    if 0 <= sz < d and 0 <= sy < h and 0 <= sx < w:
                                        acc += x[ci, sz, sy, sx] * weight[co, ci, dz, dy, dx]
                    out[co, z, y, xx] = acc
    return out


def maxpool_1x2x2_naive(x):
    """(c, d, h, w) -> (c, d, h//2, w//2), max over each 1x2x2 patch."""
    x = np.asarray(x)
    c, d, h, w = x.shape
    out = np.empty((c, d, h // 2, w // 2), dtype=x.dtype)
    for ci in range(c):
        for z in range(d):
            for y in range(h // 2):
                for xx in range(w // 2):
                    patch = [
                        x[ci, z, 2 * y, 2 * xx],
                        x[ci, z, 2 * y, 2 * xx + 1],
                        x[ci, z, 2 * y + 1, 2 * xx],
                        x[ci, z, 2 * y + 1, 2 * xx + 1],
                    ]
                    out[ci, z, y, xx] = max(patch)
    return out


def upsample_nearest_naive(x):
    """(c, d, h, w) -> (c, d, 2h, 2w) by pixel repetition."""
    x = np.asarray(x)
    c, d, h, w = x.shape
    out = np.empty((c, d, 2 * h, 2 * w), dtype=x.dtype)
    for ci in range(c):
        for z in range(d):
            for y in range(2 * h):
                for xx in range(2 * w):
                    out[ci, z, y, xx] = x[ci, z, y // 2, xx // 2]
    return out


def confusion_counts(pred_mask, target_mask):
    """Brute-force pixel loop: (tp, fp, tn, fn)."""
    pred = np.asarray(pred_mask).ravel()
    target = np.asarray(target_mask).ravel()
    tp = fp = tn = fn = 0
    for p, t in zip(pred, target):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and t:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def mse_double_loop(a, b):
    """Explicit summation mean squared error."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    total = 0.0
    count = 0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (x - y) ** 2
        count += 1
    return total / count


def streaming_mean(values):
    """Running-mean oracle (Welford-style update)."""
    mean = 0.0
    count = 0
    for v in np.asarray(values, dtype=np.float64).ravel():
        count += 1
        mean += (v - mean) / count
    return mean


def rain_fraction_loops(frame, threshold):
    frame = np.asarray(frame)
    hits = 0
    for v in frame.ravel():
        if v > threshold:
            hits += 1
    return hits / frame.size


def fd_gradient(f, theta, step=1e-4):
    """Central finite-difference gradient of scalar f at flat float64 vector theta."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + step
        up = f(bumped)
        bumped[i] = theta[i] - step
        down = f(bumped)
        grad[i] = (up - down) / (2.0 * step)
    return grad


def scheduler_reference(losses, lr0, lr_patience, lr_factor, es_patience):
    """Scalar simulation of the plateau policy: returns (lr per epoch as used,
    1-based stop epoch or None). Improvement = strictly lower than best."""
    lr = lr0
    best = None
    lr_count = 0
    es_count = 0
    lrs = []
    stop_epoch = None
    for i, loss in enumerate(losses, start=1):
        lrs.append(lr)
        if best is None or loss < best:
            best = loss
            lr_count = 0
            es_count = 0
        else:
            lr_count += 1
            es_count += 1
            if lr_count >= lr_patience:
                lr *= lr_factor
                lr_count = 0
            if es_count >= es_patience:
                stop_epoch = i
                break
    return lrs, stop_epoch
