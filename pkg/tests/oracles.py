"""Independent reference implementations used as test oracles.

They are written for clarity, not speed, and share no code with the package.
"""

import math

import numpy as np


def gaussian_kernel_3d(size=7, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    k = g[:, None, None] * g[None, :, None] * g[None, None, :]
    return k / k.sum()


def ssim_brute_force(pred, ref, size=7, sigma=1.5, k1=0.01, k2=0.03):
    """Mean local SSIM over every fully contained window, one window at a time."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(ref, dtype=np.float64)
    peak = float(y.max() - y.min()) or 1.0
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    w = gaussian_kernel_3d(size, sigma)
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            for k in range(x.shape[2] - size + 1):
                px = x[i:i + size, j:j + size, k:k + size]
                py = y[i:i + size, j:j + size, k:k + size]
                mx, my = np.sum(w * px), np.sum(w * py)
                vx = np.sum(w * px * px) - mx * mx
                vy = np.sum(w * py * py) - my * my
                cov = np.sum(w * px * py) - mx * my
                vals.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def psnr_direct(pred, ref):
    mse = float(np.mean((np.asarray(pred, float) - np.asarray(ref, float)) ** 2))
    r = float(np.max(ref) - np.min(ref))
    return math.inf if mse == 0 else 10 * math.log10(r * r / mse)


def dice_direct(a, b):
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    return 2 * np.sum(a & b) / (np.sum(a) + np.sum(b))


def mae_direct(pred, target):
    p, t = np.asarray(pred, float).ravel(), np.asarray(target, float).ravel()
    return sum(abs(ti - pi) for pi, ti in zip(p, t)) / len(p)


def mean_std(values):
    """Sample mean and ddof=1 standard deviation by explicit summation."""
    v = [float(x) for x in values]
    m = sum(v) / len(v)
    if len(v) < 2:
        return m, 0.0
    return m, math.sqrt(sum((x - m) ** 2 for x in v) / (len(v) - 1))


def haar2d_matrix(n):
    """Orthonormal one-level Haar analysis matrix acting on a length-n signal (rows: approx then detail)."""
    h = np.zeros((n, n))
    for i in range(n // 2):
        h[i, 2 * i] = h[i, 2 * i + 1] = 1 / math.sqrt(2)
        h[n // 2 + i, 2 * i] = 1 / math.sqrt(2)
        h[n // 2 + i, 2 * i + 1] = -1 / math.sqrt(2)
    return h
