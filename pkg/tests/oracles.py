"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops or numpy so that it
shares no code path with the package under test.
"""
import math

import numpy as np


def hausdorff_directed_loop(a, b):
    best = 0.0
    for ax, ay in a:
        nearest = math.inf
        for bx, by in b:
            dx, dy = ax - bx, ay - by
            nearest = min(nearest, math.sqrt(dx * dx + dy * dy))
        best = max(best, nearest)
    return best


def hausdorff_twoway_loop(a, b):
    return max(hausdorff_directed_loop(a, b), hausdorff_directed_loop(b, a))


def avg_pool2_loop(img):
    h, w = img.shape
    out = np.zeros((h // 2, w // 2))
    for i in range(h // 2):
        for j in range(w // 2):
            out[i, j] = img[2 * i:2 * i + 2, 2 * j:2 * j + 2].sum() / 4.0
    return out


def bilinear_sample_loop(img, x, y):
    """Zero-padded bilinear sample at pixel coordinates (x = column)."""
    h, w = img.shape
    x0, y0 = math.floor(x), math.floor(y)
    total = 0.0
    for xi, wx in ((x0, 1 - (x - x0)), (x0 + 1, x - x0)):
        for yi, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
            if 0 <= xi < w and 0 <= yi < h:
                total += wx * wy * img[yi, xi]
    return total


def gaussian_window(size, sigma):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_loop(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, L=1.0):
    """Three-factor l*c*s evaluated window by window with c3 = c2 / 2."""
    g = gaussian_window(window, sigma)
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    c3 = c2 / 2
    h, w = a.shape
    vals = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            pa = a[i:i + window, j:j + window]
            pb = b[i:i + window, j:j + window]
            ma, mb = (g * pa).sum(), (g * pb).sum()
            va = (g * (pa - ma) ** 2).sum()
            vb = (g * (pb - mb) ** 2).sum()
            cov = (g * (pa - ma) * (pb - mb)).sum()
            sa, sb = math.sqrt(max(va, 0)), math.sqrt(max(vb, 0))
            lum = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1)
            con = (2 * sa * sb + c2) / (va + vb + c2)
            st = (cov + c3) / (sa * sb + c3)
            vals.append(lum * con * st)
    return float(np.mean(vals))


def frechet_scalar(mu1, var1, mu2, var2):
    return (mu1 - mu2) ** 2 + (math.sqrt(var1) - math.sqrt(var2)) ** 2


def central_difference(f, x, eps=1e-6):
    """Gradient of scalar ``f`` at numpy array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f(x)
        x[idx] = old - eps
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g
