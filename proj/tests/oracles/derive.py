"""Independent oracles for the constants frozen in the C++ unit tests.

Run with: python3 tests/oracles/derive.py
"""
import math

import mpmath
import numpy as np
from skimage.metrics import structural_similarity

mpmath.mp.dps = 50


def alpha_bar_linear(T, b0, b1, t):
    prod = mpmath.mpf(1)
    for s in range(1, t + 1):
        beta = mpmath.mpf(b0) + (mpmath.mpf(b1) - mpmath.mpf(b0)) * (s - 1) / (T - 1)
        prod *= 1 - beta
    return prod


def texture(c, h, w):
    i = np.arange(h)[:, None]
    j = np.arange(w)[None, :]
    return np.stack([0.5 + 0.4 * np.sin(0.7 * i + 1.3 * j + k) for k in range(c)])


def ssim_unit(a, b):
    return np.mean([
        structural_similarity(a[k], b[k], data_range=1.0, gaussian_weights=True, sigma=1.5,
                              use_sample_covariance=False, K1=0.01, K2=0.03)
        for k in range(a.shape[0])
    ])


def main():
    print("alpha_bar[1]    =", mpmath.nstr(alpha_bar_linear(1000, "1e-4", "0.02", 1), 17))
    print("alpha_bar[500]  =", mpmath.nstr(alpha_bar_linear(1000, "1e-4", "0.02", 500), 17))
    print("alpha_bar[1000] =", mpmath.nstr(alpha_bar_linear(1000, "1e-4", "0.02", 1000), 17))
    print("sqrt(0.729)     =", mpmath.nstr(mpmath.sqrt(mpmath.mpf("0.729")), 17))

    x = texture(3, 32, 32)
    print("ssim(tex, 1-tex) =", repr(ssim_unit(x, 1.0 - x)))
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    print("ssim const .25 vs .75 =", repr((2 * 0.25 * 0.75 + c1) / (0.25 ** 2 + 0.75 ** 2 + c1)))
    print("ssim(const .25, const .75) via skimage =",
          repr(ssim_unit(np.full((3, 16, 16), 0.25), np.full((3, 16, 16), 0.75))))

    print("psnr 0 vs 0.5 =", repr(10 * math.log10(1 / 0.25)))
    # two samples: errors 0.1 and 0.2 everywhere
    a, b = 10 * math.log10(1 / 0.01), 10 * math.log10(1 / 0.04)
    print("psnr pair mean/std =", repr((a + b) / 2), repr(abs(a - b) / 2))

    # brute-force window pairing: frontal t=10, ego t=0..19, window 5, keep 10
    cands = [t for t in range(20) if abs(t - 10) <= 5]
    chosen = sorted(cands, key=lambda t: (abs(t - 10), t))[:10]
    print("paired ego timestamps =", sorted(chosen))

    # User-study ballots whose Borda scores and mean ranks match the target totals
    ballots = [("U", "S", "E", "M")] * 23 + [("S", "U", "E", "M")] * 6 + \
              [("U", "S", "M", "E")] * 10 + [("U", "E", "S", "M")] * 2
    for m in "USEM":
        bs = sum(4 - (b.index(m) + 1) for b in ballots)
        mr = sum(b.index(m) + 1 for b in ballots) / len(ballots)
        print(f"{m}: BS={bs} MR={mr:.4f}")

    # ellipse split counts, rows 8..55 of a 64x64 frame
    yy, xx = np.mgrid[0:64, 0:64]
    ell = ((yy - 31.5) / 24) ** 2 + ((xx - 31.5) / 12) ** 2 <= 1
    rows = np.where(ell.any(1))[0]
    hip = rows[0] + 0.5 * (rows[-1] - rows[0] + 1)
    print("ellipse upper/lower =", int(ell[yy < hip].sum()), int(ell[yy >= hip].sum()))


if __name__ == "__main__":
    main()
