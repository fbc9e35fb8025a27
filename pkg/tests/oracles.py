"""Independent reference computations used by the tests.

Nothing here calls the first-order-condition machinery of the package:
conjugates come from direct maximisation, roots from plain bisection.
"""

import math

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def golden_min(f, lo, hi, tol=1e-9, max_iter=200):
    """Vectorised golden-section minimisation of a unimodal ``f`` on ``[lo, hi]``.

    Returns ``(argmin, min)``; ``lo``/``hi`` may be arrays, ``f`` must accept them.
    """
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if np.all(b - a <= tol * np.maximum(1.0, np.abs(a))):
            break
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - GOLDEN * (b - a)
        new_d = a + GOLDEN * (b - a)
        c_eval = np.where(left, new_c, d)
        d_eval = np.where(left, c, new_d)
        f_new = f(np.where(left, new_c, new_d))
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
        c, d = c_eval, d_eval
    x = 0.5 * (a + b)
    return x, f(x)


def grid_sup(f, y, lo=1e-8, hi=1e8, n=400_001):
    """sup_x f(x) - x y: dense log grid followed by golden-section around the best node."""
    x = np.geomspace(lo, hi, n)
    vals = f(x) - x * y
    i = int(np.argmax(vals))
    a, b = x[max(i - 1, 0)], x[min(i + 1, n - 1)]
    _, best = golden_min(lambda s: -(f(s) - s * y), a, b, tol=1e-15)
    return float(max(-best, vals[i]))


def bisect(f, lo, hi, iters=200):
    """Plain bisection for a sign change of ``f`` on ``[lo, hi]``."""
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bidual_residual(lag, x):
    """max |W(x) - min_y {Z(y) + x y}| with the min found by golden-section in log y."""
    x = np.asarray(x, dtype=float)
    w_prime = lag.marginal(x)
    s0 = np.log(w_prime)

    def phi(s):
        y = np.exp(s)
        return lag.conjugate(y) + x * y

    _, mins = golden_min(phi, s0 - 2.0, s0 + 2.0, tol=1e-10)
    return float(np.max(np.abs(lag.value(x) - mins)))
