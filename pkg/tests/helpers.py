"""Independent oracles shared by unit and acceptance tests."""
import numpy as np

from shares.evaluator import compile_tree
from shares.expr import n_shapes
from shares.search import random_grow


def finite_difference_grad(model, X, y, step=1e-5):
    """Central differences of the training-mode batch MSE, one parameter at a time."""
    base = model.params.copy()
    out = np.empty_like(base)
    for i in range(base.size):
        model.params[i] = base[i] + step
        up, _, _ = model.loss_and_grad(X, y, training=True)
        model.params[i] = base[i] - step
        down, _, _ = model.loss_and_grad(X, y, training=True)
        model.params[i] = base[i]
        out[i] = (up - down) / (2 * step)
    return out


def gradient_relative_error(model, X, y):
    """max |analytic - numeric| divided by max |numeric|."""
    _, analytic, _ = model.loss_and_grad(X, y, training=True)
    numeric = finite_difference_grad(model, X, y)
    scale = max(np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _min_denominator(model, X):
    _, tape = model._run(X, training=True)
    dens = [np.min(np.abs(t[0])) for ins, t in zip(model._program, tape) if ins[0] == "div"]
    return min(dens) if dens else np.inf


def random_gradient_case(rng, max_vars=4, max_shapes=3, n_rows=16):
    """A compiled random structure with 1..max_shapes shapes and data on which
    no protected division is close to its guard."""
    while True:
        n = int(rng.integers(1, max_vars + 1))
        tree = random_grow(rng, n, max_depth=None)
        if not 1 <= n_shapes(tree) <= max_shapes:
            continue
        model = compile_tree(tree, seed=int(rng.integers(1 << 31)))
        X = rng.uniform(0.5, 2.0, size=(n_rows, n))
        y = rng.normal(size=n_rows)
        if _min_denominator(model, X) > 0.05:
            return model, X, y


def pchip_oracle(xs, ys, x):
    """Shape-preserving piecewise cubic Hermite interpolation (Fritsch-Carlson
    slopes with the three-point end conditions), written from scratch."""
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    h = np.diff(xs)
    m = np.diff(ys) / h
    n = xs.size
    d = np.zeros(n)
    for k in range(1, n - 1):
        if m[k - 1] * m[k] <= 0:
            d[k] = 0.0
        else:
            w1 = 2 * h[k] + h[k - 1]
            w2 = h[k] + 2 * h[k - 1]
            d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k])

    def end(h0, h1, m0, m1):
        e = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
        if np.sign(e) != np.sign(m0):
            return 0.0
        if np.sign(m0) != np.sign(m1) and abs(e) > 3 * abs(m0):
            return 3 * m0
        return e

    d[0] = end(h[0], h[1], m[0], m[1])
    d[-1] = end(h[-1], h[-2], m[-1], m[-2])
    x = float(x)
    k = min(max(int(np.searchsorted(xs, x, side="right")) - 1, 0), n - 2)
    t = (x - xs[k]) / h[k]
    h00 = 2 * t ** 3 - 3 * t ** 2 + 1
    h10 = t ** 3 - 2 * t ** 2 + t
    h01 = -2 * t ** 3 + 3 * t ** 2
    h11 = t ** 3 - t ** 2
    return h00 * ys[k] + h10 * h[k] * d[k] + h01 * ys[k + 1] + h11 * h[k] * d[k + 1]
