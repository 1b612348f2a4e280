"""Independent reference implementations used only to check the package.

Everything here is deliberately naive (recursion, itertools enumeration,
pure-python loops) and shares no code with the implementation under test.
"""

import itertools

import numpy as np


def naive_basis(x, i, k, t):
    """Textbook recursive Cox-de Boor evaluation of one basis function."""
    if k == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    left = 0.0
    if t[i + k] != t[i]:
        left = (x - t[i]) / (t[i + k] - t[i]) * naive_basis(x, i, k - 1, t)
    right = 0.0
    if t[i + k + 1] != t[i + 1]:
        right = ((t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1])
                 * naive_basis(x, i + 1, k - 1, t))
    return left + right


def naive_basis_vector(x, grid):
    t = grid.knots.tolist()
    return np.array([naive_basis(x, i, grid.degree, t)
                     for i in range(grid.n_basis)])


def reference_adam(params, grad_fn, lr, beta1, beta2, eps, steps):
    """Plain-python Adam trajectory over a list of scalar parameters."""
    params = [float(p) for p in params]
    m = [0.0] * len(params)
    v = [0.0] * len(params)
    history = []
    for t in range(1, steps + 1):
        grads = grad_fn(params)
        for i, g in enumerate(grads):
            m[i] = beta1 * m[i] + (1 - beta1) * g
            v[i] = beta2 * v[i] + (1 - beta2) * g * g
            mhat = m[i] / (1 - beta1 ** t)
            vhat = v[i] / (1 - beta2 ** t)
            params[i] -= lr * mhat / (vhat ** 0.5 + eps)
        history.append(list(params))
    return history


def brute_force_wilcoxon(a, b):
    """Exact two-sided signed-rank p-value by looping over all sign patterns.

    Returns (w_plus, p). Zero differences are dropped; tied |d| get averaged
    ranks computed by explicit position grouping.
    """
    d = [x - y for x, y in zip(a, b) if x - y != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = sort_based_ranks([abs(x) for x in d], higher_is_better=False)
    w_obs = sum(r for r, x in zip(ranks, d) if x > 0)
    le = ge = 0
    total = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(ranks, signs) if s)
        le += w <= w_obs
        ge += w >= w_obs
        total += 1
    return w_obs, min(1.0, 2.0 * min(le / total, ge / total))


def sort_based_ranks(scores, higher_is_better=True):
    """Averaged-tie ranks via explicit sorting and position grouping."""
    keyed = sorted(range(len(scores)),
                   key=lambda i: -scores[i] if higher_is_better else scores[i])
    positions = {}
    for pos, i in enumerate(keyed, start=1):
        positions.setdefault(scores[i], []).append((pos, i))
    ranks = [0.0] * len(scores)
    for group in positions.values():
        avg = sum(pos for pos, _ in group) / len(group)
        for _, i in group:
            ranks[i] = avg
    return ranks


def central_difference(f, x, step=1e-5):
    """Central finite difference of a scalar function at scalar x."""
    return (f(x + step) - f(x - step)) / (2 * step)


def relative_error(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale
