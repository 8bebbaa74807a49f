"""Independent numerical oracles shared by the test modules.

Everything here is deliberately written against the mathematical definition
(finite differences, brute-force enumeration, direct formulas) and never
calls the code paths it is used to check.
"""

import numpy as np


def fd_derivs(f, x0, h=1e-2):
    """Richardson-extrapolated central differences, orders 1..3.

    `f` maps a scalar to an output vector; returns (d1, d2, d3).
    """
    def d1(h):
        return (f(x0 + h) - f(x0 - h)) / (2 * h)

    def d2(h):
        return (f(x0 + h) - 2 * f(x0) + f(x0 - h)) / h**2

    def d3(h):
        return (f(x0 + 2 * h) - 2 * f(x0 + h) + 2 * f(x0 - h) - f(x0 - 2 * h)) / (2 * h**3)

    rich = lambda d: (4.0 * d(h / 2) - d(h)) / 3.0
    return rich(d1), rich(d2), rich(d3)


def directional_fd(loss_of_theta, theta, v, h=1e-6):
    """Central-difference directional derivative of a scalar function."""
    return (loss_of_theta(theta + h * v) - loss_of_theta(theta - h * v)) / (2 * h)


def rel_err(a, b, floor=1e-9):
    """Max-norm relative discrepancy with a floor against zero denominators."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor)


def mlp_reference(layers, x):
    """Straight-line re-evaluation of a tanh MLP: list of (W, b), affine last."""
    h = np.asarray(x, float)
    for W, b in layers[:-1]:
        h = np.tanh(W @ h + b)
    W, b = layers[-1]
    return W @ h + b


def signed_rank_pvalue_bruteforce(ranks, signs_positive, w_plus):
    """P(W+ >= w_plus) over all 2^N equiprobable sign assignments.

    `ranks` are the (possibly tied, average) ranks of |d|; `signs_positive`
    is unused except to document that w_plus came from the observed signs.
    """
    n = len(ranks)
    count = 0
    for mask in range(2**n):
        w = 0.0
        for i in range(n):
            if (mask >> i) & 1:
                w += ranks[i]
        if w >= w_plus - 1e-12:
            count += 1
    return count / 2.0**n


def average_ranks(values):
    """Average ranks (1-based) with tie averaging, direct implementation."""
    values = np.asarray(values, float)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks
