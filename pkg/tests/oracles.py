"""Independent numerical oracles used across the test suite.

These deliberately avoid the library's reverse-mode machinery: gradients come
from central finite differences over fresh forward evaluations, and the rank
statistics are recomputed with naive loops and exhaustive permutations.
"""

import itertools
import math

import numpy as np


def numeric_gradient(f, arrays, h=1e-5):
    """Central finite differences of scalar f(arrays) wrt every array entry."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    """Max elementwise |a - n| / max(|n|, 1); the unit floor absorbs near-zero grads."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(n), 1.0)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def brute_force_ranks(values):
    """Average ranks (1-based, ties averaged) without scipy."""
    values = list(values)
    ranks = [0.0] * len(values)
    for i, v in enumerate(values):
        smaller = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        ranks[i] = smaller + (equal + 1) / 2.0
    return ranks


def brute_force_kruskal_h(groups):
    """H statistic from first principles: rank loops plus the tie correction."""
    pooled = [v for g in groups for v in g]
    n = len(pooled)
    ranks = brute_force_ranks(pooled)
    h = 0.0
    offset = 0
    for g in groups:
        r = ranks[offset : offset + len(g)]
        h += (sum(r) ** 2) / len(g)
        offset += len(g)
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    ties = 0.0
    for v in set(pooled):
        t = pooled.count(v)
        ties += t**3 - t
    correction = 1.0 - ties / (n**3 - n)
    return h / correction


def exact_permutation_pvalue(groups):
    """Exact P(H_perm >= H_obs) by enumerating all regroupings of the pooled data."""
    sizes = [len(g) for g in groups]
    pooled = [v for g in groups for v in g]
    h_obs = brute_force_kruskal_h(groups)
    n = len(pooled)
    count = 0
    total = 0
    indices = list(range(n))
    for assignment in _grouped_assignments(indices, sizes):
        regrouped = [[pooled[i] for i in block] for block in assignment]
        total += 1
        if brute_force_kruskal_h(regrouped) >= h_obs - 1e-12:
            count += 1
    return count / total


def _grouped_assignments(indices, sizes):
    """All ways to split ``indices`` into ordered blocks of the given sizes."""
    if not sizes:
        yield []
        return
    first, rest = sizes[0], sizes[1:]
    for block in itertools.combinations(indices, first):
        remaining = [i for i in indices if i not in block]
        for tail in _grouped_assignments(remaining, rest):
            yield [list(block)] + tail


def brute_force_dunn(groups):
    """Pairwise Dunn z and two-sided p values with plain loops (normal tail via erfc)."""
    pooled = [v for g in groups for v in g]
    n = len(pooled)
    ranks = brute_force_ranks(pooled)
    mean_ranks = []
    offset = 0
    for g in groups:
        mean_ranks.append(sum(ranks[offset : offset + len(g)]) / len(g))
        offset += len(g)
    ties = 0.0
    for v in set(pooled):
        t = pooled.count(v)
        ties += t**3 - t
    var_base = n * (n + 1) / 12.0 - ties / (12.0 * (n - 1))
    k = len(groups)
    p = [[1.0] * k for _ in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            se = math.sqrt(var_base * (1.0 / len(groups[i]) + 1.0 / len(groups[j])))
            z = 0.0 if se == 0 else (mean_ranks[i] - mean_ranks[j]) / se
            tail = 0.5 * math.erfc(abs(z) / math.sqrt(2.0))
            p[i][j] = p[j][i] = 2.0 * tail
    return p
