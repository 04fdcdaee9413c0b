"""Slow, direct reference implementations used as test oracles.

Nothing here imports the package: every formula is written out from
scratch over plain Python lists.
"""

import math


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def rbf(gamma):
    def k(a, b):
        return math.exp(-gamma * sum((x - y) ** 2 for x, y in zip(a, b)))
    return k


def mmd_biased_loops(X, Y, k):
    """MMD_b with the three double sums written as explicit loops."""
    m = len(X)
    xx = xy = yy = 0.0
    for i in range(m):
        for j in range(m):
            xx += k(X[i], X[j])
            yy += k(Y[i], Y[j])
            xy += k(X[i], Y[j])
    return math.sqrt(max(0.0, (xx + yy - 2.0 * xy) / (m * m)))


def median_gamma(points):
    d = sorted(math.dist(points[i], points[j])
               for i in range(len(points)) for j in range(i + 1, len(points)))
    mid = len(d) // 2
    med = d[mid] if len(d) % 2 else 0.5 * (d[mid - 1] + d[mid])
    return 1.0 if med == 0 else 1.0 / (2.0 * med * med)


def weighted_first_entry(Z, D, y):
    """Column maximising |weighted correlation| with the weighted-centred target.

    Columns with zero weighted variance are skipped and ties go to the lowest
    column id.  Returns None when no column is informative.
    """
    n, d = len(Z), len(Z[0])
    tot = sum(D)
    ybar = sum(D[i] * y[i] for i in range(n)) / tot
    vals = {}
    for j in range(d):
        col = [Z[i][j] for i in range(n)]
        cbar = sum(D[i] * col[i] for i in range(n)) / tot
        var = sum(D[i] * (col[i] - cbar) ** 2 for i in range(n))
        if var <= 1e-20 * max(1.0, tot):
            continue
        cov = sum(D[i] * (col[i] - cbar) * (y[i] - ybar) for i in range(n))
        vals[j] = abs(cov) / math.sqrt(var)
    if not vals:
        return None
    top = max(vals.values())
    # mathematically tied columns: lowest id wins
    return min(j for j, v in vals.items() if v >= top * (1.0 - 1e-9))


def gd_kernel_logistic(K, t, reg, lr, epochs):
    """Plain-loop proximal gradient descent for kernel logistic regression."""
    n = len(t)
    alpha = [0.0] * n
    bias = 0.0
    for _ in range(epochs):
        r = []
        for i in range(n):
            z = sum(K[i][j] * alpha[j] for j in range(n)) + bias
            r.append((1.0 / (1.0 + math.exp(-z)) - t[i]) / n)
        grad = [sum(K[i][j] * r[j] for j in range(n)) for i in range(n)]
        alpha = [(alpha[i] - lr * grad[i]) / (1.0 + lr * reg) for i in range(n)]
        bias -= lr * sum(r)
    return alpha, bias
