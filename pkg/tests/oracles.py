"""Independent reference implementations used only by the tests.

Each oracle takes a different computational route from the package code:
dense dummy matrices instead of absorbed fixed effects, grid search instead
of a bracketing optimizer, brute-force enumeration instead of closed forms.
"""

import math

import numpy as np


def dense_design(X, groups):
    """Regressors followed by a full-rank set of fixed-effect dummies.

    Dummies are added one at a time and kept only when they raise the rank,
    so the choice of omitted levels does not depend on any normalisation
    convention.
    """
    X = np.asarray(X, dtype=float)
    Z = X.copy()
    rank = np.linalg.matrix_rank(Z) if Z.shape[1] else 0
    for g in groups:
        for level in np.unique(g):
            d = (g == level).astype(float)[:, None]
            trial = np.hstack([Z, d])
            r = np.linalg.matrix_rank(trial)
            if r > rank:
                Z, rank = trial, r
    return Z


def drop_zero_levels(y, groups):
    """Iteratively remove rows in fixed-effect levels whose outcomes sum to zero."""
    keep = np.ones(y.size, dtype=bool)
    while True:
        before = keep.sum()
        for g in groups:
            for level in np.unique(g[keep]):
                rows = keep & (g == level)
                if y[rows].sum() == 0:
                    keep &= ~rows
        if keep.sum() == before:
            return keep


def poisson_newton(y, Z, tol=1e-13, max_iter=200):
    """Plain Newton-Raphson on the Poisson log-likelihood with step halving."""
    b = np.zeros(Z.shape[1])
    b[-1] = 0.0
    # crude start: regress log(y + 0.5) on Z
    b = np.linalg.lstsq(Z, np.log(y + 0.5), rcond=None)[0]

    def ll(beta):
        eta = Z @ beta
        return float(np.dot(y, eta) - np.exp(eta).sum())

    cur = ll(b)
    for _ in range(max_iter):
        mu = np.exp(Z @ b)
        grad = Z.T @ (y - mu)
        H = Z.T @ (Z * mu[:, None])
        step = np.linalg.solve(H, grad)
        t = 1.0
        while t > 1e-8:
            new = ll(b + t * step)
            if new >= cur - 1e-12:
                break
            t *= 0.5
        b, cur = b + t * step, new
        if np.max(np.abs(t * step)) < tol:
            break
    return b


def dense_ppml(y, X, groups, cluster):
    """Coefficients and clustered SEs on X from a dense-dummy Poisson fit.

    The sandwich is built on the full design and its X-block is reported, with
    the G/(G-1) small-sample factor.
    """
    y = np.asarray(y, dtype=float)
    keep = drop_zero_levels(y, groups)
    y, X, cluster = y[keep], np.asarray(X, dtype=float)[keep], np.asarray(cluster)[keep]
    groups = [np.asarray(g)[keep] for g in groups]
    Z = dense_design(X, groups)
    b = poisson_newton(y, Z)
    mu = np.exp(Z @ b)
    bread = np.linalg.inv(Z.T @ (Z * mu[:, None]))
    scores = Z * (y - mu)[:, None]
    labels = np.unique(cluster)
    S = np.vstack([scores[cluster == c].sum(axis=0) for c in labels])
    G = labels.size
    V = G / (G - 1) * bread @ (S.T @ S) @ bread
    K = X.shape[1]
    return b[:K], np.sqrt(np.diag(V)[:K])


def grid_alpha(llrs, n_grid=100_001):
    """Maximiser of the mixture log-likelihood over an evenly spaced grid."""
    a = np.linspace(0.0, 1.0, n_grid)
    L = np.asarray(llrs, dtype=float)[None, :]
    with np.errstate(divide="ignore"):
        vals = np.logaddexp(np.log(a)[:, None] + L, np.log1p(-a)[:, None]).sum(axis=1)
    return float(a[np.argmax(vals)])


def null_path_by_enumeration(pmf, p):
    """k=-1, k=0 and post-treatment means by direct summation with plain loops."""
    num0 = den0 = numm1 = denm1 = 0.0
    mean = 0.0
    for n, prob in enumerate(pmf):
        q = 1.0 - (1.0 - p) ** n
        s = (1.0 - p) ** n
        num0 += n * q * prob
        den0 += q * prob
        numm1 += n * s * prob
        denm1 += s * prob
        mean += n * prob
    return numm1 / denm1, num0 / den0, mean


def poisson_probs(mu, n_max):
    return np.array([math.exp(-mu + n * math.log(mu) - math.lgamma(n + 1)) for n in range(n_max + 1)])


def random_ppml_instance(rng, max_authors=50, max_months=10, max_regressors=6):
    """Small author x month panel with two fixed-effect factors and clusters by author."""
    n_a = int(rng.integers(8, max_authors + 1))
    n_t = int(rng.integers(3, max_months + 1))
    K = int(rng.integers(1, max_regressors + 1))
    author = np.repeat(np.arange(n_a), n_t)
    month = np.tile(np.arange(n_t), n_a)
    X = rng.normal(scale=0.5, size=(author.size, K))
    if K > 1:
        # one binary column, like an event-time dummy
        X[:, 0] = (rng.random(author.size) < 0.3).astype(float)
    a_fe = rng.normal(scale=0.5, size=n_a)
    t_fe = rng.normal(scale=0.3, size=n_t)
    beta = rng.normal(scale=0.3, size=K)
    mu = np.exp(a_fe[author] + t_fe[month] + X @ beta)
    y = rng.poisson(mu).astype(float)
    return y, X, [author, month], author
