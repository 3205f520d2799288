"""Poisson pseudo-maximum likelihood with absorbed fixed effects.

The outer loop is IRLS on the log link. Each weighted least-squares step
absorbs the fixed effects by weighted alternating projections (repeated
within-group demeaning, one factor at a time). Demeaned regressors are carried
across IRLS iterations as warm starts: the within transformation annihilates
the fixed-effect span, so demeaning an already demeaned matrix under new
weights gives the same answer as demeaning the raw matrix.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy import stats

from .exceptions import ConvergenceError, InputError

log = logging.getLogger(__name__)

# block sizes that bound temporaries at paper scale (millions of rows)
_COL_BLOCK = 8
_ROW_BLOCK = 1 << 18


@dataclass(frozen=True)
class FeSpec:
    """Categorical factors to absorb, each given as integer codes per row."""

    groups: tuple

    @classmethod
    def from_labels(cls, *labels) -> "FeSpec":
        return cls(tuple(np.unique(np.asarray(lab), return_inverse=True)[1].astype(np.int64) for lab in labels))

    def __len__(self):
        return len(self.groups)


@dataclass
class EventStudyFit:
    """Estimates, cluster-robust covariance and convergence diagnostics.

    Coefficients dropped for collinearity or separation are NaN in ``coef``,
    ``se`` and the matching rows/columns of ``vcov``.
    """

    labels: tuple
    coef: np.ndarray
    vcov: np.ndarray
    se: np.ndarray
    event_times: tuple
    n_obs: int
    n_dropped: int
    n_clusters: int
    converged: bool
    iterations: int
    deviance: float
    trace: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def gamma(self) -> Dict[int, float]:
        """Event-time coefficient by k, for columns tied to a single k."""
        return {k: float(b) for k, b in zip(self.event_times, self.coef) if k is not None}

    @property
    def se_by_k(self) -> Dict[int, float]:
        return {k: float(s) for k, s in zip(self.event_times, self.se) if k is not None}

    def column(self, k) -> int:
        if isinstance(k, str):
            return self.labels.index(k)
        try:
            return self.event_times.index(k)
        except ValueError:
            raise KeyError(f"no coefficient for event time {k}") from None


class WaldResult(NamedTuple):
    t: float
    reject: bool
    sign: int
    reject_positive: bool


# -- fixed-effect absorption -------------------------------------------------

class WithinTransform:
    """Weighted alternating projections onto the orthogonal complement of the
    fixed-effect dummies."""

    def __init__(self, groups: Sequence[np.ndarray], n: int):
        self.n = n
        self.groups = [np.asarray(g, dtype=np.int64) for g in groups]
        self.sizes = [int(g.max()) + 1 if g.size else 0 for g in self.groups]
        self._rows = np.arange(n)
        self.set_weights(np.ones(n))

    def set_weights(self, w: np.ndarray) -> None:
        self.w = np.asarray(w, dtype=float)
        self._ops = []
        for g, size in zip(self.groups, self.sizes):
            op = sp.csr_matrix((self.w, (g, self._rows)), shape=(size, self.n))
            wsum = np.asarray(op.sum(axis=1)).ravel()
            self._ops.append((op, wsum, g))

    def demean(self, M: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000, copy: bool = True) -> np.ndarray:
        """Return the weighted within-transformation of ``M`` (1-d or 2-d).

        Columns are processed a few at a time so temporaries stay small. With
        ``copy=False`` a float ``M`` is overwritten.
        """
        M = np.asarray(M, dtype=float)
        vector = M.ndim == 1
        R = M.reshape(self.n, -1)
        if copy or not R.flags.writeable:
            R = R.copy()
        if not self._ops or R.shape[1] == 0:
            return R.ravel() if vector else R
        sweeps = 0
        for j in range(0, R.shape[1], _COL_BLOCK):
            sweeps = max(sweeps, self._demean_block(R[:, j:j + _COL_BLOCK], tol, max_iter))
        self.last_sweeps = sweeps
        return R.ravel() if vector else R

    def _demean_block(self, R, tol, max_iter):
        scale = np.maximum(np.abs(R).max(axis=0), 1.0)
        single = len(self._ops) == 1
        for it in range(max_iter):
            delta = np.zeros(R.shape[1])
            for op, wsum, g in self._ops:
                means = (op @ R) / wsum[:, None]
                R -= np.take(means, g, axis=0)
                delta = np.maximum(delta, np.abs(means).max(axis=0))
            if single or np.all(delta <= tol * scale):
                return it + 1
        raise ConvergenceError(f"alternating projections did not converge in {max_iter} sweeps")


def _row_blocks(n: int):
    for start in range(0, n, _ROW_BLOCK):
        yield slice(start, min(n, start + _ROW_BLOCK))


def _weighted_cross(Xt: np.ndarray, w: np.ndarray, v: np.ndarray = None):
    """``Xt' W Xt`` (and ``Xt' W v``) accumulated over row blocks."""
    K = Xt.shape[1]
    B = np.zeros((K, K))
    c = np.zeros(K)
    for sl in _row_blocks(Xt.shape[0]):
        wa = Xt[sl] * w[sl, None]
        B += Xt[sl].T @ wa
        if v is not None:
            c += wa.T @ v[sl]
    return B, c


# -- estimation ----------------------------------------------------------------

def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def _drop_perfectly_predicted(y, X, groups):
    """Rows that PPML fits exactly at mu = 0 carry no information.

    Repeatedly drops fixed-effect levels whose outcomes sum to zero and
    non-negative regressors whose support only contains zero outcomes
    (the coefficient diverges to -inf; it is reported as absent).
    """
    keep = np.ones(y.size, dtype=bool)
    separated = np.zeros(X.shape[1], dtype=bool)
    while True:
        before = keep.sum()
        for g in groups:
            tot = np.bincount(g[keep], weights=y[keep], minlength=int(g.max()) + 1 if g.size else 0)
            keep &= tot[g] > 0
        for j in range(X.shape[1]):
            if separated[j]:
                continue
            xj = X[keep, j]
            if xj.size and np.all(xj >= 0) and np.any(xj > 0) and np.dot(xj, y[keep]) == 0:
                separated[j] = True
                keep[np.flatnonzero(keep)[xj > 0]] = False
        if keep.sum() == before:
            return keep, separated


def _independent_columns(X, Xt, w, rtol=1e-9):
    """Rank-revealing QR on the weighted, demeaned regressors.

    A column whose demeaned norm is negligible next to its raw norm lies in the
    fixed-effect span and is dropped before the QR. The triangular factor is
    accumulated over row blocks, then pivoted.
    """
    K = Xt.shape[1]
    if K == 0:
        return np.zeros(0, dtype=bool)
    sw = np.sqrt(w)
    norms2, raw2 = np.zeros(K), np.zeros(K)
    for sl in _row_blocks(Xt.shape[0]):
        norms2 += np.sum((Xt[sl] * sw[sl, None]) ** 2, axis=0)
        raw2 += np.sum((X[sl] * sw[sl, None]) ** 2, axis=0)
    norms, raw = np.sqrt(norms2), np.sqrt(raw2)
    raw_ok = norms > 1e-7 * raw
    ok = np.zeros(K, dtype=bool)
    if not raw_ok.any():
        return ok
    cols = np.flatnonzero(raw_ok)
    R = np.zeros((0, cols.size))
    for sl in _row_blocks(Xt.shape[0]):
        block = Xt[sl][:, cols] * (sw[sl, None] / norms[cols])
        R = np.linalg.qr(np.vstack([R, block]), mode="r")
    _, R, piv = scipy.linalg.qr(R, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > rtol * max(d[0], 1e-300)))
    ok[cols[np.sort(piv[:rank])]] = True
    return ok


def cluster_vcov(Xt: np.ndarray, w: np.ndarray, resid: np.ndarray, cluster: np.ndarray) -> np.ndarray:
    """Cluster-robust sandwich ``G/(G-1) B^-1 M B^-1``.

    ``B = Xt' diag(w) Xt`` is the expected Hessian of the demeaned regressors
    and ``M`` sums outer products of the per-cluster score totals
    ``sum (y - mu) * xt``.
    """
    codes = np.unique(cluster, return_inverse=True)[1]
    G = int(codes.max()) + 1 if codes.size else 0
    if G < 2:
        raise InputError("cluster-robust covariance needs at least two clusters")
    B, _ = _weighted_cross(Xt, w)
    U = np.zeros((G, Xt.shape[1]))
    for sl in _row_blocks(Xt.shape[0]):
        c = codes[sl]
        S = sp.csr_matrix((np.ones(c.size), (c, np.arange(c.size))), shape=(G, c.size))
        U += S @ (Xt[sl] * resid[sl, None])
    M = U.T @ U
    Binv = scipy.linalg.pinvh(B)
    V = G / (G - 1.0) * (Binv @ M @ Binv)
    return 0.5 * (V + V.T)


def fit_ppml(y, X, fe: FeSpec, cluster=None, labels: Optional[Sequence[str]] = None,
             event_times: Optional[Sequence] = None, tol: float = 1e-8, max_iter: int = 100,
             inner_tol: float = 1e-10, max_inner: int = 10_000) -> EventStudyFit:
    """Fit ``E[y] = exp(X b + fixed effects)`` by PPML.

    Parameters
    ----------
    y : array, shape (n,)
        Non-negative outcomes.
    X : array, shape (n, K)
        Regressors (no constant needed when fixed effects are present).
    fe : FeSpec
        Factors to absorb; may be empty.
    cluster : array, shape (n,), optional
        Cluster labels for the sandwich covariance. Defaults to one row per
        cluster, which gives the heteroskedasticity-robust sandwich.
    tol : float
        Relative deviance change that ends the IRLS loop.
    inner_tol : float
        Alternating-projection tolerance, relative to each column's scale.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, K = X.shape
    if y.shape != (n,):
        raise InputError("y and X disagree on the number of rows")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise InputError("outcomes must be finite and non-negative")
    if not np.all(np.isfinite(X)):
        raise InputError("regressors must be finite")
    labels = tuple(labels) if labels is not None else tuple(f"x{j}" for j in range(K))
    event_times = tuple(event_times) if event_times is not None else (None,) * K
    cluster = np.arange(n) if cluster is None else np.asarray(cluster)
    groups = [np.asarray(g, dtype=np.int64) for g in fe.groups]
    for g in groups:
        if g.shape != (n,):
            raise InputError("fixed-effect codes must have one entry per row")

    keep, separated = _drop_perfectly_predicted(y, X, groups)
    if separated.any():
        warnings.warn("separated regressors dropped: " + ", ".join(np.asarray(labels)[separated]))
    n_dropped = int(n - keep.sum())
    if keep.sum() == 0:
        raise InputError("no observations left after dropping perfectly predicted rows")
    if keep.all() and not separated.any():
        Xk, cl = X, cluster
    else:
        y, Xk, cl = y[keep], X[keep][:, ~separated], cluster[keep]
    groups = [np.unique(g[keep], return_inverse=True)[1] for g in groups]
    m = y.size
    within = WithinTransform(groups, m)

    # starting values: beta = 0, fixed effects at log group means (floored)
    floor = np.log(0.1)
    ybar = max(y.mean(), 0.1)
    eta = np.full(m, np.log(ybar))
    for g in groups:
        gm = np.bincount(g, weights=y) / np.bincount(g)
        eta += np.maximum(np.log(np.maximum(gm, 1e-300)), floor)[g] - np.log(ybar)
    mu = np.exp(eta)
    within.set_weights(mu)
    Xt = within.demean(Xk, inner_tol, max_inner)

    active = _independent_columns(Xk, Xt, mu)
    if not active.all():
        dropped = np.asarray(labels)[~separated][~active]
        warnings.warn("collinear regressors dropped: " + ", ".join(dropped))
    if not active.all():
        Xk, Xt = Xk[:, active], Xt[:, active]
    p = Xk.shape[1]

    beta = np.zeros(p)
    fe_part = eta.copy()
    dev = poisson_deviance(y, mu)
    trace = [dev]
    converged = False
    for it in range(1, max_iter + 1):
        w = mu
        z = eta + (y - mu) / mu
        within.set_weights(w)
        zt = within.demean(z - fe_part, inner_tol, max_inner, copy=False)
        Xt = within.demean(Xt, inner_tol, max_inner, copy=False)
        if p:
            B, c = _weighted_cross(Xt, w, zt)
            beta_new = scipy.linalg.solve(B, c, assume_a="pos")
            resid = zt - Xt @ beta_new
        else:
            beta_new = beta
            resid = zt
        eta_new = z - resid
        fe_new = eta_new - Xk @ beta_new
        mu_new = np.exp(eta_new)
        dev_new = poisson_deviance(y, mu_new)
        step = 1.0
        while (not np.isfinite(dev_new) or dev_new > dev * (1 + 1e-10) + 1e-12) and step > 1e-3:
            step *= 0.5
            e = eta + step * (eta_new - eta)
            mu_try = np.exp(e)
            dev_try = poisson_deviance(y, mu_try)
            if np.isfinite(dev_try) and dev_try <= dev * (1 + 1e-10) + 1e-12:
                eta_new, mu_new, dev_new = e, mu_try, dev_try
                beta_new = beta + step * (beta_new - beta)
                fe_new = eta_new - Xk @ beta_new
                break
        change = abs(dev_new - dev) / max(abs(dev_new), 0.1)
        eta, mu, beta, fe_part, dev = eta_new, mu_new, beta_new, fe_new, dev_new
        trace.append(dev)
        if change < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations", trace)

    within.set_weights(mu)
    Xt = within.demean(Xt, inner_tol, max_inner, copy=False)
    V = cluster_vcov(Xt, mu, y - mu, cl) if p else np.zeros((0, 0))

    idx = np.flatnonzero(~separated)[active]
    coef = np.full(K, np.nan)
    coef[idx] = beta
    vcov = np.full((K, K), np.nan)
    vcov[np.ix_(idx, idx)] = V
    se = np.full(K, np.nan)
    se[idx] = np.sqrt(np.maximum(np.diag(V), 0.0))
    return EventStudyFit(
        labels=labels, coef=coef, vcov=vcov, se=se, event_times=event_times,
        n_obs=int(m), n_dropped=n_dropped, n_clusters=int(np.unique(cl).size),
        converged=True, iterations=it, deviance=dev, trace=trace,
    )


def critical_value(level: float, alternative: str = "two-sided", dist: str = "normal", df: int = None) -> float:
    q = 1 - level / 2 if alternative == "two-sided" else 1 - level
    if dist == "normal":
        return float(stats.norm.ppf(q))
    if dist == "t":
        return float(stats.t.ppf(q, df))
    raise ValueError(f"unknown reference distribution {dist!r}")


def wald_test(fit: EventStudyFit, k, null_value: float = 0.0, level: float = 0.05,
              alternative: str = "two-sided", dist: str = "normal") -> WaldResult:
    """t-test of one coefficient against ``null_value``.

    ``alternative="greater"`` gives the one-sided test in favour of a positive
    effect; ``dist="t"`` switches to t(G-1) critical values.
    """
    j = fit.column(k)
    b, s = fit.coef[j], fit.se[j]
    if not np.isfinite(b):
        raise KeyError(f"coefficient for {k} is absent")
    if not s > 0:
        raise ValueError("standard error must be positive")
    t = (b - null_value) / s
    crit = critical_value(level, alternative, dist, fit.n_clusters - 1)
    if alternative == "two-sided":
        reject = abs(t) > crit
    elif alternative == "greater":
        reject = t > crit
    elif alternative == "less":
        reject = t < -crit
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    sign = int(np.sign(b - null_value))
    return WaldResult(float(t), bool(reject), sign, bool(reject and b > null_value))
