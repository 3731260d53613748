"""Logistic regression by iteratively reweighted least squares.

Used for Wald standard errors on the frozen bin-indicator design and as the
linear baseline classifier in the missingness benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DataError

SEPARATION_LIMIT = 15.0


@dataclass(frozen=True)
class IrlsResult:
    coef: np.ndarray
    information: np.ndarray
    converged: bool
    iterations: int
    separated: bool
    singular: bool
    deviance: float

    @property
    def ok(self) -> bool:
        return self.converged and not self.separated and not self.singular

    def covariance(self) -> np.ndarray | None:
        """Inverse Fisher information, or None when it is not invertible."""
        try:
            c, low = scipy.linalg.cho_factor(self.information)
        except (np.linalg.LinAlgError, ValueError):
            return None
        return scipy.linalg.cho_solve((c, low), np.eye(self.information.shape[0]))

    def contrast_variance(self, a: np.ndarray) -> float:
        """``a' I^{-1} a`` (inf when the information is singular)."""
        try:
            c, low = scipy.linalg.cho_factor(self.information)
        except (np.linalg.LinAlgError, ValueError):
            return np.inf
        return float(a @ scipy.linalg.cho_solve((c, low), a))


def _deviance(eta, y, w):
    # log(1 + exp(eta)) - y * eta, evaluated stably
    return float(2.0 * np.dot(w, np.logaddexp(0.0, eta) - y * eta))


def fit_logistic_irls(
    X,
    y: np.ndarray,
    beta0: np.ndarray | None = None,
    weights: np.ndarray | None = None,
    max_iter: int = 100,
    tol: float = 1e-8,
    ridge: float | np.ndarray = 0.0,
) -> IrlsResult:
    """Maximum-likelihood logistic regression with step halving.

    ``X`` may be dense or scipy-sparse and must already contain any intercept
    column. ``ridge`` (scalar or per-coefficient) adds a Gaussian penalty
    ``ridge * beta**2 / 2`` to the negative log-likelihood, and so to the
    information (0 = plain maximum likelihood).
    Separation shows up as coefficients growing past a fixed limit and is
    reported rather than raised.
    """
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if y.shape != (n,):
        raise DataError("X and y lengths differ")
    if n == 0 or p == 0:
        raise DataError("empty design")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    sparse = sp.issparse(X)
    if sparse:
        X = sp.csr_matrix(X)
        Xt = X.T.tocsr()
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=np.float64)
    lam = np.broadcast_to(np.asarray(ridge, dtype=np.float64), (p,)).copy()

    def info(eta):
        mu = 1.0 / (1.0 + np.exp(-eta))
        v = np.maximum(mu * (1 - mu), 1e-12) * w
        if sparse:
            I = (Xt @ sp.diags(v) @ X).toarray()
        else:
            I = (X * v[:, None]).T @ X
        I[np.diag_indices(p)] += lam
        return mu, I

    eta = X @ beta
    dev = _deviance(eta, y, w) + float(lam @ beta**2)
    converged = singular = False
    it = 0
    for it in range(1, max_iter + 1):
        mu, I = info(eta)
        grad = Xt @ (w * (y - mu)) if sparse else X.T @ (w * (y - mu))
        grad = grad - lam * beta
        try:
            c, low = scipy.linalg.cho_factor(I)
            step = scipy.linalg.cho_solve((c, low), grad)
        except (np.linalg.LinAlgError, ValueError):
            singular = True
            break
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = X @ cand
            dev_c = _deviance(eta_c, y, w) + float(lam @ cand**2)
            if dev_c <= dev + 1e-12 * (1 + abs(dev)) or t < 1e-6:
                break
            t *= 0.5
        delta = np.max(np.abs(cand - beta))
        beta, eta, dev_old, dev = cand, eta_c, dev, dev_c
        if np.max(np.abs(beta)) > SEPARATION_LIMIT:
            break
        if delta < tol * (1 + np.max(np.abs(beta))) or abs(dev_old - dev) < 1e-12 * (1 + abs(dev)):
            converged = True
            break
    _, I = info(eta)
    separated = bool(np.max(np.abs(beta)) > SEPARATION_LIMIT)
    if not singular:
        try:
            scipy.linalg.cho_factor(I)
        except (np.linalg.LinAlgError, ValueError):
            singular = True
    return IrlsResult(beta, I, converged, it, separated, singular, dev)


def predict_logistic(coef: np.ndarray, X) -> np.ndarray:
    eta = X @ coef
    return 1.0 / (1.0 + np.exp(-eta))
