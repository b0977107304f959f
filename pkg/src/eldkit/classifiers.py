"""English vs. non-English backends.

All scores are English-positive: larger means more English.

* GLC: two Gaussians with a shared within-class covariance.
* GLCU: the same model where every training/test embedding is itself
  uncertain, ``nu_d = u_d + noise`` with ``noise ~ N(0, diag(gamma_d)^-1)``;
  trained by EM from the GLC solution.
* Binary logistic regression with an L2 penalty on the weights.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from .corpus import ENGLISH
from .errors import ClassMissing, MalformedLine, NonPsdCovariance, NotConverged

RIDGE = 1e-6
EM_TOL = 1e-8
_BATCH = 256


def as_labels(labels) -> np.ndarray:
    """Boolean English indicator from bools, 0/1 or tag strings."""
    out = []
    for y in labels:
        if isinstance(y, str):
            out.append(y == ENGLISH)
        else:
            out.append(bool(y))
    return np.array(out, dtype=bool)


def _check_classes(y, min_per_class):
    n_en, n_non = int(y.sum()), int((~y).sum())
    if n_en < min_per_class or n_non < min_per_class:
        raise ClassMissing(
            f"need >= {min_per_class} examples per class, got {n_en} english / {n_non} non_english"
        )
    return n_en, n_non


def _ridge(cov):
    K = cov.shape[0]
    cov = 0.5 * (cov + cov.T)
    return cov + RIDGE * (np.trace(cov) / K) * np.eye(K)


def _chol(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NonPsdCovariance("within-class covariance is not positive definite") from None


@dataclass
class GlcModel:
    mu_en: np.ndarray
    mu_non: np.ndarray
    cov: np.ndarray
    log_prior_ratio: float

    @property
    def K(self) -> int:
        return self.mu_en.size

    def linear(self):
        """(w, b) such that the LLR equals ``w @ nu + b``."""
        P = np.linalg.inv(self.cov)
        w = P @ (self.mu_en - self.mu_non)
        b = -0.5 * (self.mu_en @ P @ self.mu_en - self.mu_non @ P @ self.mu_non)
        return w, b + self.log_prior_ratio


@dataclass
class GlcuModel(GlcModel):
    em_iters_used: int = 0
    loglik_trace: list[float] = field(default_factory=list)


def train_glc(embeddings, labels) -> GlcModel:
    X = np.atleast_2d(np.asarray(embeddings, dtype=float))
    y = as_labels(labels)
    if X.shape[0] != y.size:
        raise ValueError("embeddings and labels differ in length")
    n_en, n_non = _check_classes(y, 2)
    mu_en = X[y].mean(axis=0)
    mu_non = X[~y].mean(axis=0)
    R = np.where(y[:, None], X - mu_en, X - mu_non)
    # pooled within-class covariance, divisor D - C
    cov = _ridge(R.T @ R / (X.shape[0] - 2))
    _chol(cov)
    return GlcModel(mu_en, mu_non, cov, float(np.log(n_en / n_non)))


def score_glc(model: GlcModel, nu) -> np.ndarray | float:
    """LLR ln N(nu; mu_en, S) - ln N(nu; mu_non, S) + log prior ratio."""
    w, b = model.linear()
    nu = np.asarray(nu, dtype=float)
    s = nu @ w + b
    return float(s) if nu.ndim == 1 else s


def _gauss_llr_batch(nu, var, model):
    # per-row LLR with covariance cov + diag(var); rows processed in batches
    out = np.empty(nu.shape[0])
    for lo in range(0, nu.shape[0], _BATCH):
        hi = min(lo + _BATCH, nu.shape[0])
        C = model.cov[None, :, :] + var[lo:hi, :, None] * np.eye(model.K)[None]
        L = np.linalg.cholesky(C)
        a = np.linalg.solve(L, (nu[lo:hi] - model.mu_en)[..., None])[..., 0]
        b = np.linalg.solve(L, (nu[lo:hi] - model.mu_non)[..., None])[..., 0]
        out[lo:hi] = -0.5 * (np.sum(a * a, axis=1) - np.sum(b * b, axis=1))
    return out + model.log_prior_ratio


def _marginal_objective(nu, var, y, mu_en, mu_non, cov):
    """Sum_d ln N(nu_d; mu_c(d), cov + diag(var_d)) + (C/2) ln|cov|.

    The second term is the degrees-of-freedom correction that makes the
    M-step divisor D - C exact, so this is the quantity EM cannot decrease.
    """
    K = cov.shape[0]
    mu = np.where(y[:, None], mu_en, mu_non)
    total = 0.0
    for lo in range(0, nu.shape[0], _BATCH):
        hi = min(lo + _BATCH, nu.shape[0])
        C = cov[None] + var[lo:hi, :, None] * np.eye(K)[None]
        L = np.linalg.cholesky(C)
        r = np.linalg.solve(L, (nu[lo:hi] - mu[lo:hi])[..., None])[..., 0]
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        total += float(np.sum(-0.5 * (np.sum(r * r, axis=1) + logdet + K * np.log(2 * np.pi))))
    _, ld = np.linalg.slogdet(cov)
    n_classes = 2
    return total + 0.5 * n_classes * ld


def _stack_posteriors(posteriors):
    nu = np.array([q.nu for q in posteriors], dtype=float)
    gamma = np.array([q.gamma for q in posteriors], dtype=float)
    return nu, gamma


def _e_step(nu, gamma, y, mu_en, mu_non, cov):
    """Posterior means of the clean embeddings and the sum of their covariances."""
    D, K = nu.shape
    P_w = np.linalg.inv(cov)
    mu = np.where(y[:, None], mu_en, mu_non)
    u_hat = np.empty_like(nu)
    post_cov_sum = np.zeros((K, K))
    for lo in range(0, D, _BATCH):
        hi = min(lo + _BATCH, D)
        P = P_w[None] + gamma[lo:hi, :, None] * np.eye(K)[None]
        Pinv = np.linalg.inv(P)
        rhs = mu[lo:hi] @ P_w + gamma[lo:hi] * nu[lo:hi]
        u_hat[lo:hi] = np.einsum("dij,dj->di", Pinv, rhs)
        post_cov_sum += Pinv.sum(axis=0)
    return u_hat, post_cov_sum


def glcu_e_step(model: GlcModel, posteriors: Sequence, labels):
    """E-step of GLCU training under `model`: ``(u_hat, summed posterior covariance)``."""
    nu, gamma = _stack_posteriors(posteriors)
    return _e_step(nu, gamma, as_labels(labels), model.mu_en, model.mu_non, model.cov)


def train_glcu(posteriors: Sequence, labels, em_iters: int = 50) -> GlcuModel:
    """EM for the uncertainty-aware GLC, started from the GLC solution.

    Stops after `em_iters` iterations or when the objective gains less than
    1e-8.
    """
    if em_iters < 1:
        raise ValueError("em_iters must be >= 1")
    nu, gamma = _stack_posteriors(posteriors)
    y = as_labels(labels)
    if nu.shape[0] != y.size:
        raise ValueError("posteriors and labels differ in length")
    glc = train_glc(nu, y)
    D = nu.shape[0]
    var = 1.0 / gamma
    mu_en, mu_non, cov = glc.mu_en, glc.mu_non, glc.cov
    trace = [_marginal_objective(nu, var, y, mu_en, mu_non, cov)]
    used = 0
    for _ in range(em_iters):
        u_hat, post_cov_sum = _e_step(nu, gamma, y, mu_en, mu_non, cov)
        mu_en = u_hat[y].mean(axis=0)
        mu_non = u_hat[~y].mean(axis=0)
        R = u_hat - np.where(y[:, None], mu_en, mu_non)
        cov = _ridge((post_cov_sum + R.T @ R) / (D - 2))
        _chol(cov)
        used += 1
        trace.append(_marginal_objective(nu, var, y, mu_en, mu_non, cov))
        if trace[-1] - trace[-2] < EM_TOL:
            break
    return GlcuModel(mu_en, mu_non, cov, glc.log_prior_ratio, used, trace)


def score_glcu(model: GlcModel, q) -> np.ndarray | float:
    """LLR with the embedding's own variance added to the shared covariance.

    `q` is one posterior or a sequence of them.
    """
    single = hasattr(q, "nu")
    nu, gamma = _stack_posteriors([q] if single else q)
    s = _gauss_llr_batch(nu, 1.0 / gamma, model)
    return float(s[0]) if single else s


# -- logistic regression ---------------------------------------------------


@dataclass
class LogRegModel:
    w: np.ndarray
    b: float
    l2_weight: float
    converged: bool = True
    n_iter: int = 0

    @property
    def F(self) -> int:
        return self.w.size


def _as_features(X):
    if sp.issparse(X):
        return sp.csr_matrix(X, dtype=float)
    return np.atleast_2d(np.asarray(X, dtype=float))


def logreg_objective(theta, X, t, l2_weight):
    """Mean cross-entropy + l2_weight * |w|^2 and its gradient; theta = [w, b]."""
    w, b = theta[:-1], theta[-1]
    z = np.asarray(X @ w).ravel() + b
    n = t.size
    f = np.mean(np.logaddexp(0.0, z) - t * z) + l2_weight * (w @ w)
    r = (0.5 * (1.0 + np.tanh(0.5 * z)) - t) / n
    g = np.empty_like(theta)
    g[:-1] = np.asarray(X.T @ r).ravel() + 2.0 * l2_weight * w
    g[-1] = r.sum()
    return f, g


def train_logreg(features, labels, l2_weight=1e-4, max_iters=1000, tol=1e-6) -> LogRegModel:
    """L-BFGS on the convex penalised cross-entropy; the bias is unpenalised.

    Converged means the gradient's infinity norm is below `tol`; otherwise a
    :class:`NotConverged` warning is issued and the last iterate is returned.
    """
    X = _as_features(features)
    y = as_labels(labels)
    if X.shape[0] != y.size:
        raise ValueError("features and labels differ in length")
    _check_classes(y, 1)
    t = y.astype(float)
    theta0 = np.zeros(X.shape[1] + 1)
    res = minimize(
        logreg_objective,
        theta0,
        args=(X, t, l2_weight),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iters, "gtol": tol, "ftol": 0.0, "maxcor": 20},
    )
    _, g = logreg_objective(res.x, X, t, l2_weight)
    converged = bool(np.max(np.abs(g)) < tol)
    if not converged:
        warnings.warn(
            f"logistic regression stopped with gradient norm {np.max(np.abs(g)):.3g} >= {tol}",
            NotConverged,
            stacklevel=2,
        )
    return LogRegModel(res.x[:-1].copy(), float(res.x[-1]), float(l2_weight), converged, int(res.nit))


def score_logreg(model: LogRegModel, x) -> np.ndarray | float:
    """Logit w @ x + b."""
    X = _as_features(x)
    s = np.asarray(X @ model.w).ravel() + model.b
    if not sp.issparse(x) and np.asarray(x).ndim == 1:
        return float(s[0])
    return s


# -- model files -----------------------------------------------------------


def _vec(v):
    return " ".join(repr(float(a)) for a in np.atleast_1d(v))


def write_classifier(model, stream: TextIO) -> None:
    if isinstance(model, LogRegModel):
        stream.write(f"LOGREG v1 F={model.F} l2={model.l2_weight!r} converged={int(model.converged)}\n")
        stream.write(f"b {model.b!r}\n")
        stream.write(f"w {_vec(model.w)}\n")
        return
    if isinstance(model, GlcuModel):
        stream.write(f"GLCU v1 K={model.K} em_iters={model.em_iters_used}\n")
    elif isinstance(model, GlcModel):
        stream.write(f"GLC v1 K={model.K}\n")
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    stream.write(f"log_prior_ratio {model.log_prior_ratio!r}\n")
    stream.write(f"mu_en {_vec(model.mu_en)}\n")
    stream.write(f"mu_non {_vec(model.mu_non)}\n")
    for row in model.cov:
        stream.write(f"cov {_vec(row)}\n")
    if isinstance(model, GlcuModel):
        stream.write(f"trace {_vec(model.loglik_trace)}\n")


def read_classifier(stream: TextIO | Iterable[str]):
    lines = [ln.split() for ln in stream if ln.strip()]
    if not lines:
        raise MalformedLine("empty classifier file", 1)
    kind = lines[0][0]
    meta = dict(f.split("=", 1) for f in lines[0][2:])
    blocks: dict[str, list] = {}
    try:
        for ln in lines[1:]:
            blocks.setdefault(ln[0], []).append([float(v) for v in ln[1:]])
    except ValueError:
        raise MalformedLine("non-numeric classifier parameter") from None
    try:
        if kind == "LOGREG":
            return LogRegModel(
                np.array(blocks["w"][0]), blocks["b"][0][0], float(meta["l2"]),
                bool(int(meta.get("converged", 1))),
            )
        args = (
            np.array(blocks["mu_en"][0]),
            np.array(blocks["mu_non"][0]),
            np.array(blocks["cov"]),
            blocks["log_prior_ratio"][0][0],
        )
    except (KeyError, IndexError):
        raise MalformedLine(f"incomplete {kind} model file") from None
    if kind == "GLC":
        return GlcModel(*args)
    if kind == "GLCU":
        return GlcuModel(*args, int(meta.get("em_iters", 0)), blocks.get("trace", [[]])[0])
    raise MalformedLine(f"unknown classifier header {kind!r}", 1)
