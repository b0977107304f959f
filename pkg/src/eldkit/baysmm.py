"""Bayesian subspace multinomial model (BaySMM).

Each utterance d has a latent embedding w_d with prior N(0, I) and word
distribution ``theta(w) = softmax(m + T w)``.  Training maximises the
evidence lower bound under a diagonal Gaussian posterior
``q(w_d) = N(nu_d, diag(sigma_d^2))`` using reparameterised Monte-Carlo
gradients; the posterior is reported through its precision
``gamma = 1 / sigma^2``.  Internally the log standard deviation
``zeta = log sigma`` is the free parameter.

The bias ``m`` is fixed at the smoothed log unigram distribution; ``T`` is
learnt with an optional penalty (``l2``, ``so`` for semi-orthogonality, or
``l1`` applied as a proximal soft threshold).
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .corpus import DocTermMatrix
from .errors import (
    DegenerateMatrix,
    DuplicateUttId,
    MalformedLine,
    NonFiniteObjective,
    VocabularyMismatch,
)

log = logging.getLogger(__name__)

REG_TYPES = ("l2", "l1", "so")
INIT_T_STD = 1e-3
EVAL_SAMPLES = 8
# bound on dense logits held in memory at once (rows x vocabulary)
_CHUNK_CELLS = 4_000_000


@dataclass
class SmmParams:
    m: np.ndarray
    T: np.ndarray
    reg_type: str = "l2"
    reg_weight: float = 0.0

    @property
    def V(self) -> int:
        return self.T.shape[0]

    @property
    def K(self) -> int:
        return self.T.shape[1]


@dataclass
class EmbeddingPosterior:
    utt_id: str
    nu: np.ndarray
    gamma: np.ndarray

    @property
    def log_std(self) -> np.ndarray:
        return -0.5 * np.log(self.gamma)

    @property
    def variance(self) -> np.ndarray:
        return 1.0 / self.gamma


@dataclass
class SmmTrainConfig:
    K: int = 64
    reg_type: str = "l2"
    reg_weight: float = 1e-4
    step_size: float = 0.05
    mc_samples: int = 1
    iters: int = 100
    seed: int = 42
    extract_iters: int = 100
    eval_samples: int = EVAL_SAMPLES

    def __post_init__(self):
        if self.reg_type not in REG_TYPES:
            raise ValueError(f"reg_type must be one of {REG_TYPES}, got {self.reg_type!r}")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be >= 0")
        if self.mc_samples < 1 or self.eval_samples < 1:
            raise ValueError("Monte-Carlo sample counts must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.K < 1 or self.iters < 0 or self.extract_iters < 0:
            raise ValueError("K must be >= 1 and iteration counts >= 0")


@dataclass
class TrainResult:
    params: SmmParams
    posteriors: list[EmbeddingPosterior]
    elbo_trace: list[float] = field(default_factory=list)

    def __iter__(self):
        # allows ``params, posteriors, trace = train(...)``
        return iter((self.params, self.posteriors, self.elbo_trace))


class Adam:
    """Element-wise adaptive moment ascent on one array."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        """Return the ascent increment for `grad`."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


# -- model primitives -----------------------------------------------------


def log_softmax(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    mx = a.max(axis=-1, keepdims=True)
    z = a - mx
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def unigram(params: SmmParams, w: np.ndarray) -> np.ndarray:
    """Word distribution(s) softmax(m + T w); `w` may be (K,) or (n, K)."""
    return np.exp(log_softmax(params.m + np.asarray(w) @ params.T.T))


def soft_threshold(a: np.ndarray, thr: float) -> np.ndarray:
    return np.sign(a) * np.maximum(np.abs(a) - thr, 0.0)


def penalty(T: np.ndarray, reg_type: str, reg_weight: float) -> float:
    if reg_type == "l2":
        return reg_weight * float(np.sum(T * T))
    if reg_type == "l1":
        return reg_weight * float(np.abs(T).sum())
    if reg_type == "so":
        G = T.T @ T - np.eye(T.shape[1])
        return reg_weight * float(np.sum(G * G))
    raise ValueError(f"unknown reg_type {reg_type!r}")


def penalty_grad(T: np.ndarray, reg_type: str, reg_weight: float) -> np.ndarray:
    """Gradient of the smooth penalty; zero for l1 (handled by the proximal step)."""
    if reg_type == "l2":
        return 2.0 * reg_weight * T
    if reg_type == "so":
        return 4.0 * reg_weight * T @ (T.T @ T - np.eye(T.shape[1]))
    if reg_type == "l1":
        return np.zeros_like(T)
    raise ValueError(f"unknown reg_type {reg_type!r}")


def semi_orthogonality_gap(T: np.ndarray) -> float:
    """Frobenius norm of T^T T - I."""
    return float(np.linalg.norm(T.T @ T - np.eye(T.shape[1])))


def _kl(nu: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    # KL(N(nu, e^{2 zeta}) || N(0, 1)) summed over the last axis
    var = np.exp(2.0 * zeta)
    return 0.5 * np.sum(var + nu * nu - 1.0 - 2.0 * zeta, axis=-1)


def kl_to_standard_normal(q: EmbeddingPosterior) -> float:
    """KL(q || N(0, I)) in closed form."""
    var = 1.0 / np.asarray(q.gamma, dtype=float)
    nu = np.asarray(q.nu, dtype=float)
    return float(0.5 * np.sum(var + nu * nu - 1.0 - np.log(var)))


def _as_csr(x, V) -> sp.csr_matrix:
    if sp.issparse(x):
        X = sp.csr_matrix(x, dtype=float)
    else:
        X = sp.csr_matrix(np.atleast_2d(np.asarray(x, dtype=float)))
    if X.shape[1] != V:
        raise VocabularyMismatch(f"row width {X.shape[1]} does not match model V={V}")
    return X


def _chunks(D, V):
    step = max(1, _CHUNK_CELLS // max(V, 1))
    for lo in range(0, D, step):
        yield lo, min(D, lo + step)


def _mc_terms(X, m, T, nu, zeta, eps, want_emb=False, want_T=False):
    """Monte-Carlo expected log-likelihood and its gradients.

    X: (D, V) csr; nu, zeta: (D, K); eps: (S, D, K).
    Returns a dict with
      ``loglik`` (D,)  mean over samples of sum_v x_v log theta_v(w),
      ``g_nu`` (D, K)  mean of T^T (x - N theta(w)),
      ``g_zeta`` (D, K)  mean of T^T (x - N theta(w)) * eps * sigma,
      ``g_T`` (V, K)  mean over samples, summed over rows, of (x - N theta(w)) w^T.
    """
    S, D, K = eps.shape
    V = T.shape[0]
    sigma = np.exp(zeta)
    N = np.asarray(X.sum(axis=1)).ravel()
    XT = np.asarray(X @ T)  # (D, K)
    Xm = np.asarray(X @ m).ravel()  # (D,)
    loglik = np.zeros(D)
    g_nu = np.zeros((D, K)) if want_emb else None
    g_zeta = np.zeros((D, K)) if want_emb else None
    g_T = np.zeros((V, K)) if want_T else None
    XtW = np.zeros((V, K)) if want_T else None

    for s in range(S):
        W = nu + sigma * eps[s]
        for lo, hi in _chunks(D, V):
            Wc = W[lo:hi]
            logits = m + Wc @ T.T
            mx = logits.max(axis=1, keepdims=True)
            ex = np.exp(logits - mx)
            Z = ex.sum(axis=1, keepdims=True)
            logZ = (mx + np.log(Z)).ravel()
            loglik[lo:hi] += Xm[lo:hi] + np.einsum("dk,dk->d", XT[lo:hi], Wc) - N[lo:hi] * logZ
            if want_emb or want_T:
                NTheta = ex * (N[lo:hi, None] / Z)  # (chunk, V)
            if want_emb:
                g = XT[lo:hi] - NTheta @ T
                g_nu[lo:hi] += g
                g_zeta[lo:hi] += g * eps[s, lo:hi] * sigma[lo:hi]
            if want_T:
                g_T -= NTheta.T @ Wc
        if want_T:
            XtW += np.asarray(X.T @ W)

    out = {"loglik": loglik / S}
    if want_emb:
        out["g_nu"] = g_nu / S
        out["g_zeta"] = g_zeta / S
    if want_T:
        out["g_T"] = (g_T + XtW) / S
    return out


# -- noise ----------------------------------------------------------------


def doc_seed(seed: int, utt_id: str) -> list[int]:
    """Per-document seed material; stable across processes and platforms."""
    return [int(seed) & 0xFFFFFFFF, zlib.crc32(utt_id.encode("utf-8"))]


class DocNoise:
    """One independent normal stream per document, keyed on (seed, utt_id)."""

    def __init__(self, utt_ids: Sequence[str], seed: int, stream: int = 0):
        self.rngs = [np.random.default_rng(doc_seed(seed, u) + [stream]) for u in utt_ids]

    def draw(self, S: int, K: int) -> np.ndarray:
        if not self.rngs:
            return np.zeros((S, 0, K))
        return np.stack([r.standard_normal((S, K)) for r in self.rngs], axis=1)


def doc_noise(utt_ids: Sequence[str], S: int, K: int, seed: int, stream: int = 0) -> np.ndarray:
    return DocNoise(utt_ids, seed, stream).draw(S, K)


# -- single-document objective and gradients ------------------------------


def _single(x, params, q, S, seed):
    X = _as_csr(x, params.V)
    if X.shape[0] != 1:
        raise ValueError("expected a single row")
    nu = np.asarray(q.nu, dtype=float)[None, :]
    zeta = np.asarray(q.log_std, dtype=float)[None, :]
    eps = np.random.default_rng(seed).standard_normal((S, 1, params.K))
    return X, nu, zeta, eps


def elbo(x, params: SmmParams, q: EmbeddingPosterior, S: int = 1, seed: int = 0) -> float:
    """Reparameterised Monte-Carlo ELBO of one count row.

    Noise is ``default_rng(seed).standard_normal((S, K))``; the same seed gives
    the same samples as :func:`grad_embedding`.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    X, nu, zeta, eps = _single(x, params, q, S, seed)
    t = _mc_terms(X, params.m, params.T, nu, zeta, eps)
    return float(t["loglik"][0] - _kl(nu, zeta)[0])


def grad_embedding(x, params: SmmParams, q: EmbeddingPosterior, S: int = 1, seed: int = 0):
    """Gradient of :func:`elbo` with respect to (nu, log std)."""
    if S < 1:
        raise ValueError("S must be >= 1")
    X, nu, zeta, eps = _single(x, params, q, S, seed)
    t = _mc_terms(X, params.m, params.T, nu, zeta, eps, want_emb=True)
    var = np.exp(2.0 * zeta)
    return t["g_nu"][0] - nu[0], t["g_zeta"][0] - (var[0] - 1.0)


# -- corpus-level objective and gradients ---------------------------------


def _stack(posteriors: Sequence[EmbeddingPosterior]):
    nu = np.array([q.nu for q in posteriors], dtype=float)
    zeta = np.array([q.log_std for q in posteriors], dtype=float)
    return nu, zeta


def _unstack(utt_ids, nu, zeta):
    gamma = np.exp(-2.0 * zeta)
    return [EmbeddingPosterior(u, nu[i].copy(), gamma[i].copy()) for i, u in enumerate(utt_ids)]


def _check_aligned(matrix: DocTermMatrix, params: SmmParams, posteriors):
    if matrix.V != params.V:
        raise VocabularyMismatch(f"matrix has V={matrix.V}, model has V={params.V}")
    ids = [q.utt_id for q in posteriors]
    if ids != list(matrix.utt_ids):
        raise ValueError("posteriors are not aligned with matrix rows")


def corpus_elbo(matrix: DocTermMatrix, params: SmmParams, posteriors, S=EVAL_SAMPLES, seed=0):
    """Per-document ELBO, noise drawn from the per-document streams of `seed`."""
    _check_aligned(matrix, params, posteriors)
    nu, zeta = _stack(posteriors)
    eps = doc_noise(matrix.utt_ids, S, params.K, seed)
    t = _mc_terms(matrix.X, params.m, params.T, nu, zeta, eps)
    return t["loglik"] - _kl(nu, zeta)


def grad_subspace(
    matrix: DocTermMatrix,
    params: SmmParams,
    posteriors: Sequence[EmbeddingPosterior],
    S: int = 1,
    seed: int = 0,
    reg_type: str | None = None,
    reg_weight: float | None = None,
) -> np.ndarray:
    """Gradient in T of the corpus ELBO minus the smooth penalty.

    Noise matches :func:`corpus_elbo` for the same seed.  The penalty defaults
    to the one stored in `params`.
    """
    _check_aligned(matrix, params, posteriors)
    reg_type = params.reg_type if reg_type is None else reg_type
    reg_weight = params.reg_weight if reg_weight is None else reg_weight
    nu, zeta = _stack(posteriors)
    eps = doc_noise(matrix.utt_ids, S, params.K, seed)
    t = _mc_terms(matrix.X, params.m, params.T, nu, zeta, eps, want_T=True)
    return t["g_T"] - penalty_grad(params.T, reg_type, reg_weight)


# -- training and extraction ----------------------------------------------


def init_params(matrix: DocTermMatrix, cfg: SmmTrainConfig):
    """Smoothed log-unigram bias, small random subspace, prior-valued posteriors."""
    if matrix.D == 0:
        raise DegenerateMatrix("matrix has no rows")
    if matrix.V < 2:
        raise DegenerateMatrix(f"need at least 2 vocabulary entries, got {matrix.V}")
    c = np.asarray(matrix.X.sum(axis=0)).ravel()
    if not np.any(c > 0):
        raise DegenerateMatrix("all counts are zero")
    m = np.log((c + 0.5) / np.sum(c + 0.5))
    rng = np.random.default_rng(cfg.seed)
    T = rng.normal(0.0, INIT_T_STD, size=(matrix.V, cfg.K))
    params = SmmParams(m, T, cfg.reg_type, cfg.reg_weight)
    posteriors = [EmbeddingPosterior(u, np.zeros(cfg.K), np.ones(cfg.K)) for u in matrix.utt_ids]
    return params, posteriors


def _check_finite(values, utt_ids, iteration):
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteObjective(iteration, utt_ids[i], float(values[i]))


def train(matrix: DocTermMatrix, cfg: SmmTrainConfig, callback=None) -> TrainResult:
    """Alternate one ascent step on all posteriors and one on T, `cfg.iters` times.

    ``elbo_trace[0]`` is the corpus ELBO at initialisation and ``elbo_trace[i]``
    the value after round i, always evaluated with the same
    ``cfg.eval_samples`` noise draws.
    """
    params, posteriors = init_params(matrix, cfg)
    X, ids, K = matrix.X, matrix.utt_ids, cfg.K
    nu, zeta = _stack(posteriors)
    T = params.T
    opt_emb = Adam((2,) + nu.shape, cfg.step_size)
    opt_T = Adam(T.shape, cfg.step_size)
    emb_noise = DocNoise(ids, cfg.seed, stream=1)
    t_noise = DocNoise(ids, cfg.seed, stream=2)
    eval_eps = doc_noise(ids, cfg.eval_samples, K, cfg.seed, stream=3)

    def objective(iteration):
        vals = _mc_terms(X, params.m, T, nu, zeta, eval_eps)["loglik"] - _kl(nu, zeta)
        _check_finite(vals, ids, iteration)
        return float(np.sum(vals))

    trace = [objective(0)]
    for it in range(1, cfg.iters + 1):
        eps = emb_noise.draw(cfg.mc_samples, K)
        t = _mc_terms(X, params.m, T, nu, zeta, eps, want_emb=True)
        d_nu = t["g_nu"] - nu
        d_zeta = t["g_zeta"] - (np.exp(2.0 * zeta) - 1.0)
        inc = opt_emb.step(np.stack([d_nu, d_zeta]))
        nu = nu + inc[0]
        zeta = zeta + inc[1]

        eps = t_noise.draw(cfg.mc_samples, K)
        g_T = _mc_terms(X, params.m, T, nu, zeta, eps, want_T=True)["g_T"]
        g_T = g_T - penalty_grad(T, cfg.reg_type, cfg.reg_weight)
        T = T + opt_T.step(g_T)
        if cfg.reg_type == "l1" and cfg.reg_weight > 0:
            T = soft_threshold(T, cfg.reg_weight * cfg.step_size)
        params.T = T

        trace.append(objective(it))
        if callback is not None:
            callback(it, trace[-1])
        log.debug("round %d elbo %.6f", it, trace[-1])

    return TrainResult(params, _unstack(ids, nu, zeta), trace)


def extract(
    matrix: DocTermMatrix,
    params: SmmParams,
    cfg: SmmTrainConfig,
    iters: int | None = None,
    samples: int | None = None,
) -> list[EmbeddingPosterior]:
    """Fit each row's posterior with T and m frozen.

    Rows are independent: a document's result does not depend on which other
    documents are extracted alongside it.
    """
    if matrix.V != params.V:
        raise VocabularyMismatch(f"matrix has V={matrix.V}, model has V={params.V}")
    iters = cfg.extract_iters if iters is None else iters
    S = cfg.mc_samples if samples is None else samples
    D, K = matrix.D, params.K
    nu = np.zeros((D, K))
    zeta = np.zeros((D, K))
    if D == 0:
        return []
    opt = Adam((2, D, K), cfg.step_size)
    noise = DocNoise(matrix.utt_ids, cfg.seed, stream=4)
    for _ in range(iters):
        eps = noise.draw(S, K)
        t = _mc_terms(matrix.X, params.m, params.T, nu, zeta, eps, want_emb=True)
        d_nu = t["g_nu"] - nu
        d_zeta = t["g_zeta"] - (np.exp(2.0 * zeta) - 1.0)
        inc = opt.step(np.stack([d_nu, d_zeta]))
        nu = nu + inc[0]
        zeta = zeta + inc[1]
    return _unstack(matrix.utt_ids, nu, zeta)


# -- file formats ---------------------------------------------------------


def write_model(params: SmmParams, stream: TextIO) -> None:
    stream.write(
        f"BAYSMM v1 V={params.V} K={params.K} reg={params.reg_type} lambda={params.reg_weight!r}\n"
    )
    stream.write(" ".join(repr(float(v)) for v in params.m) + "\n")
    for row in params.T:
        stream.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_model(stream: TextIO | Iterable[str]) -> SmmParams:
    lines = [ln for ln in stream if ln.strip()]
    if not lines or not lines[0].startswith("BAYSMM v1"):
        raise MalformedLine("missing 'BAYSMM v1' header", 1)
    try:
        meta = dict(f.split("=", 1) for f in lines[0].split()[2:])
        V, K = int(meta["V"]), int(meta["K"])
        reg, lam = meta["reg"], float(meta["lambda"])
    except (KeyError, ValueError):
        raise MalformedLine("bad BAYSMM header", 1) from None
    if len(lines) != V + 2:
        raise MalformedLine(f"expected {V + 2} lines, found {len(lines)}")
    m = np.array(lines[1].split(), dtype=float)
    T = np.array([ln.split() for ln in lines[2:]], dtype=float)
    if m.shape != (V,) or T.shape != (V, K):
        raise MalformedLine("parameter block shape does not match header")
    return SmmParams(m, T, reg, lam)


def _fmt_vec(v):
    return ",".join(repr(float(x)) for x in v)


def write_embeddings(posteriors: Iterable[EmbeddingPosterior], stream: TextIO) -> None:
    for q in posteriors:
        stream.write(f"{q.utt_id} nu={_fmt_vec(q.nu)} gamma={_fmt_vec(q.gamma)}\n")


def read_embeddings(stream: TextIO | Iterable[str]) -> list[EmbeddingPosterior]:
    out = []
    seen = set()
    for lineno, line in enumerate(stream, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 3 or not fields[1].startswith("nu=") or not fields[2].startswith("gamma="):
            raise MalformedLine("expected '<utt-id> nu=<reals> gamma=<reals>'", lineno)
        try:
            nu = np.array(fields[1][3:].split(","), dtype=float)
            gamma = np.array(fields[2][6:].split(","), dtype=float)
        except ValueError:
            raise MalformedLine("non-numeric embedding entry", lineno) from None
        if nu.shape != gamma.shape:
            raise MalformedLine("nu and gamma lengths differ", lineno)
        if np.any(gamma <= 0) or not np.all(np.isfinite(nu)) or not np.all(np.isfinite(gamma)):
            raise MalformedLine("gamma must be positive and all entries finite", lineno)
        if fields[0] in seen:
            raise DuplicateUttId(f"line {lineno}: duplicate utterance id {fields[0]!r}")
        seen.add(fields[0])
        out.append(EmbeddingPosterior(fields[0], nu, gamma))
    return out
