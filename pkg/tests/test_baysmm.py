import io
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from eldkit import baysmm as B
from eldkit.baysmm import EmbeddingPosterior, SmmParams, SmmTrainConfig
from eldkit.corpus import DocTermMatrix
from eldkit.errors import DegenerateMatrix, NonFiniteObjective, VocabularyMismatch


def random_instance(rng, V, K, n_docs=1):
    params = SmmParams(rng.normal(0, 1, V), rng.normal(0, 0.5, (V, K)))
    X = rng.poisson(1.5, (n_docs, V)) * rng.random((n_docs, V))
    posts = [
        EmbeddingPosterior(f"d{i}", rng.normal(0, 1, K), np.exp(rng.normal(0, 0.5, K)))
        for i in range(n_docs)
    ]
    return params, X, posts


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def fd_embedding(x, params, q, S, seed, h=1e-5):
    nu, zeta = q.nu.astype(float), q.log_std.astype(float)

    def f(nu_, zeta_):
        return B.elbo(x, params, EmbeddingPosterior("d", nu_, np.exp(-2 * zeta_)), S, seed)

    d_nu = np.zeros_like(nu)
    d_zeta = np.zeros_like(zeta)
    for k in range(nu.size):
        e = np.zeros_like(nu)
        e[k] = h
        d_nu[k] = (f(nu + e, zeta) - f(nu - e, zeta)) / (2 * h)
        d_zeta[k] = (f(nu, zeta + e) - f(nu, zeta - e)) / (2 * h)
    return d_nu, d_zeta


def fd_subspace(matrix, params, posts, S, seed, h=1e-5):
    def f(T):
        p = SmmParams(params.m, T, params.reg_type, params.reg_weight)
        return B.corpus_elbo(matrix, p, posts, S, seed).sum() - B.penalty(T, p.reg_type, p.reg_weight)

    out = np.zeros_like(params.T)
    for idx in np.ndindex(*params.T.shape):
        E = np.zeros_like(params.T)
        E[idx] = h
        out[idx] = (f(params.T + E) - f(params.T - E)) / (2 * h)
    return out


# -- init ---------------------------------------------------------------------


def _matrix(dense, ids=None):
    dense = np.atleast_2d(np.asarray(dense, dtype=float))
    ids = ids or [f"d{i}" for i in range(dense.shape[0])]
    return DocTermMatrix(ids, sp.csr_matrix(dense))


def test_init_uniform_totals_gives_flat_bias():
    m = _matrix([[1, 2, 0, 3], [2, 1, 3, 0]])
    params, posts = B.init_params(m, SmmTrainConfig(K=3))
    np.testing.assert_allclose(params.m, -np.log(4), rtol=1e-14)
    assert all(np.all(q.nu == 0) and np.all(q.gamma == 1) for q in posts)


def test_init_is_deterministic():
    m = _matrix([[1, 2, 0, 3]])
    a, _ = B.init_params(m, SmmTrainConfig(K=3, seed=7))
    b, _ = B.init_params(m, SmmTrainConfig(K=3, seed=7))
    assert a.T.tobytes() == b.T.tobytes()
    assert np.std(a.T) < 0.01


def test_init_rejects_zero_matrix():
    with pytest.raises(DegenerateMatrix):
        B.init_params(_matrix(np.zeros((2, 3))), SmmTrainConfig(K=2))


# -- KL -----------------------------------------------------------------------


def test_kl_examples():
    assert B.kl_to_standard_normal(EmbeddingPosterior("u", np.zeros(3), np.ones(3))) == 0.0
    assert B.kl_to_standard_normal(EmbeddingPosterior("u", np.array([1.0, 0]), np.ones(2))) == 0.5


def test_kl_matches_monte_carlo(rng):
    K = 3
    q = EmbeddingPosterior("u", rng.normal(0, 1, K), np.exp(rng.normal(0, 1, K)))
    sd = 1 / np.sqrt(q.gamma)
    w = q.nu + sd * rng.standard_normal((100_000, K))
    log_q = np.sum(-0.5 * ((w - q.nu) / sd) ** 2 - np.log(sd), axis=1)
    log_p = np.sum(-0.5 * w**2, axis=1)
    d = log_q - log_p
    se = d.std() / math.sqrt(d.size)
    assert abs(d.mean() - B.kl_to_standard_normal(q)) < 3 * se


@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=5),
    st.lists(st.floats(-4, 4), min_size=5, max_size=5),
)
def test_kl_nonnegative(nu, log_gamma):
    q = EmbeddingPosterior("u", np.array(nu), np.exp(np.array(log_gamma[: len(nu)])))
    assert B.kl_to_standard_normal(q) >= 0.0


# -- model primitives ---------------------------------------------------------


@given(st.integers(1, 30), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_unigram_is_probability_vector(V, K, seed):
    rng = np.random.default_rng(seed)
    params = SmmParams(rng.normal(0, 3, V), rng.normal(0, 3, (V, K)))
    theta = B.unigram(params, rng.normal(0, 3, K))
    assert abs(theta.sum() - 1) < 1e-9
    assert np.all(theta > 0)


# -- ELBO ---------------------------------------------------------------------


def test_elbo_single_word_vocabulary_is_minus_kl(rng):
    params = SmmParams(np.zeros(1), rng.normal(size=(1, 2)))
    q = EmbeddingPosterior("u", np.array([0.3, -1.0]), np.array([2.0, 0.5]))
    assert B.elbo(np.array([4.0]), params, q, S=5, seed=1) == pytest.approx(-B.kl_to_standard_normal(q), abs=1e-12)


def test_elbo_zero_row_is_minus_kl(rng):
    params, _, (q,) = random_instance(rng, 6, 3)
    assert B.elbo(np.zeros(6), params, q, S=3, seed=0) == pytest.approx(-B.kl_to_standard_normal(q), abs=1e-12)


def test_elbo_two_word_case_against_quadrature():
    params = SmmParams(np.zeros(2), np.array([[1.0], [-1.0]]))
    q = EmbeddingPosterior("u", np.zeros(1), np.ones(1))

    def integrand(w):
        return -np.logaddexp(0.0, -2.0 * w) * math.exp(-w * w / 2) / math.sqrt(2 * math.pi)

    expected, _ = quad(integrand, -40, 40, limit=200)
    assert expected == pytest.approx(-1.0677143880513726, abs=1e-9)
    S = 20_000
    value = B.elbo(np.array([1.0, 0.0]), params, q, S=S, seed=3)
    # standard deviation of ln sigmoid(2w) under N(0, 1) is about 1.09
    assert abs(value - expected) < 4 * 1.1 / math.sqrt(S)


# -- embedding gradients -------------------------------------------------------


def test_grad_embedding_pure_kl_when_subspace_is_zero(rng):
    params = SmmParams(rng.normal(size=5), np.zeros((5, 3)))
    q = EmbeddingPosterior("u", rng.normal(size=3), np.exp(rng.normal(size=3)))
    d_nu, d_zeta = B.grad_embedding(rng.random(5) * 3, params, q, S=2, seed=0)
    np.testing.assert_allclose(d_nu, -q.nu, atol=1e-12)
    np.testing.assert_allclose(d_zeta, 1 - 1 / q.gamma, atol=1e-12)


def test_grad_embedding_zero_at_prior_for_empty_row(rng):
    params, _, _ = random_instance(rng, 5, 3)
    q = EmbeddingPosterior("u", np.zeros(3), np.ones(3))
    d_nu, d_zeta = B.grad_embedding(np.zeros(5), params, q, S=4, seed=0)
    assert np.all(d_nu == 0) and np.all(d_zeta == 0)


@pytest.mark.parametrize("S", [1, 3])
def test_grad_embedding_finite_differences(rng, S):
    params, X, (q,) = random_instance(rng, 5, 3)
    d_nu, d_zeta = B.grad_embedding(X[0], params, q, S=S, seed=11)
    f_nu, f_zeta = fd_embedding(X[0], params, q, S, 11)
    assert rel_err(d_nu, f_nu) < 1e-4
    assert rel_err(d_zeta, f_zeta) < 1e-4


# -- subspace gradient -------------------------------------------------------------


def test_grad_subspace_single_doc_formula(rng):
    params, X, posts = random_instance(rng, 6, 2)
    matrix = _matrix(X)
    dT = B.grad_subspace(matrix, params, posts, S=1, seed=5, reg_type="l2", reg_weight=0.0)
    eps = B.doc_noise(matrix.utt_ids, 1, 2, 5)[0, 0]
    w = posts[0].nu + eps / np.sqrt(posts[0].gamma)
    theta = B.unigram(params, w)
    expected = np.outer(X[0] - X[0].sum() * theta, w)
    np.testing.assert_allclose(dT, expected, rtol=1e-10, atol=1e-12)


def test_so_penalty_gradient_vanishes_on_orthonormal_columns(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(7, 3)))
    np.testing.assert_allclose(B.penalty_grad(Q, "so", 10.0), 0, atol=1e-12)
    assert B.semi_orthogonality_gap(Q) < 1e-12


@pytest.mark.parametrize("reg_type,lam", [("l2", 0.3), ("so", 0.05), ("l2", 0.0)])
def test_grad_subspace_finite_differences(rng, reg_type, lam):
    params, X, posts = random_instance(rng, 5, 2, n_docs=3)
    params.reg_type, params.reg_weight = reg_type, lam
    matrix = _matrix(X)
    dT = B.grad_subspace(matrix, params, posts, S=2, seed=9)
    assert rel_err(dT, fd_subspace(matrix, params, posts, 2, 9)) < 1e-4


def test_soft_threshold():
    np.testing.assert_array_equal(B.soft_threshold(np.array([-2.0, -0.5, 0.1, 3.0]), 0.5), [-1.5, 0, 0, 2.5])


def test_so_regulariser_alone_drives_columns_orthonormal(rng):
    """Adam on the penalty only: the gap ends tiny and its windowed peaks shrink."""
    V, K = 200, 8
    params = SmmParams(np.zeros(V), rng.normal(0, 1e-3, (V, K)), "so", 1e3)
    zero = _matrix(np.zeros((2, V)))
    posts = [EmbeddingPosterior(u, np.zeros(K), np.ones(K)) for u in zero.utt_ids]
    opt = B.Adam(params.T.shape, 0.05)
    gaps = []
    for i in range(500):
        params.T = params.T + opt.step(B.grad_subspace(zero, params, posts, 1, i))
        gaps.append(B.semi_orthogonality_gap(params.T))
    assert gaps[-1] < 1e-3
    peaks = np.array(gaps[250:]).reshape(10, 25).max(axis=1)
    assert np.all(np.diff(peaks) <= 0)


# -- training -------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_matrix():
    rng = np.random.default_rng(3)
    dense = rng.poisson(0.4, (30, 40)) * 1.0
    dense[:15, :20] += rng.poisson(1.0, (15, 20))
    dense[15:, 20:] += rng.poisson(1.0, (15, 20))
    return _matrix(dense)


def test_training_is_deterministic(small_matrix):
    cfg = SmmTrainConfig(K=4, iters=15, seed=5)
    outs = []
    for _ in range(2):
        res = B.train(small_matrix, cfg)
        buf = io.StringIO()
        B.write_model(res.params, buf)
        B.write_embeddings(res.posteriors, buf)
        outs.append(buf.getvalue())
    assert outs[0] == outs[1]


def test_training_improves_elbo(small_matrix):
    res = B.train(small_matrix, SmmTrainConfig(K=4, iters=40, seed=1))
    assert len(res.elbo_trace) == 41
    assert res.elbo_trace[-1] > res.elbo_trace[0]
    params, posteriors, trace = res
    assert all(np.all(q.gamma > 0) for q in posteriors)


def test_l1_training_produces_exact_zeros(small_matrix):
    res = B.train(small_matrix, SmmTrainConfig(K=4, iters=30, reg_type="l1", reg_weight=1.0))
    assert np.any(res.params.T == 0)


def test_non_finite_objective_is_reported():
    m = _matrix([[1e308, 1e308, 0.0], [1.0, 0.0, 2.0]], ids=["huge", "ok"])
    with pytest.raises(NonFiniteObjective) as exc:
        B.train(m, SmmTrainConfig(K=2, iters=3))
    assert exc.value.utt_id == "huge"
    assert exc.value.iteration == 0


# -- extraction -------------------------------------------------------------------


def test_extract_empty_row_stays_at_prior(small_matrix):
    cfg = SmmTrainConfig(K=4, iters=20)
    params = B.train(small_matrix, cfg).params
    (q,) = B.extract(_matrix(np.zeros((1, small_matrix.V))), params, cfg)
    assert np.linalg.norm(q.nu) < 1e-3
    assert np.all(np.abs(q.gamma - 1) < 1e-2)


def test_extract_documents_are_independent(small_matrix):
    cfg = SmmTrainConfig(K=4, iters=20, extract_iters=30)
    params = B.train(small_matrix, cfg).params
    everything = B.extract(small_matrix, params, cfg)
    alone = B.extract(small_matrix.subset([small_matrix.utt_ids[7]]), params, cfg)
    np.testing.assert_allclose(alone[0].nu, everything[7].nu, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(alone[0].gamma, everything[7].gamma, rtol=1e-9)


def test_extract_vocabulary_mismatch(small_matrix):
    cfg = SmmTrainConfig(K=2, iters=1)
    params = B.train(small_matrix, cfg).params
    with pytest.raises(VocabularyMismatch):
        B.extract(_matrix(np.ones((1, small_matrix.V + 1))), params, cfg)


def test_longer_documents_are_more_certain(smm_default, synth_corpus):
    cfg, res = smm_default
    matrix, _, _ = synth_corpus
    sub = matrix.subset(matrix.utt_ids[:10])
    means = []
    for c in (1, 2, 10):
        scaled = DocTermMatrix(sub.utt_ids, sub.X * c)
        means.append([q.gamma.mean() for q in B.extract(scaled, res.params, cfg, samples=16)])
    means = np.array(means)
    assert np.all(np.diff(means, axis=0) >= 0)


# -- files --------------------------------------------------------------------------


def test_model_file_round_trip(rng):
    params = SmmParams(rng.normal(size=4), rng.normal(size=(4, 3)), "so", 1e-3)
    buf = io.StringIO()
    B.write_model(params, buf)
    assert buf.getvalue().splitlines()[0] == "BAYSMM v1 V=4 K=3 reg=so lambda=0.001"
    back = B.read_model(io.StringIO(buf.getvalue()))
    assert back.m.tobytes() == params.m.tobytes() and back.T.tobytes() == params.T.tobytes()
    assert (back.reg_type, back.reg_weight) == ("so", 1e-3)


def test_embedding_file_round_trip(rng):
    posts = [EmbeddingPosterior(f"u{i}", rng.normal(size=3), np.exp(rng.normal(size=3))) for i in range(3)]
    buf = io.StringIO()
    B.write_embeddings(posts, buf)
    assert buf.getvalue().startswith("u0 nu=")
    back = B.read_embeddings(io.StringIO(buf.getvalue()))
    for a, b in zip(posts, back):
        assert a.utt_id == b.utt_id
        assert a.nu.tobytes() == b.nu.tobytes() and a.gamma.tobytes() == b.gamma.tobytes()
