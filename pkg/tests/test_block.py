import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phasegamp.alphabet import Constellation, PhaseAlphabet, ace_project, hard_detect
from phasegamp.block import (BLOCK_CONFIG, SHAPERS, BlockProblem, apply_block_operator, block_adjoint,
                             block_cost, block_forward, block_operator_matrix, block_output_step,
                             build_shaper, centered_dft, centered_idft, raised_cosine,
                             refine_block_beta, run_block_gamp, stream_to_symbols, symbols_to_stream,
                             update_beta)
from phasegamp.channel import WidebandChannel, crandn, draw_iid_flat
from phasegamp.gamp import GampConfig, MseProblem, run_gamp

from oracles import block_exhaustive_min

QPSK = Constellation.qpsk()
QAM16 = Constellation.qam(4)


def _stream(rng, shaper, const, batch=()):
    d = const.random_symbols(rng, batch + (shaper.M // 2, 2))
    return symbols_to_stream(d, shaper)


# shaping matrices ----------------------------------------------------------------

@pytest.mark.parametrize("kind", SHAPERS)
@pytest.mark.parametrize("M", [8, 16, 64])
def test_shaper_orthogonality(kind, M):
    g = build_shaper(kind, M).gram()
    np.testing.assert_allclose(g, np.eye(g.shape[0]), atol=1e-12)


def test_ofdm_columns_are_center_tones():
    G = build_shaper("ofdm-cp", 8).matrix()
    assert G.shape == (8, 4)
    for k in range(4):
        col = np.zeros(8)
        col[k + 2] = 1
        np.testing.assert_array_equal(G[:, k], col)


def test_ofdm_edge_layout_uses_outer_tones():
    s = build_shaper("ofdm-cp", 8, layout="edge")
    assert s.tones.tolist() == [0, 1, 6, 7]
    np.testing.assert_allclose(s.gram(), np.eye(4))


def test_flat_profile_single_carrier_is_orthogonal():
    # literal construction with Lambda = 1/sqrt(2) on the stacked DFT
    M = 16
    F = np.fft.fft(np.eye(M // 2), norm="ortho")
    G = np.vstack([F, F]) / np.sqrt(2)
    np.testing.assert_allclose(G.conj().T @ G, np.eye(M // 2), atol=1e-14)


def test_single_carrier_matrix_matches_literal_construction():
    M = 16
    s = build_shaper("cp-sc", M)
    F = np.fft.fft(np.eye(M // 2), norm="ortho")
    lit = np.diag(s.profile) @ np.fft.fftshift(np.vstack([F, F]), axes=0)
    np.testing.assert_allclose(s.matrix(), lit, atol=1e-14)


def test_raised_cosine_folds_flat():
    f = np.linspace(-0.5, 0, 101)
    rc = raised_cosine(f, 0.22) + raised_cosine(f + 0.5, 0.22)
    np.testing.assert_allclose(rc, 1.0, atol=1e-12)
    assert raised_cosine(0.0, 0.22) == 1.0 and raised_cosine(0.4, 0.22) == 0.0


@pytest.mark.parametrize("kind", SHAPERS)
def test_shaper_adjoint_and_matched_filter(kind, rng):
    s = build_shaper(kind, 32)
    a = crandn(rng, (s.n_symbols, 3))
    if s.real_symbols:
        a = a.real
    y = crandn(rng, (32, 3))
    lhs = np.vdot(y, s.apply(a))
    rhs = np.vdot(s.adjoint(y), a)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    np.testing.assert_allclose(s.matched_filter(s.apply(a)), a, atol=1e-12)


@pytest.mark.parametrize("kind", SHAPERS)
def test_stream_roundtrip(kind, rng):
    s = build_shaper(kind, 16)
    d = QAM16.random_symbols(rng, (2, 8, 3))
    st_ = symbols_to_stream(d, s)
    assert st_.shape == (2, s.n_symbols, 3)
    np.testing.assert_array_equal(stream_to_symbols(st_, s), d)


def test_shaper_validation():
    with pytest.raises(ValueError):
        build_shaper("wavelet", 16)
    with pytest.raises(ValueError):
        build_shaper("ofdm-cp", 6)
    with pytest.raises(ValueError):
        build_shaper("cp-sc", 16, rolloff=1.5)


# block operator ---------------------------------------------------------------------

def test_identity_channel_gives_dft(rng):
    M, N = 8, 3
    H = np.broadcast_to(np.eye(N), (M, N, N))
    x = crandn(rng, (M, N))
    np.testing.assert_allclose(block_forward(x, H), centered_dft(x), atol=1e-14)
    np.testing.assert_allclose(centered_idft(centered_dft(x)), x, atol=1e-14)


def test_operator_adjoint_identity(rng):
    M, K, N = 16, 3, 5
    ch = WidebandChannel(crandn(rng, (M, K, N)))
    x = crandn(rng, M * N)
    y = crandn(rng, M * K)
    lhs = np.vdot(y, apply_block_operator(x, ch, 0.7))
    rhs = np.vdot(apply_block_operator(y, ch, 0.7, adjoint=True), x)
    assert lhs == pytest.approx(rhs, abs=1e-10)


@pytest.mark.parametrize("M, K, N", [(4, 1, 2), (8, 2, 4)])
def test_operator_matches_dense_kronecker(M, K, N, rng):
    H = crandn(rng, (M, K, N))
    A = block_operator_matrix(H, 1.3)
    x = crandn(rng, (M, N))
    np.testing.assert_allclose(A @ x.ravel(), block_forward(x, H, 1.3).ravel(), atol=1e-12)
    y = crandn(rng, (M, K))
    np.testing.assert_allclose(A.conj().T @ y.ravel(), block_adjoint(y, H, 1.3).ravel(), atol=1e-12)


# output step ----------------------------------------------------------------------

@pytest.mark.parametrize("kind", SHAPERS)
def test_output_step_zero_at_feasible_point(kind, rng):
    s = build_shaper(kind, 16)
    d = _stream(rng, s, QAM16)
    u = s.apply(d)
    z, _ = block_output_step(u, d, 0.0, s, QAM16)
    np.testing.assert_allclose(z, 0, atol=1e-12)


def test_output_step_inner_symbols_trace():
    s = build_shaper("ofdm-cp", 8)
    d = np.full((4, 2), 1 + 1j)
    _, tr = block_output_step(np.zeros((8, 2), complex), d, 0.5, s, QAM16)
    assert tr == pytest.approx(1 / 1.5)


@pytest.mark.parametrize("kind", SHAPERS)
def test_output_step_against_dense_arithmetic(kind, rng):
    M, K, theta = 8, 2, 0.6
    s = build_shaper(kind, M)
    G = s.matrix()
    d = _stream(rng, s, QAM16)
    u = 3 * crandn(rng, (M, K))
    w = G.conj().T @ u
    if s.real_symbols:
        w = w.real
    proj, kept = ace_project(w, d, QAM16)
    if s.real_symbols:
        proj = proj.real
    z_lit = (G @ proj - u) / (1 + theta)
    z, tr = block_output_step(u, d, theta, s, QAM16)
    np.testing.assert_allclose(z, z_lit, atol=1e-12)
    assert tr == pytest.approx((M * K - 0.5 * kept.sum()) / ((1 + theta) * M * K))


# receiver gain --------------------------------------------------------------------

def test_beta_is_one_for_perfect_match(rng):
    s = build_shaper("cp-sc", 16)
    d = _stream(rng, s, QPSK)
    assert update_beta(s.apply(d), d, s, 0.0) == pytest.approx(1.0)


@given(st.floats(0.1, 10))
def test_beta_homogeneity(c):
    rng = np.random.default_rng(4)
    s = build_shaper("ofdm-cp", 8)
    d = _stream(rng, s, QPSK)
    y0 = crandn(rng, (8, 2))
    assert update_beta(c * y0, d, s, 0.0) == pytest.approx(update_beta(y0, d, s, 0.0) / c)


def test_beta_against_dense_formula(rng):
    M, K, N, s2 = 8, 2, 4, 0.3
    s = build_shaper("cp-sc", M)
    H = crandn(rng, (M, K, N))
    x = PhaseAlphabet(2).points[rng.integers(4, size=(M, N))]
    d = _stream(rng, s, QPSK)
    A = block_operator_matrix(H)
    Gs = (s.matrix() @ d).ravel()
    Ax = A @ x.ravel()
    lit = np.real(np.vdot(Gs, Ax)) / (np.vdot(Ax, Ax).real + K * M * s2)
    assert update_beta(block_forward(x, H), d, s, s2) == pytest.approx(lit, rel=1e-10)


def test_refine_block_beta_monotone(rng):
    s = build_shaper("ofdm-cp", 16)
    H = crandn(rng, (16, 2, 4))
    x = PhaseAlphabet(2).points[rng.integers(4, size=(16, 4))]
    d = _stream(rng, s, QAM16)
    y0 = block_forward(x, H)
    beta, prev = 1.0, np.inf
    for _ in range(4):
        beta, sv, cost = refine_block_beta(y0, d, s, QAM16, 0.1, beta=beta)
        assert cost <= prev + 1e-12
        prev = cost
    assert cost == pytest.approx(block_cost(y0, beta, sv, s, 0.1))


# the iteration ---------------------------------------------------------------------

def test_problem_validation(rng):
    s = build_shaper("ofdm-cp", 8)
    ch = WidebandChannel(crandn(rng, (8, 2, 4)))
    with pytest.raises(ValueError):
        BlockProblem(ch, np.zeros((3, 2)), 0.1, s, QPSK)
    with pytest.raises(ValueError):
        BlockProblem(ch, np.zeros((8, 2)), 0.1, build_shaper("ofdm-cp", 16), QPSK)


def test_toy_block_close_to_exhaustive_minimum():
    rng = np.random.default_rng(21)
    s = build_shaper("ofdm-cp", 4)
    A = PhaseAlphabet(1)
    hits = 0
    for _ in range(5):
        ch = WidebandChannel.from_flat(draw_iid_flat(1, 2, rng).H, 4)
        d = QPSK.random_symbols(rng, (2, 1))
        res = run_block_gamp(BlockProblem(ch, d, 0.1, s, QPSK), A)
        hits += res.state.cost <= 1.05 * block_exhaustive_min(ch.H, d, s, 0.1, QPSK, A)
    assert hits >= 4


@pytest.mark.parametrize("kind", SHAPERS)
def test_block_gamp_runs_for_every_shaper(kind, rng):
    M, K, N = 16, 2, 8
    s = build_shaper(kind, M)
    ch = WidebandChannel(crandn(rng, (M, K, N), 1 / N))
    d = QPSK.random_symbols(rng, (M // 2, K))
    cfg = GampConfig(max_iters=40, min_iters=20)
    res = run_block_gamp(BlockProblem(ch, symbols_to_stream(d, s), 0.01, s, QPSK), PhaseAlphabet(3), cfg)
    np.testing.assert_allclose(np.abs(res.x), 1.0)
    assert np.all(np.diff(res.state.cost_trace) <= 0)
    y = res.beta * block_forward(res.x, ch.H)
    est = stream_to_symbols(s.matched_filter(y), s)
    assert np.mean(hard_detect(est, QPSK) == d) > 0.9


def test_block_batch_matches_individual(rng):
    M, K, N = 8, 2, 6
    s = build_shaper("ofdm-cp", M)
    ch = WidebandChannel(crandn(rng, (M, K, N), 1 / N))
    d = QPSK.random_symbols(rng, (2, M // 2, K))
    cfg = GampConfig(max_iters=30, min_iters=10)
    both = run_block_gamp(BlockProblem(ch, d, 0.05, s, QPSK), PhaseAlphabet(2), cfg)
    for i in range(2):
        one = run_block_gamp(BlockProblem(ch, d[i], 0.05, s, QPSK), PhaseAlphabet(2), cfg)
        np.testing.assert_allclose(one.x, both.x[i])
        assert one.beta == pytest.approx(both.beta[i])


def test_flat_embedding_matches_flat_precoder():
    # identical channels on every tone and OFDM: the block problem splits per
    # tone; at high SNR both precoders detect essentially error-free
    rng = np.random.default_rng(8)
    M, K, N = 16, 2, 16
    s = build_shaper("ofdm-cp", M)
    A = PhaseAlphabet(2)
    errs_block = errs_flat = 0
    for _ in range(3):
        H = draw_iid_flat(K, N, rng).H
        d = QPSK.random_symbols(rng, (M // 2, K))
        res = run_block_gamp(BlockProblem(WidebandChannel.from_flat(H, M), d, 1e-3, s, QPSK), A)
        est = s.matched_filter(res.beta * block_forward(res.x, WidebandChannel.from_flat(H, M).H))
        errs_block += np.sum(hard_detect(est, QPSK) != d)
        st_ = run_gamp(MseProblem(H, d, 1e-3, QPSK), A)
        y = st_.beta[:, None] * (H @ st_.x[..., None])[..., 0]
        errs_flat += np.sum(hard_detect(y, QPSK) != d)
    total = 3 * M // 2 * K
    assert errs_block / total < 0.02 and errs_flat / total < 0.02


def test_block_defaults():
    assert BLOCK_CONFIG.max_iters >= BLOCK_CONFIG.min_iters
