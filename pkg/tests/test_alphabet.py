import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phasegamp.alphabet import (AceRegion, Constellation, PhaseAlphabet, ace_project, hard_detect,
                                in_extended_set, phase_project, phase_soft_project)

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)
cplx = st.builds(complex, finite, finite)


# phase alphabet -------------------------------------------------------------

def test_alphabet_points_unit_modulus_and_offset():
    A = PhaseAlphabet(3)
    assert A.size == 8
    np.testing.assert_allclose(np.abs(A.points), 1.0)
    np.testing.assert_allclose(A.points[0], np.exp(1j * np.pi / 8))


def test_alphabet_rejects_bad_bits():
    with pytest.raises(ValueError):
        PhaseAlphabet(0)
    with pytest.raises(ValueError):
        PhaseAlphabet(1.5)


@pytest.mark.parametrize("b, v, expected", [
    (2, 2 + 1j, np.exp(1j * np.pi / 4)),
    (1, 1.0, 1j),  # tie between +j and -j goes to the first point
    (3, np.exp(0.40j), np.exp(1j * np.pi / 8)),
])
def test_phase_project_examples(b, v, expected):
    assert phase_project(v, PhaseAlphabet(b)) == pytest.approx(expected)


@pytest.mark.parametrize("b", [1, 2, 3, 4])
def test_phase_project_matches_exhaustive_search(b, rng):
    A = PhaseAlphabet(b)
    v = rng.standard_normal(4000) + 1j * rng.standard_normal(4000)
    dist = np.abs(v[:, None] - A.points[None, :])
    np.testing.assert_allclose(phase_project(v, A), A.points[dist.argmin(axis=1)])


@given(cplx, st.integers(1, 5))
def test_phase_project_lands_on_alphabet_and_is_idempotent(v, b):
    A = PhaseAlphabet(b)
    x = phase_project(v, A)
    assert np.min(np.abs(A.points - x)) < 1e-12
    assert phase_project(x, A) == x


@given(cplx, st.integers(1, 4), st.floats(0.1, 10))
def test_phase_project_scale_invariant(v, b, c):
    A = PhaseAlphabet(b)
    if abs(v) < 1e-6:
        return
    # exclude near-ties, where rounding in the scaling may flip the choice
    score = np.sort(np.real(np.conj(A.points) * v))
    if score[-1] - score[-2] < 1e-9 * abs(v):
        return
    assert phase_project(c * v, A) == phase_project(v, A)


# soft projection --------------------------------------------------------------

def test_soft_project_matches_four_point_enumeration():
    # literal weights exp(-(gamma/xi)|xi x - v|^2), evaluated offline in 40-digit arithmetic
    value, slope = phase_soft_project(1.0 + 0j, 1.0, 1.0, PhaseAlphabet(2))
    assert value == pytest.approx(0.62818345490543981, abs=1e-14)
    # Wirtinger derivative by central differences of the same enumeration
    assert slope == pytest.approx(0.60538554698306527, abs=1e-12)


def test_soft_project_zero_temperature_is_origin():
    v = np.array([1 + 2j, -3 + 0.1j, 0.5j])
    value, _ = phase_soft_project(v, 1.0, 0.0, PhaseAlphabet(2))
    np.testing.assert_allclose(value, 0, atol=1e-15)


@pytest.mark.parametrize("b", [1, 2, 3])
def test_soft_project_converges_to_hard_projection(b, rng):
    A = PhaseAlphabet(b)
    v = rng.standard_normal(200) + 1j * rng.standard_normal(200)
    # stay away from decision boundaries, where the limit is approached slowly
    score = np.sort(np.real(np.conj(A.points) * v[:, None]), axis=1)
    v = v[score[:, -1] - score[:, -2] > 1e-2]
    value, slope = phase_soft_project(v, 1.0, 1e4, A)
    np.testing.assert_allclose(value, phase_project(v, A), atol=1e-6)
    assert np.all(slope.real >= 0)


@given(cplx, st.floats(0.01, 5), st.floats(0.0, 50), st.integers(1, 4))
def test_soft_project_value_in_disc_and_xi_free(v, xi, gamma, b):
    A = PhaseAlphabet(b)
    val, slope = phase_soft_project(v, xi, gamma, A)
    val2, _ = phase_soft_project(v, 2 * xi, gamma, A)
    assert abs(val) <= 1 + 1e-12
    assert val == pytest.approx(val2, abs=1e-12)
    assert 0 <= slope.real <= gamma + 1e-9


def test_soft_project_slope_is_finite_difference_derivative(rng):
    A = PhaseAlphabet(2)
    v = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    gamma, h = 1.7, 1e-6
    _, slope = phase_soft_project(v, 1.0, gamma, A)

    def val(w):
        return phase_soft_project(w, 1.0, gamma, A)[0]

    d_re = (val(v + h) - val(v - h)) / (2 * h)
    d_im = (val(v + 1j * h) - val(v - 1j * h)) / (2 * h)
    np.testing.assert_allclose(slope, 0.5 * (d_re - 1j * d_im), atol=1e-7)


def test_soft_project_inverse_magnitude_mode():
    A = PhaseAlphabet(2)
    _, s = phase_soft_project(np.array([2.0, 0.0]), 1.0, 1.0, A, slope_mode="inverse_magnitude")
    assert s[0] == pytest.approx(0.25)
    assert s[1] == pytest.approx(1e6)


def test_soft_project_extreme_gamma_does_not_overflow():
    A = PhaseAlphabet(3)
    val, _ = phase_soft_project(1e3 + 1e3j, 1.0, 1e4, A)
    assert np.isfinite(val)


def test_soft_project_rejects_bad_xi():
    with pytest.raises(ValueError):
        phase_soft_project(1.0, 0.0, 1.0, PhaseAlphabet(2))


# constellations ---------------------------------------------------------------

def test_constellation_names():
    assert Constellation.from_name("QPSK").size == 4
    assert Constellation.from_name("16qam").order == 4
    assert Constellation.from_name("8psk").kind == "psk"
    assert Constellation.from_name("bpsk").points.tolist() == [1, -1]
    assert Constellation.qam(4).sigma_d_sq == pytest.approx(10.0)
    with pytest.raises(ValueError):
        Constellation.from_name("32qam")


@pytest.mark.parametrize("const, y, expected", [
    (Constellation.qpsk(), 0.2 + 0.9j, 1 + 1j),
    (Constellation.qam(4), 2.1 - 0.4j, 3 - 1j),
    (Constellation.qam(4), -3 + 1j, -3 + 1j),
])
def test_hard_detect_examples(const, y, expected):
    assert hard_detect(y, const) == expected


def test_hard_detect_tie_goes_to_smallest_index():
    c = Constellation.qpsk()
    assert hard_detect(0.0, c) == c.points[0]


@given(cplx)
def test_hard_detect_is_nearest_point(y):
    c = Constellation.qam(4)
    d = hard_detect(y, c)
    assert abs(y - d) <= np.min(np.abs(y - c.points)) + 1e-12


# extended constellation --------------------------------------------------------

@pytest.mark.parametrize("d, u, s, slopes", [
    (1 + 1j, 5 - 3j, 1 + 1j, (0, 0)),
    (3 - 3j, 2.5 - 4j, 3 - 4j, (0, 1)),
])
def test_ace_project_16qam_examples(d, u, s, slopes):
    out, k = ace_project(u, d, Constellation.qam(4))
    assert out == s
    assert tuple(k) == slopes


def test_ace_project_qpsk_example():
    out, k = ace_project(2 + 0.5j, 1 + 1j, Constellation.qpsk())
    assert out == 2 + 1j
    assert tuple(k) == (1, 0)


@pytest.mark.parametrize("s, d, expected", [
    (3 + 3j, 3 + 3j, True),
    (4 + 5j, 3 + 3j, True),
    (1.5 + 1j, 1 + 1j, False),  # fails against the neighbour 3+1j
])
def test_in_extended_set_examples(s, d, expected):
    assert in_extended_set(s, d, Constellation.qam(4)) is expected


def _grid_projection(u, d, const, step):
    """Brute force: nearest grid point satisfying the membership inequalities."""
    n = int(round(8 / step))
    g = np.arange(-n, n + 1) * step
    S = (g[:, None] + 1j * g[None, :]).ravel()
    others = const.points[np.abs(const.points - d) > 1e-12]
    ok = np.all(np.real((S[:, None] - d) * np.conj(d - others[None, :])) >= -1e-12, axis=1)
    S = S[ok]
    return S[np.argmin(np.abs(S - u))]


@pytest.mark.parametrize("name", ["qpsk", "16qam", "8psk"])
def test_ace_project_matches_grid_brute_force(name, rng):
    const = Constellation.from_name(name)
    step = 0.02
    for _ in range(60):
        d = const.points[rng.integers(const.size)]
        u = 3 * (rng.standard_normal() + 1j * rng.standard_normal())
        s, _ = ace_project(u, d, const)
        g = _grid_projection(u, d, const, step)
        assert in_extended_set(s, d, const)
        if const.kind == "qam":
            # faces are axis-aligned and lie on the grid
            assert abs(s - g) <= step
        else:
            # slanted faces: compare attained distances instead
            assert abs(s - u) <= abs(g - u) + 1e-12
            assert abs(g - u) - abs(s - u) <= step * np.sqrt(2)


@given(cplx, st.integers(0, 15))
def test_ace_project_is_projection(u, i):
    const = Constellation.qam(4)
    d = const.points[i]
    s, k = ace_project(u, d, const)
    assert in_extended_set(s, d, const)
    # idempotent and nonexpansive towards the symbol itself
    assert ace_project(s, d, const)[0] == pytest.approx(s)
    assert abs(s - u) <= abs(d - u) + 1e-12
    assert set(np.unique(k)) <= {0.0, 1.0}


@given(cplx, st.integers(0, 7))
def test_psk_wedge_projection_is_in_set_and_closest(u, i):
    const = Constellation.psk(8)
    d = const.points[i]
    s, _ = ace_project(u, d, const)
    assert in_extended_set(s, d, const, tol=1e-8)
    assert abs(s - u) <= abs(d - u) + 1e-9


def test_region_contains_agrees_with_membership(rng):
    for name in ["qpsk", "16qam", "8psk"]:
        const = Constellation.from_name(name)
        for _ in range(200):
            d = const.points[rng.integers(const.size)]
            s = d + 2 * (rng.standard_normal() + 1j * rng.standard_normal())
            assert AceRegion.for_symbol(d, const).contains(s) == in_extended_set(s, d, const)


def test_inner_points_have_singleton_extended_set():
    const = Constellation.qam(4)
    inner = [p for p in const.points if abs(p.real) < 3 and abs(p.imag) < 3]
    for d, u in itertools.product(inner, [4 + 4j, -5 - 1j]):
        assert ace_project(u, d, const)[0] == d
