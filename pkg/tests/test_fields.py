import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.fft import dst

from rdlab.fields import (BoxDomain, Field, big_phi, coeffs_to_nodal, from_bytes, h1_seminorm,
                          iter_fields, l2_norm, load_field, lp_norm, negative_part, nodal_to_coeffs,
                          phi_km, positive_part, save_field, sine_matrix, to_bytes, truncate,
                          write_csv)
from rdlab.rng import generator, random_field

seeds = st.integers(min_value=0, max_value=2**32)


def test_domain_validation():
    with pytest.raises(ValueError):
        BoxDomain(1, (np.pi,), (4,))
    with pytest.raises(ValueError):
        BoxDomain(2, (1.0,), (16,))
    with pytest.raises(ValueError):
        BoxDomain(1, (-1.0,), (16,))
    with pytest.raises(ValueError):
        BoxDomain(0, (), ())


def test_domain_geometry(line, square):
    assert line.shape == (63,)
    assert line.spacing[0] == pytest.approx(np.pi / 64)
    assert line.measure == pytest.approx(np.pi)
    assert square.mode_norm2 == pytest.approx(0.25)
    assert line.refined().resolution == (127,)


def test_eigenvalues_are_sums_of_squares(square):
    lam = square.eigenvalues()
    assert lam[0, 0] == pytest.approx(2 * np.pi**2)
    assert lam[2, 1] == pytest.approx((9 + 4) * np.pi**2)
    with pytest.raises(ValueError):
        lam[0, 0] = 0.0


def test_sine_matrix_matches_dst():
    rng = np.random.default_rng(1)
    c = rng.standard_normal(31)
    assert np.allclose(sine_matrix(31, 31) @ c, dst(c, type=1) / 2, atol=1e-13)


@pytest.mark.parametrize("shape", [(17,), (9, 12), (8, 9, 10)])
def test_transform_round_trip(shape):
    rng = np.random.default_rng(len(shape))
    c = rng.standard_normal(shape)
    assert np.allclose(nodal_to_coeffs(coeffs_to_nodal(c)), c, atol=1e-12)


def test_fine_grid_evaluation_and_projection():
    c = np.zeros(15)
    c[2] = 1.0
    fine = coeffs_to_nodal(c, out_shape=(23,))
    x = np.arange(1, 24) / 24
    assert np.allclose(fine, np.sin(3 * np.pi * x), atol=1e-13)
    assert np.allclose(nodal_to_coeffs(fine, keep=(15,)), c, atol=1e-13)


def test_mode_nodal_values(line):
    u = Field.mode(line, 2, amplitude=3.0)
    x = line.axes()[0]
    assert np.allclose(u.nodal, 3 * np.sin(2 * x), atol=1e-13)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_mode_norms(line, k):
    u = Field.mode(line, k)
    assert l2_norm(u) == pytest.approx(np.sqrt(np.pi / 2), rel=1e-12)
    assert lp_norm(u, 2) == pytest.approx(np.sqrt(np.pi / 2), rel=1e-12)
    assert h1_seminorm(u) == pytest.approx(k * np.sqrt(np.pi / 2), rel=1e-12)


def test_fields_are_immutable(line):
    u = Field.mode(line, 1)
    with pytest.raises(ValueError):
        u.coeffs[0] = 2.0
    with pytest.raises(ValueError):
        u.nodal[0] = 2.0


def test_domain_mismatch(line):
    other = BoxDomain.interval(1.0, 63)
    with pytest.raises(ValueError):
        Field.mode(line, 1) + Field.mode(other, 1)
    with pytest.raises(ValueError):
        Field(line, np.zeros(10))


@given(seeds)
def test_inner_product_matches_quadrature(seed):
    dom = BoxDomain.box((1.0, 2.0), (12, 10))
    rng = generator(seed)
    u, v = random_field(dom, rng), random_field(dom, rng)
    quad = float(np.sum(u.nodal * v.nodal) * dom.cell_volume)
    assert u.inner(v) == pytest.approx(quad, rel=1e-10, abs=1e-12)


@given(seeds, st.floats(0.05, 5.0))
def test_truncation_properties(seed, k):
    u = random_field(BoxDomain.interval(np.pi, 31), generator(seed), l2=3.0)
    t = truncate(u, k)
    assert np.abs(t.nodal).max() <= k * (1 + 1e-12)
    assert np.array_equal(truncate(t, k).nodal, t.nodal)
    assert lp_norm(t, 4) <= lp_norm(u, 4) * (1 + 1e-12)
    assert truncate(u, np.inf) is u


def test_truncation_rejects_bad_level(line):
    with pytest.raises(ValueError):
        truncate(Field.mode(line, 1), 0.0)


@given(seeds)
def test_positive_negative_split(seed):
    u = random_field(BoxDomain.interval(np.pi, 31), generator(seed))
    p, n = positive_part(u), negative_part(u)
    assert np.allclose((p - n).nodal, u.nodal, atol=1e-12)
    assert p.nodal.min() >= 0 and n.nodal.min() >= 0


@given(seeds, st.sampled_from([1.0, 1.5, 2.0, 4.0]))
def test_lp_norms_increase_with_exponent_on_unit_measure(seed, m):
    dom = BoxDomain.interval(1.0, 31)
    u = random_field(dom, generator(seed))
    assert lp_norm(u, m) <= lp_norm(u, 2 * m) * (1 + 1e-12)
    assert lp_norm(u, 2 * m) <= lp_norm(u, np.inf) * (1 + 1e-12)


def test_lp_norm_handles_large_exponents(line):
    u = Field.mode(line, 1, amplitude=1e3)
    assert np.isfinite(lp_norm(u, 256))
    assert lp_norm(Field.zeros(line), 4) == 0.0
    with pytest.raises(ValueError):
        lp_norm(u, 0.5)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_lp_norm_rejects_nonfinite(line):
    u = Field(line, np.full(line.shape, np.inf))
    with pytest.raises(FloatingPointError):
        lp_norm(u, 2)


@pytest.mark.parametrize("k, m", [(1.0, 1), (0.5, 2), (2.0, 3.5)])
def test_phi_closed_form(k, m):
    s = np.array([0.0, 0.5 * k, k, 2 * k])
    expected = [0.0, (0.5 * k) ** (2 * m) / (2 * m), k ** (2 * m) / (2 * m),
                k ** (2 * m) / (2 * m) + k * k ** (2 * m - 1)]
    assert np.allclose(phi_km(s, k, m), expected, rtol=1e-14)


@given(st.floats(0.05, 10), st.floats(1, 6))
def test_phi_is_convex_and_c1(k, m):
    s = np.linspace(0, 3 * k, 3001)
    v = phi_km(s, k, m)
    assert np.all(np.diff(v) >= 0)
    assert np.all(np.diff(v, 2) >= -1e-12 * max(1.0, v.max()))
    eps = 1e-7 * k
    left = (phi_km(k, k, m) - phi_km(k - eps, k, m)) / eps
    right = (phi_km(k + eps, k, m) - phi_km(k, k, m)) / eps
    assert left == pytest.approx(right, rel=1e-5)


def test_phi_rejects_bad_arguments():
    with pytest.raises(ValueError):
        phi_km(-1.0, 1.0, 1)
    with pytest.raises(ValueError):
        phi_km(1.0, 0.0, 1)
    with pytest.raises(ValueError):
        phi_km(1.0, 1.0, 0.5)


def test_phi_without_truncation_matches_power():
    assert phi_km(2.0, np.inf, 2) == pytest.approx(4.0)


@given(seeds, st.sampled_from([1, 2, 4, 8]), st.sampled_from([0.1, 1.0, 10.0]))
def test_potential_sandwich(seed, m, k):
    rng = generator(seed)
    u = positive_part(random_field(BoxDomain.interval(np.pi, 63), rng,
                                   l2=float(np.exp(rng.uniform(-2, 2)))))
    low = lp_norm(truncate(u, k), 2 * m) ** (2 * m) / (2 * m)
    high = lp_norm(u, 2 * m) ** (2 * m) / (2 * m)
    mid = big_phi(u, k, m)
    assert low <= mid * (1 + 1e-10) + 1e-300
    assert mid <= high * (1 + 1e-10) + 1e-300


@given(seeds)
def test_serialization_round_trip(seed):
    dom = BoxDomain.box((1.0, 2.5), (9, 11))
    u = random_field(dom, generator(seed))
    back = from_bytes(to_bytes(u))
    assert back.domain == dom
    assert np.array_equal(back.coeffs, u.coeffs)


def test_serialization_files_and_streams(tmp_path, line):
    u, v = Field.mode(line, 1), Field.mode(line, 3, 2.0)
    save_field(u, tmp_path / "u.bin")
    assert np.array_equal(load_field(tmp_path / "u.bin").coeffs, u.coeffs)
    both = list(iter_fields(to_bytes(u) + to_bytes(v)))
    assert [np.array_equal(a.coeffs, b.coeffs) for a, b in zip(both, (u, v))] == [True, True]
    with pytest.raises(ValueError):
        from_bytes(to_bytes(u) + b"\0")
    write_csv(v, tmp_path / "v.csv")
    rows = (tmp_path / "v.csv").read_text().splitlines()
    assert rows[0] == "index,coefficient" and rows[3] == "3,2.0"
