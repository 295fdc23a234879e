import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jgl.coeffstream import UpsilonParams, make_constant, sample_dumitriu_edelman, sample_upsilon
from jgl.errors import DomainError
from jgl.greens import (
    ct_bound,
    ct_verify,
    decay_fit,
    greens_column_log,
    greens_entry,
    greens_solve,
    log_ct_bound,
    write_greens_csv,
)
from jgl.spectral import Tridiagonal, eigenvectors, truncate

ETA_HALF = UpsilonParams(0.5, 0.0, 1.0, 1.0)


def test_single_site():
    T = Tridiagonal([0.7], [])
    z = 0.2 + 0.5j
    assert greens_entry(T, z, 1) == pytest.approx(1.0 / (0.7 - z), rel=1e-15)


def test_symmetry_by_reflection():
    g = np.random.default_rng(2)
    T = Tridiagonal(g.normal(size=30), g.uniform(0.5, 2.0, size=29))
    R = Tridiagonal(T.diag[::-1], T.offdiag[::-1])
    z = 0.3 + 0.8j
    # <d_1, G d_N> for T is <d_N, G d_1> for the reflected matrix
    assert greens_entry(R, z, 30) == pytest.approx(greens_entry(T, z, 30), rel=1e-10)


@pytest.mark.parametrize("z", [0.1 + 0.5j, -1.0 + 0.01j, 2.0 + 2.0j, 40.0 + 0.0j])
def test_spectral_resolution_oracle(z):
    T = truncate(sample_upsilon(ETA_HALF, 8), 50)
    w, V = eigenvectors(T)
    x, _ = greens_solve(T, z)
    ref = (V[0] * V) @ (1.0 / (w - z))
    # the eigen-sum loses entries below ~1e-15 |G| to cancellation
    np.testing.assert_allclose(x, ref, rtol=1e-9, atol=1e-13 * np.abs(ref).max())


def test_log_route_matches_solve():
    T = truncate(sample_dumitriu_edelman(1.0, 1), 400)
    z = 0.5 + 1.0j
    x, _ = greens_solve(T, z)
    la, arg = greens_column_log(T, z)
    big = np.abs(x) > 1e-250
    np.testing.assert_allclose(la[big], np.log(np.abs(x[big])), atol=1e-10)
    np.testing.assert_allclose(np.exp(1j * arg[big]), x[big] / np.abs(x[big]), atol=1e-10)


def test_log_route_survives_underflow():
    T = truncate(make_constant(1.0), 3000)
    la, _ = greens_column_log(T, 0.0 + 2.0j)
    assert np.all(np.isfinite(la))
    assert la[-1] < math.log(1e-300)


def test_near_spectrum_rejected():
    T = Tridiagonal([0.0, 0.0], [1.0])
    with pytest.raises(DomainError):
        greens_entry(T, 1.0 + 0.0j, 1)
    with pytest.raises(DomainError):
        greens_column_log(T, -1.0 + 1e-10j)
    assert abs(greens_entry(T, 0.5 + 0.0j, 1)) > 0


def test_site_range():
    T = Tridiagonal([0.0, 0.0], [1.0])
    with pytest.raises(DomainError):
        greens_entry(T, 1j, 3)


@given(seed=st.integers(0, 10**6), E=st.floats(-3, 3), sigma=st.floats(0.05, 5))
def test_resolvent_residual(seed, E, sigma):
    T = truncate(sample_dumitriu_edelman(2.0, seed), 200)
    z = complex(E, sigma)
    _, r = greens_solve(T, z)
    assert r <= 1e-10 * (T.norm_bound() + abs(z))


def test_ct_bound_example():
    assert 1.0 / (40 * math.e) == pytest.approx(0.0091970, abs=1e-7)
    assert ct_bound(1.0, 10.0, 100) == pytest.approx(2.167, abs=1e-3)


def test_ct_bound_large_sigma():
    vals = [ct_bound(s, 1.0, 20) for s in (10.0, 100.0, 1e4)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[-1] == pytest.approx(2 * math.e / 1e4 * math.exp(-20), rel=1e-12)


@given(sigma=st.floats(0.01, 10), f1=st.floats(0.01, 100), df=st.floats(0, 100), N=st.integers(1, 5000))
def test_ct_bound_monotone_in_f(sigma, f1, df, N):
    assert log_ct_bound(sigma, f1 + df, N) >= log_ct_bound(sigma, f1, N) - 1e-12


def test_ct_bound_domain():
    with pytest.raises(DomainError):
        ct_bound(0.0, 1.0, 10)
    with pytest.raises(DomainError):
        ct_bound(1.0, 0.0, 10)


@given(seed=st.integers(0, 2**32), E=st.sampled_from([0.0, 1.0, -1.0]),
       sigma=st.sampled_from([0.5, 1.0, 2.0]),
       kind=st.sampled_from(["ups", "de", "const"]))
def test_margins_nonnegative(seed, E, sigma, kind):
    s = {"ups": sample_upsilon(ETA_HALF, seed), "de": sample_dumitriu_edelman(1.0, seed),
         "const": make_constant(1.0)}[kind]
    rows = ct_verify(s, E, sigma, list(range(10, 301, 10)))
    assert min(r["margin"] for r in rows) >= 0


def test_ct_verify_requires_room():
    with pytest.raises(DomainError):
        ct_verify(make_constant(), 0.0, 1.0, [100], trunc_size=150)
    with pytest.raises(DomainError):
        ct_verify(make_constant(), 0.0, 1.0, [])


def test_constant_stream_linear_decay():
    rows = ct_verify(make_constant(1.0), 0.0, 1.0, list(range(50, 1001, 50)))
    N = [r["N"] for r in rows]
    slope, _, r2 = decay_fit(N, [r["log_abs_G"] for r in rows], 1.0)
    assert slope > 0 and r2 > 0.9999


def test_truncation_stability():
    s = sample_upsilon(ETA_HALF, 3)
    N_list = list(range(20, 501, 40))
    a = ct_verify(s, 0.5, 1.0, N_list, trunc_size=1000)
    b = ct_verify(s, 0.5, 1.0, N_list, trunc_size=2000)
    for ra, rb in zip(a, b):
        assert abs(math.expm1(ra["log_abs_G"] - rb["log_abs_G"])) < 1e-6


def test_decay_fit_exact():
    N = np.arange(100, 2001, 100)
    slope, icpt, r2 = decay_fit(N, -(0.3 * np.sqrt(N) + 2.0), 0.5)
    assert slope == pytest.approx(0.3) and icpt == pytest.approx(2.0) and r2 == pytest.approx(1.0)


def test_greens_csv(tmp_path):
    rows = ct_verify(make_constant(1.0), 0.0, 1.0, [10, 20])
    write_greens_csv(rows, tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "N,sigma,E,log_abs_G,log_bound,margin"
    assert len(lines) == 3
