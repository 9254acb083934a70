import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from conftest import toy_generator
from volchain.generator import semigroup
from volchain.matching import (
    FeasibilityError,
    IntensityProfile,
    auto_region,
    b_sum,
    check_lattice_size,
    expected_accrued_variance,
    feasibility_k2,
    feasibility_k3,
    match,
    match_k1,
    match_k2,
    match_k3,
    max_tx_bound,
    quadratic_nonneg_set,
    region_mask,
)
from volchain.moments import Corridor, MomentTable, moments


def synthetic_table(M, gen=None):
    """MomentTable with prescribed values on a toy chain of matching size."""
    M = np.atleast_2d(np.asarray(M, float))
    if gen is None:
        n = M.shape[0]
        gen = toy_generator(np.arange(1.0, n + 1), np.zeros((n, n)))
    return MomentTable(M, Corridor(), gen)


# ---------------------------------------------------------------- b sums

def test_b_sum_examples():
    assert b_sum(1, 1, 3) == 5
    assert b_sum(2, 1, 3) == 13
    assert b_sum(3, 0, 2) == 9


@given(n=st.integers(0, 40), extra=st.integers(1, 60))
def test_b_sum_closed_forms(n, extra):
    m = n + extra
    s1 = lambda k: k * (k + 1) // 2
    s2 = lambda k: k * (k + 1) * (2 * k + 1) // 6
    assert b_sum(1, n, m) == s1(m) - s1(n)
    assert b_sum(2, n, m) == s2(m) - s2(n)
    assert b_sum(3, n, m) == s1(m) ** 2 - s1(n) ** 2


def test_b_sum_rejects_bad_range():
    with pytest.raises(ValueError):
        b_sum(1, 3, 3)
    with pytest.raises(ValueError):
        b_sum(0, 1, 3)


# ---------------------------------------------------------------- k = 1, 2

def test_k1_division_and_zero():
    table = synthetic_table([[0.04, 0, 0], [0.0, 0, 0]])
    prof = match_k1(table, 0.002, 30)
    np.testing.assert_allclose(prof.lambda1, [20.0, 0.0])


def test_k2_lower_window_edge():
    alpha = 0.003
    table = synthetic_table([[1.0, 2 * alpha, 0.0]])
    prof = match_k2(table, alpha, 2, 10)
    assert prof.lambdaN[0] == pytest.approx(1 / (2 * alpha), rel=1e-12)
    assert prof.lambda1[0] == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(prof.reconstructed_moments()[0], [1.0, 2 * alpha], rtol=1e-12)


def test_k2_reduces_to_k1_when_second_moment_is_alpha_m1():
    alpha = 0.002
    M1 = np.array([0.03, 0.05, 0.04])
    table = synthetic_table(np.column_stack([M1, alpha * M1, alpha**2 * M1]))
    prof = match_k2(table, alpha, 7, 20)
    np.testing.assert_allclose(prof.lambdaN, 0.0, atol=1e-9)
    np.testing.assert_allclose(prof.lambda1, M1 / alpha, rtol=1e-12)


def test_k3_single_step_process():
    alpha, lam = 0.002, 17.0
    table = synthetic_table([[lam * alpha, lam * alpha**2, lam * alpha**3]])
    prof = match_k3(table, alpha, 5, 30, 40)
    assert prof.lambda1[0] == pytest.approx(lam, rel=1e-9)
    assert prof.lambdaN[0] == pytest.approx(0.0, abs=1e-9)
    assert prof.lambdaM[0] == pytest.approx(0.0, abs=1e-9)


def test_k2_constant_ratio_window():
    c = 0.004
    table = synthetic_table(np.column_stack([[0.02, 0.05], [0.02 * c, 0.05 * c], [0, 0]]))
    for n in (2, 5, 50):
        rep = feasibility_k2(table, n)
        lo, hi = rep.admissible[0]
        assert lo == pytest.approx(c * b_sum(1, 1, n) / b_sum(2, 1, n))
        assert hi == pytest.approx(c)


@pytest.mark.parametrize("k,kw", [(1, {}), (2, {"n": 30}), (3, {"n": 5, "m": 30})])
def test_reconstruction_on_vg_chain(vg_moments, k, kw):
    regions = {1: (20, 250), 2: (25, 250), 3: (37, 250)}
    prof = match(vg_moments, k, 0.002, 65, region=regions[k], **kw)
    assert prof.moment_residual(vg_moments) <= 1e-9
    for arr in (prof.lambda1, prof.lambdaN, prof.lambdaM):
        if arr is not None:
            assert arr.min() >= 0


def test_extension_outside_region(vg_moments):
    prof = match_k2(vg_moments, 0.002, 30, 65, region=(25, 250))
    x = vg_moments.generator.states
    inside = np.nonzero(prof.region)[0]
    first, last = inside[0], inside[-1]
    assert np.all(prof.lambda1[:first] == prof.lambda1[first])
    assert np.all(prof.lambdaN[last + 1:] == prof.lambdaN[last])
    assert x[first] >= 25 and x[last] <= 250


def test_k2_outside_window_names_state(cev_moments):
    with pytest.raises(FeasibilityError, match="negative intensity .* at state x=") as exc:
        match_k2(cev_moments, 0.00056, 50, 220, region=(20, 250))
    assert exc.value.report is not None and not exc.value.report.feasible


def test_k3_bound_violation_names_ratio():
    bound = max_tx_bound(5, 30)
    table = synthetic_table([[1.0, 1.0, 0.2 * bound], [1.0, 1.0, 0.3 * bound]])
    with pytest.raises(FeasibilityError, match="4\\*M1\\*M3/M2\\^2 = .* at x=2 ") as exc:
        match_k3(table, 0.002, 5, 30, 65)
    assert exc.value.report.k == 3


def test_match_rejects_unknown_order(vg_moments):
    with pytest.raises(ValueError):
        match(vg_moments, 4, 0.002, 65)


def test_profile_validation():
    lam = np.array([1.0, 2.0])
    with pytest.raises(ValueError, match="2C\\+1"):
        IntensityProfile(0.01, 2, 2, lam, lam.copy(), n=5)
    with pytest.raises(ValueError):
        IntensityProfile(0.01, 10, 1, np.array([-1.0, 1.0]))
    with pytest.raises(ValueError):
        IntensityProfile(-0.01, 10, 1, lam)


def test_jump_table_layout():
    prof = IntensityProfile(0.01, 20, 3, np.array([1.0]), np.array([2.0]), np.array([3.0]), n=3, m=6)
    np.testing.assert_array_equal(prof.jump_table(), [[1, 2, 2, 3, 3, 3]])


# ---------------------------------------------------------------- feasibility scans

def scan_alphas(lo=1e-5, hi=0.1, num=400):
    return np.geomspace(lo, hi, num)


def test_feasibility_k2_agrees_with_sign_scan(vg_moments):
    region = (25, 250)
    rep = feasibility_k2(vg_moments, 30, region)
    assert rep.feasible
    for a in scan_alphas():
        try:
            match_k2(vg_moments, a, 30, 65, region)
            ok = True
        except FeasibilityError:
            ok = False
        # the report is exact up to the zeroing tolerance at the window edges
        if ok != rep.admits(a):
            edges = np.array(rep.admissible).ravel()
            assert np.min(np.abs(np.log(a / edges))) < 1e-6


def test_feasibility_k3_agrees_with_sign_scan(vg_moments):
    region = (37, 250)
    rep = feasibility_k3(vg_moments, 5, 30, region)
    assert rep.feasible and rep.admits(0.002)
    mask = region_mask(vg_moments.generator.states, region)
    A_inv = np.linalg.inv(np.array([[1, b_sum(j, 1, 5), b_sum(j, 5, 30)] for j in (1, 2, 3)], float))
    M = vg_moments.values[mask]
    for a in scan_alphas():
        lam = (M / a ** np.arange(1, 4)) @ A_inv.T
        direct = bool(np.all(lam >= -1e-12 * M[:, :1] / a))
        if direct != rep.admits(a):
            edges = np.array(rep.admissible).ravel()
            assert np.min(np.abs(np.log(a / edges[edges > 0]))) < 1e-6


def test_feasibility_k3_report_contents(vg_moments):
    rep = feasibility_k3(vg_moments, 5, 30, (37, 250))
    n = vg_moments.generator.size
    assert rep.discriminant.shape == (n, 3)
    assert rep.bound == pytest.approx(max_tx_bound(5, 30))
    lo, hi = rep.ratio_extremes()
    assert hi <= rep.bound


def test_negative_discriminant_imposes_no_restriction():
    # a alpha^2 + b alpha + c with a > 0 and b^2 < 4ac is positive for every alpha
    assert quadratic_nonneg_set(1.0, 0.5, 1.0) == [(0.0, math.inf)]
    assert quadratic_nonneg_set(-1.0, 0.5, -1.0) == []


def test_max_tx_bound_is_the_lambda_n_threshold():
    # below the bound some alpha makes lambda_n positive; above it none does
    n, m = 5, 30
    bound = max_tx_bound(n, m)
    A_inv = np.linalg.inv(np.array([[1, b_sum(j, 1, n), b_sum(j, n, m)] for j in (1, 2, 3)], float))
    alphas = np.geomspace(1e-6, 10, 20001)
    for factor, expect in ((0.98, True), (1.02, False)):
        M1, M2 = 1.0, 1.0
        M3 = factor * bound * M2**2 / (4 * M1)
        lam_n = (A_inv[1, 0] * M1 / alphas + A_inv[1, 1] * M2 / alphas**2 + A_inv[1, 2] * M3 / alphas**3)
        assert bool(np.any(lam_n > 0)) == expect


@settings(max_examples=200, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), c=st.floats(-10, 10))
def test_quadratic_nonneg_set_by_sampling(a, b, c):
    ivs = quadratic_nonneg_set(a, b, c)
    for x in np.geomspace(1e-4, 1e4, 97):
        val = a * x * x + b * x + c
        inside = any(lo <= x <= hi for lo, hi in ivs)
        if abs(val) > 1e-9 * (abs(a) * x * x + abs(b) * x + abs(c) + 1e-300):
            assert inside == (val > 0)


def test_choose_alpha_inside_window(cev_moments):
    rep = feasibility_k2(cev_moments, 120, (20, 250))
    a = rep.choose_alpha()
    assert rep.admits(a)
    lo, hi = rep.admissible[0]
    assert a == pytest.approx(math.sqrt(lo * hi))


def test_choose_alpha_infeasible(cev_moments):
    rep = feasibility_k2(cev_moments, 50, (20, 250))
    assert not rep.feasible
    assert rep.failing.sum() >= 1
    with pytest.raises(FeasibilityError, match="no bounded admissible"):
        rep.choose_alpha()


def test_feasibility_csv(tmp_path, vg_moments):
    feasibility_k2(vg_moments, 30, (25, 250)).to_csv(tmp_path / "k2.csv")
    feasibility_k3(vg_moments, 5, 30, (37, 250)).to_csv(tmp_path / "k3.csv")
    head2 = (tmp_path / "k2.csv").read_text().splitlines()[0]
    head3 = (tmp_path / "k3.csv").read_text().splitlines()[0]
    assert head2.startswith("state,in_region,ratio_M2_M1")
    assert "lambdaN_root_lo" in head3
    assert "admissible_lo,admissible_hi" in (tmp_path / "k3.csv").read_text()


# ---------------------------------------------------------------- regions and lattice size

def test_region_mask():
    x = np.array([10.0, 20.0, 30.0])
    np.testing.assert_array_equal(region_mask(x, (15, 30)), [False, True, True])
    np.testing.assert_array_equal(region_mask(x, None), [True] * 3)
    with pytest.raises(ValueError):
        region_mask(x, (31, 40))


def test_auto_region_contains_spot(vg_gen):
    mask = auto_region(vg_gen, 35, 2.0, 1e-6)
    idx = np.nonzero(mask)[0]
    assert idx[0] <= 35 <= idx[-1]
    assert np.all(np.diff(idx) == 1)
    row = semigroup(vg_gen, 2.0)[35]
    assert row[~mask].max() <= 1e-6


def test_expected_accrued_variance_by_quadrature(subcev_gen):
    M1 = moments(subcev_gen, Corridor(70, 130), 1).M(1)
    exact = expected_accrued_variance(subcev_gen, M1, 1.0)
    quad, _ = integrate.quad_vec(lambda s: semigroup(subcev_gen, s) @ M1, 0, 1.0, epsabs=1e-12)
    np.testing.assert_allclose(exact, quad, rtol=1e-8, atol=1e-14)


def test_lattice_check():
    chk = check_lattice_size(0.002, 65, 0.08, 3.0)
    assert chk.ok and chk.span == pytest.approx(0.26)
    assert not check_lattice_size(0.001, 65, 0.08, 3.0).ok
