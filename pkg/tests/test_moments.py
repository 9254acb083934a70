import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy_generator
from volchain.moments import Corridor, clamp, crossing_mask, moments

LOG2 = math.log(2.0)


@pytest.fixture
def three_state():
    # 2 jumps to 1 and to 4 at unit rate; the ends jump back to 2
    return toy_generator([1.0, 2.0, 4.0], [[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def brute_force_moment(gen, corridor, j):
    """First-jump expectation written straight from the definition, one pair at a time."""
    x = gen.states
    L = gen.entries
    out = np.zeros(len(x))
    lo, hi = corridor.lower, corridor.upper
    for a in range(len(x)):
        for b in range(len(x)):
            if a == b:
                continue
            xa, xb = min(max(x[a], lo), hi), min(max(x[b], lo), hi)
            val = math.log(xb / xa) ** (2 * j)
            over = (x[a] < lo and x[b] > hi) or (x[a] > hi and x[b] < lo)
            if over:
                val -= math.log(hi / lo) ** (2 * j)
            out[a] += L[a, b] * val
    return out


def test_three_state_full_corridor(three_state):
    table = moments(three_state, Corridor(), 3)
    for j in (1, 2, 3):
        np.testing.assert_allclose(table.M(j), [LOG2 ** (2 * j), 2 * LOG2 ** (2 * j), LOG2 ** (2 * j)], rtol=1e-14)
    assert table.M(1)[1] == pytest.approx(2 * LOG2**2)


def test_three_state_corridor_clamps(three_state):
    table = moments(three_state, Corridor(1.5, 3.0), 1)
    expected_mid = math.log(1.5 / 2) ** 2 + math.log(3 / 2) ** 2
    assert table.M(1)[1] == pytest.approx(expected_mid, rel=1e-14)
    assert table.M(1)[0] == pytest.approx(math.log(2 / 1.5) ** 2, rel=1e-14)


def test_jump_over_corridor_accrues_nothing():
    gen = toy_generator([1.0, 2.0, 4.0], [[0, 0, 3], [1, 0, 1], [5, 0, 0]])
    table = moments(gen, Corridor(1.5, 3.0), 2)
    assert table.M(1)[0] == 0.0 and table.M(1)[2] == 0.0
    for j in (1, 2):
        np.testing.assert_allclose(table.M(j), brute_force_moment(gen, Corridor(1.5, 3.0), j), atol=1e-15)


@pytest.mark.parametrize("corridor", [Corridor(), Corridor(70, 130), Corridor(90, math.inf), Corridor(0, 110)])
def test_matches_brute_force(subcev_gen, corridor):
    table = moments(subcev_gen, corridor, 3)
    for j in (1, 2, 3):
        ref = brute_force_moment(subcev_gen, corridor, j)
        np.testing.assert_allclose(table.M(j), ref, rtol=1e-12, atol=1e-300)


def test_moments_nonnegative(cev_moments):
    assert cev_moments.values.min() >= 0
    assert cev_moments.order == 3


def test_clamp_and_crossing():
    c = Corridor(70, 130)
    np.testing.assert_array_equal(clamp(np.array([50.0, 100.0, 200.0]), c), [70, 100, 130])
    assert clamp(50.0, c) == 70.0
    cross = crossing_mask(np.array([50.0, 100.0, 200.0]), c)
    assert cross[0, 2] and cross[2, 0] and cross.sum() == 2
    assert not crossing_mask(np.array([50.0, 200.0]), Corridor(70)).any()


def test_corridor_validation():
    with pytest.raises(ValueError):
        Corridor(130, 70)
    with pytest.raises(ValueError):
        Corridor(-1, 10)
    assert Corridor().is_full and not Corridor(70).is_full
    assert Corridor(70, 130).contains(70) and Corridor(70, 130).contains(130)


def test_moment_order_validation(three_state):
    with pytest.raises(ValueError):
        moments(three_state, Corridor(), 0)


def test_to_csv(tmp_path, three_state):
    table = moments(three_state, Corridor(), 2)
    table.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "state,M1,M2"
    assert len(lines) == 4


@settings(max_examples=40, deadline=None)
@given(
    lo1=st.floats(20, 99), hi1=st.floats(101, 400),
    shrink_lo=st.floats(0, 1), shrink_hi=st.floats(0, 1),
)
def test_narrower_corridor_never_increases_moments(subcev_gen, lo1, hi1, shrink_lo, shrink_hi):
    lo2 = lo1 + shrink_lo * (99.5 - lo1)
    hi2 = hi1 - shrink_hi * (hi1 - 100.5)
    wide = moments(subcev_gen, Corridor(lo1, hi1), 3).values
    narrow = moments(subcev_gen, Corridor(lo2, hi2), 3).values
    full = moments(subcev_gen, Corridor(), 3).values
    assert np.all(narrow <= wide * (1 + 1e-12) + 1e-300)
    assert np.all(wide <= full * (1 + 1e-12) + 1e-300)
