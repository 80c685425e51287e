import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from regfrontier.frontier.fit import (FitError, ProfileSet, fit_constrained, fit_per_height, is_valley,
                                      smallest_mes, valley_brute_force, valley_dp)
from regfrontier.frontier.likelihood import ProfileTable


def fake_profiles(L, g_grid=None):
    H, M = L.shape
    g_grid = np.arange(M, dtype=float) if g_grid is None else g_grid
    hs = np.arange(1, H + 1)
    tables = {int(h): ProfileTable(int(h), g_grid, L[i], np.full(M, 0.5), np.full(M, 0.3)) for i, h in enumerate(hs)}
    ones = {int(h): 0.1 for h in hs}
    return ProfileSet(hs, tables, ones, ones, ones, [])


tables = st.integers(2, 5).flatmap(lambda H: st.integers(1, 6).flatmap(
    lambda M: arrays(float, (H, M), elements=st.integers(-4, 4).map(float))))


@settings(max_examples=300, deadline=None)
@given(L=tables)
def test_dp_matches_enumeration_with_ties(L):
    # integer tables produce many ties; path, value and mes must all agree
    a, b = valley_dp(L), valley_brute_force(L)
    assert a.value == b.value
    assert np.array_equal(a.index, b.index)
    assert a.mes == b.mes
    assert is_valley(a.index)


def test_valley_helpers():
    assert smallest_mes([3, 1, 1, 2]) == 1
    assert smallest_mes([0, 0, 0]) == 0
    assert smallest_mes([2, 1, 0, 0]) == 2
    assert not is_valley([0, 2, 1])
    with pytest.raises(FitError):
        smallest_mes([3, 2, 1])  # switch must leave a final rising step


def test_falling_table_ends_flat():
    # every height prefers a lower g than the last; best valley has a flat final step
    L = -np.abs(np.arange(5)[None, :] - np.array([[4], [3], [2], [1]]))
    p = valley_dp(L.astype(float))
    # [4, 3, 2, 2] and [4, 3, 1, 1] tie; the lexicographically smaller one wins
    assert list(p.index) == [4, 3, 1, 1]
    assert p.value == valley_brute_force(L.astype(float)).value


def test_dp_rejects_infeasible_row():
    L = np.zeros((3, 4))
    L[1] = -np.inf
    with pytest.raises(FitError):
        valley_dp(L)


def test_fit_constrained_uses_valley(rng):
    L = rng.normal(size=(5, 8))
    est = fit_constrained(fake_profiles(L))
    ref = valley_brute_force(L)
    assert np.array_equal(est.g, np.arange(8.0)[ref.index])
    assert est.mes == ref.mes + 1
    assert est.loglik == pytest.approx(ref.value)


def test_fit_per_height_is_rowwise_argmax(rng):
    L = rng.normal(size=(4, 6))
    est = fit_per_height(fake_profiles(L))
    assert np.array_equal(est.g, np.argmax(L, axis=1).astype(float))


def test_excluded_height_is_interpolated(rng):
    L = rng.normal(size=(4, 6))
    prof = fake_profiles(L)
    prof.excluded.append(3)
    est = fit_constrained(prof)
    assert est.flags["interpolated_heights"] == [3]
    assert est.g[2] == pytest.approx(0.5 * (est.g[1] + est.g[3]))
    assert np.isnan(est.mu_u[2])
