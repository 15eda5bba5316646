import numpy as np
import pytest

from privlens.zernike import (
    PhaseMask,
    PupilGrid,
    build_basis,
    compose_mask,
    nm_to_noll,
    noll_to_nm,
    radial_poly,
    zernike,
)

# Noll (1976), table 1, first 36 entries
NOLL_TABLE = {
    1: (0, 0), 2: (1, 1), 3: (1, -1), 4: (2, 0), 5: (2, -2), 6: (2, 2),
    7: (3, -1), 8: (3, 1), 9: (3, -3), 10: (3, 3),
    11: (4, 0), 12: (4, 2), 13: (4, -2), 14: (4, 4), 15: (4, -4),
    16: (5, 1), 17: (5, -1), 18: (5, 3), 19: (5, -3), 20: (5, 5), 21: (5, -5),
    22: (6, 0), 23: (6, -2), 24: (6, 2), 25: (6, -4), 26: (6, 4), 27: (6, -6), 28: (6, 6),
    29: (7, -1), 30: (7, 1), 31: (7, -3), 32: (7, 3), 33: (7, -5), 34: (7, 5), 35: (7, -7), 36: (7, 7),
}


def noll_index_oracle(n, m):
    """Closed-form Noll index (mod-4 rule), independent of the library's enumeration."""
    j = n * (n + 1) // 2 + abs(m)
    if (m > 0 and n % 4 in (0, 1)) or (m < 0 and n % 4 in (2, 3)):
        return j
    return j + 1


def test_noll_table_first_36():
    for j, nm in NOLL_TABLE.items():
        assert noll_to_nm(j) == nm, j


def test_noll_matches_closed_form_oracle():
    for n in range(0, 44):
        for m in range(-n, n + 1, 2):
            assert nm_to_noll(n, m) == noll_index_oracle(n, m)


def test_noll_bijective_to_1000():
    seen = set()
    for j in range(1, 1001):
        n, m = noll_to_nm(j)
        assert n >= abs(m) >= 0 and (n - abs(m)) % 2 == 0
        assert nm_to_noll(n, m) == j
        seen.add((n, m))
    assert len(seen) == 1000


def test_named_terms():
    assert noll_to_nm(1) == (0, 0)
    assert noll_to_nm(4) == (2, 0)
    assert {noll_to_nm(2), noll_to_nm(3)} == {(1, 1), (1, -1)}


@pytest.mark.parametrize("bad", [0, -3])
def test_noll_rejects_nonpositive(bad):
    with pytest.raises(ValueError):
        noll_to_nm(bad)


def test_radial_values():
    rho = np.linspace(0, 1, 7)
    assert np.allclose(radial_poly(1, 1, rho), rho)
    assert radial_poly(2, 0, 0.5) == pytest.approx(-0.5)
    assert np.allclose(radial_poly(4, 0, rho), 6 * rho**4 - 6 * rho**2 + 1)


def test_radial_rejects_odd_difference():
    with pytest.raises(ValueError):
        radial_poly(3, 0, 0.5)


def test_piston_is_constant_one():
    rho = np.random.default_rng(0).uniform(0, 1, 20)
    theta = np.random.default_rng(1).uniform(-np.pi, np.pi, 20)
    assert np.all(zernike(1, rho, theta) == 1.0)


def test_gram_leakage_below_two_percent():
    basis = build_basis(PupilGrid(256, 1e-3), 15)
    g = basis.gram()
    d = np.sqrt(np.diag(g))
    off = np.abs(g / np.outer(d, d) - np.eye(15))
    assert off.max() < 0.02
    assert np.allclose(np.diag(g), 1.0, atol=0.02)


def test_compose_mask_linear():
    basis = build_basis(PupilGrid(64, 1e-3), 15)
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal(15), rng.standard_normal(15)
    c = 0.37
    lhs = compose_mask(basis, a + c * b).phi
    rhs = compose_mask(basis, a).phi + c * compose_mask(basis, b).phi
    assert np.max(np.abs(lhs - rhs)) <= 1e-13 * np.max(np.abs(lhs))


def test_zero_coefficients_give_zero_mask():
    basis = build_basis(PupilGrid(32, 1e-3), 10)
    assert np.all(compose_mask(basis, np.zeros(10)).phi == 0)


def test_rotationally_symmetric_terms_are_point_symmetric():
    basis = build_basis(PupilGrid(64, 1e-3), 36)
    for j in range(1, 37):
        if noll_to_nm(j)[1] == 0:
            z = basis.maps[j - 1]
            assert np.array_equal(z, z[::-1, ::-1]), j


def test_maps_vanish_outside_disk():
    grid = PupilGrid(32, 1e-3)
    basis = build_basis(grid, 6)
    assert np.all(basis.maps[:, ~grid.disk] == 0)


def test_compose_mask_validates():
    basis = build_basis(PupilGrid(16, 1e-3), 4)
    with pytest.raises(ValueError):
        compose_mask(basis, np.zeros(5))
    with pytest.raises(ValueError):
        compose_mask(basis, np.array([0, np.nan, 0, 0]))


def test_grid_validation():
    with pytest.raises(ValueError):
        PupilGrid(63, 1e-3)
    with pytest.raises(ValueError):
        PupilGrid(64, 0.0)


def test_phase_mask_holds_grid():
    grid = PupilGrid(16, 1e-3)
    m = PhaseMask(grid, np.zeros((16, 16)))
    assert m.grid is grid
