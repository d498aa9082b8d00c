from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad

from ksblowup.errors import DivergenceError, DomainError, ParameterError, RangeError, RefinementError
from ksblowup.specialfun import (
    RadialGrid,
    WeightSpec,
    apply_A0,
    apply_A0_inverse,
    build_Tj_table,
    c_coefficient,
    dhat_closed_form,
    dhat_exact,
    eval_profile,
    make_grid,
    three_point_derivative,
    three_point_second_derivative,
    weight,
)


@pytest.fixture(scope="module")
def grid():
    return make_grid(1e-6, 1e3, 64, 1.0)


def test_profile_values():
    assert eval_profile("U", 1e-9) == pytest.approx(8.0)
    assert eval_profile("Q", 1.0) == 2.0
    assert eval_profile("psitilde0", 1e-8) == pytest.approx(-1.0)
    r = np.geomspace(1e-3, 1e3, 50)
    assert np.allclose(eval_profile("T0", r), r ** 2 / (1 + r ** 2) ** 2, rtol=1e-15)
    nu = 1e-2
    assert np.allclose(eval_profile("Q", r, nu=nu), eval_profile("Q", r / nu))
    assert np.allclose(eval_profile("U", r, nu=nu), eval_profile("U", r / nu) / nu ** 2)


@pytest.mark.parametrize("r", [0.0, -1.0, np.nan])
def test_profile_domain(r):
    with pytest.raises(DomainError):
        eval_profile("Q", r)


def test_profile_bad_kind():
    with pytest.raises(ParameterError):
        eval_profile("V", 1.0)


def test_steady_state_identity(grid):
    r = grid.nodes
    Q = eval_profile("Q", r)
    Qr = 8 * r / (1 + r ** 2) ** 2
    Qrr = 8 * (1 - 3 * r ** 2) / (1 + r ** 2) ** 3
    assert np.max(np.abs(Qrr - Qr / r + Q * Qr / r)) <= 1e-12


def test_weights():
    assert weight(WeightSpec("omega_0"), 1.0) == pytest.approx(0.5)
    assert weight(WeightSpec("omega_nu", 1.0, 0.0), 1.0) == pytest.approx(0.5)
    assert weight(WeightSpec("omega_tilde", 1.0, 0.5), 1.0) == pytest.approx(np.exp(-0.25))
    z = np.geomspace(1e-6, 30, 40)
    nu, beta = 1e-3, 0.5
    expect = nu ** 2 / eval_profile("U", z, nu=nu) * np.exp(-beta * z ** 2 / 2)
    assert np.allclose(weight(WeightSpec("omega_nu", nu, beta), z), expect, rtol=1e-14)
    with pytest.raises(ParameterError):
        WeightSpec("omega_x")


def test_make_grid_invariants():
    g = make_grid(1e-7, 10, 64, 1e-4)
    assert g.size >= 64 * 8
    assert g.nodes[0] <= 1e-6
    assert np.all(np.diff(g.nodes) > 0)
    assert np.any(np.isclose(g.nodes, 1.0, rtol=0, atol=1e-15))
    g2 = make_grid(1e-3, 10, 8, 1e-2)
    assert np.all(np.diff(g2.nodes) > 0)


@pytest.mark.parametrize("args", [(1e-2, 10, 64, 1e-3), (1e-3, 10, 4, 1e-2), (1e-3, 1e-4, 64, 1e-2)])
def test_make_grid_rejects(args):
    with pytest.raises(ParameterError):
        make_grid(*args)


def test_grid_rejects_unsorted():
    with pytest.raises(ParameterError):
        RadialGrid(np.array([1.0, 3, 2, 4, 5, 6, 7, 8]))


def test_quadrature_exact_and_refined():
    # T0 w0 / r = r / 8
    vals = []
    for ppd in (64, 128):
        g = make_grid(1e-6, 1e3, ppd, 1.0)
        vals.append(g.integrate(eval_profile("T0", g.nodes) / eval_profile("U", g.nodes) / g.nodes))
    exact = (1e6 - 1e-12) / 16
    assert abs(vals[1] - exact) / exact < 1e-8
    assert abs(vals[1] - vals[0]) / exact < 1e-8


def test_derivatives_second_order():
    errs = []
    for n in (200, 400):
        x = np.geomspace(1e-2, 10, n)
        f = np.sin(x)
        errs.append((np.max(np.abs(three_point_derivative(x, f)[1:-1] - np.cos(x)[1:-1])),
                     np.max(np.abs(three_point_second_derivative(x, f)[1:-1] + f[1:-1]))))
    assert errs[0][0] / errs[1][0] > 3.5
    assert errs[0][1] / errs[1][1] > 1.8


def test_dhat_recursion_and_closed_form():
    assert dhat_exact(1) == Fraction(-1, 2)
    assert dhat_exact(2) == Fraction(1, 16)
    for j in range(1, 13):
        assert dhat_exact(j) == dhat_closed_form(j)
        assert dhat_exact(j + 1) == -dhat_exact(j) / (4 * j * (j + 1))
    with pytest.raises(ParameterError):
        dhat_exact(0)


def test_c_coefficient():
    assert c_coefficient(2, 2) == 8
    assert c_coefficient(3, 0) == 1
    assert c_coefficient(3, 1) == 6
    with pytest.raises(ParameterError):
        c_coefficient(1, 2)


def _inverse_oracle(r):
    # independent adaptive quadrature of the explicit inverse with f = T0
    t0 = lambda z: z ** 2 / (1 + z ** 2) ** 2
    psi0 = r ** 2 / (1 + r ** 2) ** 2
    psit = (r ** 4 + 4 * r ** 2 * np.log(r) - 1) / (1 + r ** 2) ** 2
    i1 = quad(lambda z: (z ** 4 + 4 * z ** 2 * np.log(z) - 1) / z * t0(z), r, 1, limit=200)[0]
    i2 = quad(lambda z: z * t0(z), 0, r, limit=200)[0]
    return 0.5 * psi0 * i1 + 0.5 * psit * i2


def test_A0_inverse_against_quadrature(grid):
    g = apply_A0_inverse(grid, eval_profile("T0", grid.nodes))
    for target in (0.01, 0.5, 3.0, 100.0):
        i = np.argmin(np.abs(grid.nodes - target))
        assert g[i] == pytest.approx(_inverse_oracle(grid.nodes[i]), rel=1e-6, abs=1e-9)
    # T1 = -g ~ -(1/2) ln r + 1/2 at infinity
    i = np.argmin(np.abs(grid.nodes - 100))
    assert abs(g[i] - 0.5 * np.log(grid.nodes[i]) + 0.5) <= 5e-3
    assert abs(g[0]) < 1e-10


def test_A0_inverse_residual_second_order():
    res = []
    for ppd in (64, 128):
        g = make_grid(1e-4, 1e3, ppd, 1.0)
        f = g.nodes ** 2 * np.exp(-g.nodes) * (1 + np.sin(g.nodes))
        r = apply_A0(g, apply_A0_inverse(g, f)) - f
        res.append(np.max(np.abs(r[3:-3])))
    assert res[1] < res[0] / 3.0


def test_A0_kernel(grid):
    res = []
    for ppd in (64, 128):
        g = make_grid(1e-4, 1e3, ppd, 1.0)
        res.append(np.max(np.abs(apply_A0(g, eval_profile("T0", g.nodes))[2:-2])))
    assert res[1] < res[0] / 3.0


def test_A0_inverse_errors():
    g = make_grid(1e-4, 1e3, 32, 1.0, anchor=None)
    if not np.any(g.nodes == 1.0):
        with pytest.raises(RefinementError):
            apply_A0_inverse(g, eval_profile("T0", g.nodes))
    g = make_grid(1e-4, 1e3, 32, 1.0)
    with pytest.raises(DivergenceError):
        apply_A0_inverse(g, g.nodes ** -3.0)
    with pytest.raises(ParameterError):
        apply_A0_inverse(g, np.ones(3))


def test_Tj_table(grid, tmp_path):
    t = build_Tj_table(3, grid)
    assert np.array_equal(t.T[0], eval_profile("T0", grid.nodes))
    far = grid.nodes >= 50
    assert np.all(np.abs(t.Theta[1][far] - 0.5) <= 0.025)
    # recursion: A0 T_{j+1} = -T_j
    for j in range(2):
        assert np.max(np.abs(apply_A0(grid, t.T[j + 1]) + t.T[j])[5:-5]) < 1e-3
    # leading asymptote d_j r^(2j-2) ln r
    r = grid.nodes[grid.nodes > 2]
    for j in (1, 2, 3):
        lead = float(t.dhat[j - 1]) * r ** (2 * j - 2) * np.log(r)
        rel = np.abs(t.T[j][grid.nodes > 2] - lead) / np.abs(lead)
        assert rel[np.argmin(np.abs(r - 1e3))] < rel[np.argmin(np.abs(r - 30))]
    path = t.to_csv(tmp_path / "tj.csv")
    head = path.read_text().splitlines()[0]
    assert head == "r,T0,T1,T2,T3,Theta0,Theta1,Theta2,Theta3"


def test_Tj_table_overflow():
    g = make_grid(1e-3, 1e150, 8, 1.0)
    with pytest.raises(RangeError):
        build_Tj_table(5, g)
    with pytest.raises(ParameterError):
        build_Tj_table(-1, g)
