import numpy as np
import pytest

from ksblowup import spectral as sp
from ksblowup.errors import ParameterError, ResolutionError, TruncationError
from ksblowup.specialfun import eval_profile, make_grid

BETA = 0.5

# independent shooting oracle (high-order ODE integration of the eigenproblem
# with Frobenius start at the origin and Gaussian decay at infinity)
SHOOTING = {
    1e-2: [0.891481, -0.1197104, -1.1264455, -2.1315995],
    1e-3: [0.9272783, -0.0779224, -1.0809018, -2.0831961],
    1e-4: [0.9454248, -0.0575275, -1.0591679, -2.0604689],
}

# regression values of the discrete solver at 64 points per decade
FROZEN = {
    1e-2: [0.8914822, -0.1198153, -1.1267373, -2.1319539, -3.1362554],
    1e-3: [0.9272816, -0.0780214, -1.0811849, -2.0835685, -3.0855573],
    1e-4: [0.9454285, -0.0576246, -1.0594477, -2.0608489, -3.0620509],
}


@pytest.fixture(scope="module", params=sorted(FROZEN))
def azeta(request):
    nu = request.param
    grid = sp.spectral_grid(nu, BETA, 64)
    form = sp.assemble_operator("Azeta", grid, nu=nu, beta=BETA)
    return nu, form, sp.solve_top_spectrum(form, 5)


def test_eigenvalues_match_oracles(azeta):
    nu, form, pairs = azeta
    alpha = np.array([p.alpha for p in pairs])
    assert np.allclose(alpha, FROZEN[nu], atol=2e-7)
    assert np.allclose(alpha[:4], SHOOTING[nu], atol=5e-4)
    assert np.all(np.diff(alpha) < 0)
    assert max(p.residual for p in pairs) <= 1e-9


def test_dense_solver_agrees(azeta):
    nu, form, pairs = azeta
    dense = sp.scipy_top_spectrum(form, 5)
    assert np.allclose(dense, [p.alpha for p in pairs], atol=1e-10)


def test_symmetry(azeta):
    nu, form, _ = azeta
    rng = np.random.default_rng(1)
    for _ in range(20):
        f = np.zeros(form.grid.size)
        g = np.zeros(form.grid.size)
        f[form.unknowns] = rng.standard_normal(f[form.unknowns].size)
        g[form.unknowns] = rng.standard_normal(g[form.unknowns].size)
        a, b = form.inner(form.apply(f), g), form.inner(f, form.apply(g))
        scale = np.sqrt(form.inner(f, f) * form.inner(g, g)) * np.max(np.abs(form.potential))
        assert abs(a - b) <= 1e-12 * scale


def test_sl_coefficients_reproduce_operator():
    # p = w = omega_nu / z and V = U_nu give f'' + (-1/z + Q_nu/z - beta z) f' + U_nu f
    nu = 1e-2
    errs = []
    for ppd in (64, 128):
        grid = sp.spectral_grid(nu, BETA, ppd)
        form = sp.assemble_operator("Azeta", grid, nu=nu, beta=BETA)
        z = grid.nodes
        e = np.exp(-z ** 2)
        f = z ** 2 * e
        fp = (2 * z - 2 * z ** 3) * e
        fpp = (2 - 10 * z ** 2 + 4 * z ** 4) * e
        exact = fpp + (-1 / z + eval_profile("Q", z, nu=nu) / z - BETA * z) * fp \
            + eval_profile("U", z, nu=nu) * f
        got = form.apply(f)
        keep = (z > nu / 10) & (z < 4)
        errs.append(np.max(np.abs(got[keep] - exact[keep]) / np.max(np.abs(exact[keep]))))
    assert errs[1] < errs[0] / 3.0
    assert errs[1] < 1e-3


def test_predicted_alpha():
    L = np.log(1e-3)
    assert sp.predicted_alpha(0, 1e-3, BETA) == pytest.approx(1 + 1 / (2 * L), abs=1e-12)
    assert sp.predicted_alpha(0, 1e-3, BETA) == pytest.approx(0.92762, abs=1e-5)
    assert sp.predicted_alpha(0, 1e-3, BETA, refined=True) == pytest.approx(0.93185, abs=1e-5)
    assert sp.predicted_alpha(1, 1e-3, BETA, refined=True) == pytest.approx(-0.07339, abs=1e-5)
    assert sp.predicted_alpha(1, 1e-8, 1.0) == pytest.approx(1 / np.log(1e-8))
    with pytest.raises(ParameterError):
        sp.predicted_alpha(2, 1e-3, BETA, refined=True)


def test_eigenfunction_norms():
    nu = 1e-4
    rep = sp.compute_spectrum(nu, BETA, 2)
    L = abs(np.log(nu))
    assert 0.8 <= 8 * rep.norms[0] / L <= 1.2
    assert 0.7 <= 4 * rep.norms[1] / L ** 2 <= 1.3
    pair = rep.computed[0]
    scaled = sp.EigenPair(pair.alpha, 3.7 * pair.vector, 0.0, pair.residual, pair.nodes, pair.mass,
                          pair.scale, pair.first)
    assert sp.eigenfunction_norm(scaled, nu, BETA) == pytest.approx(rep.norms[0], rel=1e-12)
    flipped = sp.EigenPair(pair.alpha, -pair.vector, 0.0, pair.residual, pair.nodes, pair.mass,
                           pair.scale, pair.first)
    assert sp.eigenfunction_norm(flipped, nu, BETA) == pytest.approx(rep.norms[0], rel=1e-12)


def test_report_export(tmp_path):
    rep = sp.compute_spectrum(1e-2, BETA, 4)
    assert max(rep.residual_scaled) <= 5
    csv = rep.to_csv(tmp_path / "s.csv").read_text().splitlines()
    assert csv[0] == "n,alpha_computed,alpha_leading,alpha_refined,residual_scaled,norm_sq"
    assert len(csv) == 5
    refined = [row.split(",")[3] for row in csv[1:]]
    assert refined[0] and refined[1] and not refined[2] and not refined[3]
    assert "points_per_decade" in rep.to_json(tmp_path / "s.json").read_text()


def test_spectral_gap():
    nu = 1e-2
    grid = sp.spectral_grid(nu, BETA, 64)
    form = sp.assemble_operator("Azeta", grid, nu=nu, beta=BETA)
    pairs = sp.solve_top_spectrum(form, 5)
    worst = sp.spectral_gap_check(form, pairs[:4], trials=100)
    assert worst <= pairs[4].alpha + 1e-6
    assert sp.spectral_gap_check(form, [], trials=20) <= pairs[0].alpha + 1e-9


def test_eigen_stability():
    nu = 1e-3
    assert np.all(sp.eigen_stability_check(nu, nu, BETA) == 0.0)
    L = abs(np.log(nu))
    gaps = [np.max(sp.eigen_stability_check(nu, nu * (1 + f / L), BETA)) for f in (0.25, 0.5, 1.0)]
    assert gaps[0] < gaps[1] < gaps[2] <= 50
    with pytest.raises(ParameterError):
        sp.eigen_stability_check(nu, 2 * nu, BETA)


def test_A0_truncated_top_eigenvalue():
    tops = []
    for outer in (1e2, 1e3):
        form = sp.assemble_operator("A0", sp.a0_grid(outer, 32))
        tops.append(sp.solve_top_spectrum(form, 1)[0].alpha)
    assert tops[0] < tops[1] < 0.0


def test_coercivity():
    d0 = sp.coercivity_check("delta0", M=20.0)
    d1 = sp.coercivity_check("delta1", M=20.0)
    h = sp.coercivity_check("hardy", M=20.0)
    assert d0 > 0.01 and d1 > 0.0 and h >= 0.2
    assert sp.coercivity_check("hardy", M=20.0, points_per_decade=64) == pytest.approx(h, rel=0.05)


def test_overlaps():
    o = sp.overlap_table(1e-4, BETA)
    assert o["nu_dnu_phi0"] == pytest.approx(0.125, rel=0.15)
    assert o["nu_dnu_phi1_over_ln"] == pytest.approx(-0.25, rel=0.2)
    assert o["beta_dbeta_phi1_over_ln2"] == pytest.approx(0.25, rel=0.2)


def test_assemble_errors():
    grid = sp.spectral_grid(1e-2, BETA, 64)
    with pytest.raises(ParameterError):
        sp.assemble_operator("Azeta", grid, nu=0.5, beta=BETA)
    with pytest.raises(ParameterError):
        sp.assemble_operator("Azeta", grid, nu=1e-2, beta=3.0)
    with pytest.raises(ResolutionError):
        sp.assemble_operator("Azeta", make_grid(1e-3, 20, 32, 1e-2), nu=1e-2, beta=BETA)
    with pytest.raises(TruncationError):
        sp.assemble_operator("Azeta", make_grid(1e-6, 3, 64, 1e-2), nu=1e-2, beta=BETA)
    with pytest.raises(ParameterError):
        sp.solve_top_spectrum(sp.assemble_operator("Azeta", grid, nu=1e-2, beta=BETA), 13)
