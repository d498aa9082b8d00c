"""Cross-module acceptance suite, shared by the test-suite and ``verify``.

Each check returns a CheckResult with the measured numbers, so a failing
item reports what it saw rather than just False.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import modulation as mod
from . import pde
from .spectral import (
    assemble_operator,
    coercivity_check,
    compute_spectrum,
    eigen_stability_check,
    overlap_table,
    predicted_alpha,
    solve_top_spectrum,
    spectral_grid,
    spectral_gap_check,
    a0_grid,
)

NU_VALUES = (1e-2, 1e-3, 1e-4)
BETA = 0.5


@dataclass
class CheckResult:
    item: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    seconds: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        extra = "; ".join(self.failures)
        return f"[{mark}] {self.item:2d} {self.name} ({self.seconds:.1f} s)" + (f": {extra}" if extra else "")


def _result(item, name, checks, details, start):
    failures = [label for label, ok in checks if not ok]
    return CheckResult(item, name, not failures, details, failures, time.perf_counter() - start)


_SPECTRA: dict = {}


def _spectrum(nu):
    if nu not in _SPECTRA:
        t0 = time.perf_counter()
        rep = compute_spectrum(nu, BETA, 4)
        _SPECTRA[nu] = (rep, time.perf_counter() - t0)
    return _SPECTRA[nu]


def check_eigenvalue_law() -> CheckResult:
    start = time.perf_counter()
    checks, details = [], {}
    for nu in NU_VALUES:
        rep, secs = _spectrum(nu)
        L = math.log(nu)
        scaled = [abs(a / (2 * BETA) - (1 - n + 1 / (2 * L))) * L * L for n, a in enumerate(rep.alphas)]
        details[nu] = dict(alphas=list(rep.alphas), scaled=scaled, seconds=secs)
        checks.append((f"nu={nu:g} max scaled residual {max(scaled):.3f} > 5", max(scaled) <= 5.0))
        checks.append((f"nu={nu:g} took {secs:.1f} s > 60", secs <= 60.0))
    return _result(1, "eigenvalue law", checks, details, start)


def check_refined_correction() -> CheckResult:
    start = time.perf_counter()
    checks, details = [], {}
    lead = {0: [], 1: []}
    for nu in NU_VALUES:
        rep, _ = _spectrum(nu)
        L3 = abs(math.log(nu)) ** 3
        for n in (0, 1):
            a = rep.alphas[n]
            ref = abs(a - predicted_alpha(n, nu, BETA, refined=True)) / (2 * BETA) * L3
            led = abs(a - predicted_alpha(n, nu, BETA)) / (2 * BETA) * L3
            lead[n].append(led)
            details[(nu, n)] = dict(refined_times_L3=ref, leading_times_L3=led)
            checks.append((f"nu={nu:g} n={n} refined residual*L^3 = {ref:.2f} > 30", ref <= 30.0))
    for n in (0, 1):
        grows = all(b > a for a, b in zip(lead[n], lead[n][1:]))
        checks.append((f"n={n} leading residual*L^3 not increasing {np.round(lead[n], 2)}", grows))
    spot = _spectrum(1e-3)[0].alphas[0]
    details["spot_alpha0"] = spot
    checks.append((f"alpha0(1e-3) = {spot:.6f} outside 0.93185 +- 3e-3", abs(spot - 0.93185) <= 3e-3))
    return _result(2, "refined correction", checks, details, start)


def check_eigenfunction_norms() -> CheckResult:
    start = time.perf_counter()
    rep, _ = _spectrum(1e-4)
    L = abs(math.log(1e-4))
    n0 = 8.0 * rep.norms[0] / L
    n1 = 4.0 * rep.norms[1] / L ** 2
    checks = [(f"8|phi0|^2/L = {n0:.4f} outside [0.8, 1.2]", 0.8 <= n0 <= 1.2),
              (f"4|phi1|^2/L^2 = {n1:.4f} outside [0.7, 1.3]", 0.7 <= n1 <= 1.3)]
    return _result(3, "eigenfunction norms", checks, dict(phi0=n0, phi1=n1), start)


def check_spectral_gap(nu: float = 1e-3, seed: int = 0) -> CheckResult:
    start = time.perf_counter()
    checks, details = [], {}
    L = abs(math.log(nu))
    nut = nu * (1.0 + 1.0 / L)
    grid = spectral_grid(nu, BETA)
    for kind, kw in (("Azeta", {}), ("Abar", dict(nutilde=nut))):
        form = assemble_operator(kind, grid, nu=nu, beta=BETA, **kw)
        pairs = solve_top_spectrum(form, 5)
        worst = spectral_gap_check(form, pairs[:4], trials=100, seed=seed)
        excess = worst - pairs[4].alpha
        details[kind] = dict(worst=worst, alpha4=pairs[4].alpha, excess=excess)
        checks.append((f"{kind}: max Rayleigh quotient exceeds alpha4 by {excess:.2e}", excess <= 1e-6))
    stab = eigen_stability_check(nu, nut, BETA)
    details["stability"] = list(stab)
    checks.append((f"|alpha_bar - alpha| L^2 = {stab.max():.2f} > 50", float(stab.max()) <= 50.0))
    return _result(4, "spectral gap", checks, details, start)


def check_coercivity() -> CheckResult:
    start = time.perf_counter()
    vals = {}
    for ppd in (32, 64):
        grid = a0_grid(4000.0, ppd)
        vals[ppd] = {k: coercivity_check(k, grid, M=20) for k in ("delta0", "delta1", "hardy")}
    checks = []
    d0, d1, hd = vals[32]["delta0"], vals[32]["delta1"], vals[32]["hardy"]
    checks.append((f"delta0 = {d0:.4g} <= 0.01", d0 > 0.01))
    checks.append((f"delta1 = {d1:.3g} <= 0", d1 > 0.0))
    checks.append((f"hardy = {hd:.4g} < 0.2", hd >= 0.2))
    for key in ("delta0", "delta1", "hardy"):
        a, b = vals[32][key], vals[64][key]
        rel = abs(a - b) / abs(b)
        checks.append((f"{key} changes by {rel:.1%} under grid doubling", rel <= 0.10))
    return _result(5, "coercivity", checks, vals, start)


def check_stable_law() -> CheckResult:
    start = time.perf_counter()
    traj = mod.integrate(mod.initial_state("stable", tau0=10.0, beta0=BETA), "stable", 1e5)
    law = mod.to_physical(traj)
    secs = time.perf_counter() - start
    pref = float(traj.prefactor()[-1])
    sel = np.abs(law.log_T_minus_t) >= 100.0
    ratio = law.lambda_over_law()[sel]
    dev = float(np.max(np.abs(ratio - 1.0)))
    compat = float(np.max(np.abs(mod.compatibility_residual(traj))))
    checks = [(f"prefactor {pref:.5f} outside [0.540, 0.562]", 0.540 <= pref <= 0.562),
              (f"lambda/law deviates by {dev:.3f} > 0.10", dev <= 0.10),
              (f"compatibility residual {compat:.2e} > 1e-12", compat <= 1e-12),
              (f"runtime {secs:.1f} s > 10", secs <= 10.0)]
    return _result(6, "stable modulation law", checks,
                   dict(prefactor=pref, max_deviation=dev, compat=compat, seconds=secs), start)


def unstable_fit(ell: int, tau_end: float = 1e4, window=(100.0, 1e4)):
    mode = f"unstable({ell})"
    traj = mod.integrate(mod.initial_state(mode, tau0=10.0, beta0=BETA, N=ell), mode, tau_end,
                         samples_per_decade=100)
    return mod.fit_power_law(mod.to_physical(traj), window=window)


def check_unstable_laws() -> CheckResult:
    start = time.perf_counter()
    checks, details = [], {}
    for ell in (2, 3, 4):
        t0 = time.perf_counter()
        fit = unstable_fit(ell)
        secs = time.perf_counter() - t0
        p_t, q_t = ell / 2.0, -ell / (2.0 * (ell - 1))
        details[ell] = dict(p=fit.p, q=fit.q, seconds=secs)
        checks.append((f"ell={ell}: p = {fit.p:.4f} vs {p_t}", abs(fit.p - p_t) <= 0.05))
        checks.append((f"ell={ell}: q = {fit.q:.4f} vs {q_t:.4f}", abs(fit.q - q_t) <= 0.15))
        checks.append((f"ell={ell}: runtime {secs:.1f} s > 10", secs <= 10.0))
    return _result(7, "unstable laws", checks, details, start)


def check_overlaps() -> CheckResult:
    start = time.perf_counter()
    tab = overlap_table(1e-4, BETA)
    targets = (("nu_dnu_phi0", 1 / 8, 0.15), ("nu_dnu_phi1_over_ln", -1 / 4, 0.20),
               ("beta_dbeta_phi1_over_ln2", 1 / 4, 0.20))
    checks = [(f"{k} = {tab[k]:.4f} vs {v:g}", abs(tab[k] - v) <= tol * abs(v)) for k, v, tol in targets]
    return _result(8, "overlap constants", checks, tab, start)


_RUNS: dict = {}


def blowup_run(project: bool = True) -> pde.RunResult:
    if "super" not in _RUNS:
        _RUNS["super"] = pde.run(pde.RunConfig(mass_factor=1.1), project=project)
    return _RUNS["super"]


def check_pde() -> CheckResult:
    start = time.perf_counter()
    checks, details = [], {}
    # steady state at the reference resolution
    ref = pde.run(pde.RunConfig(mass_factor=1.0, points_per_decade=256, t_max=1.0, sample_dt=1.0),
                  project=False)
    grid = ref.final.grid
    q0 = pde.make_initial("scaled_Q", grid, 1.0, 1.0)
    drift = float(np.max(np.abs(ref.final.m - q0.m)))
    details["Q_drift"] = drift
    checks.append((f"Q drift {drift:.2e} > 1e-4", drift <= 1e-4))
    sup = blowup_run()
    s = sup.series
    mass = abs(sup.final.m[-1] - 4.4)
    details["mass_error"] = mass
    checks.append((f"mass error {mass:.2e} > 1e-10", mass <= 1e-10))
    checks.append((f"stop label {s.status}", s.status == "blowup-resolved"))
    checks.append((f"u0 reached {s.u0[-1]:.3g} < 1e10", s.u0[-1] >= 1e10))
    lam = s.lam
    decades = math.log10(lam[0] / lam[-1])
    mono = bool(np.all(np.diff(lam) <= 1e-12 * lam[:-1]))
    details.update(lambda_decades=decades, final_profile_err=float(s.profile_err[-1]), T_est=s.T_est)
    checks.append((f"lambda spans {decades:.2f} decades", decades >= 3.0))
    checks.append(("lambda not monotonically decreasing", mono))
    checks.append((f"final profile error {s.profile_err[-1]:.3f} > 0.05", s.profile_err[-1] <= 0.05))
    tmt = s.T_minus_t()
    sel = (tmt > 0) & (tmt <= tmt[-1] * 100.0)
    ratio = lam[sel] ** 2 / tmt[sel]
    dec = bool(np.all(np.diff(ratio) < 0.0))
    details["ratio_last_two_decades"] = (float(ratio[0]), float(ratio[-1]))
    checks.append(("lambda^2/(T_est - t) not decreasing over the last 2 decades", dec))
    sub = pde.run(pde.RunConfig(mass_factor=0.9, t_max=10.0), project=False)
    bounded = sub.series.status == "subcritical" and sub.series.u0.max() <= sub.series.u0[0] * (1 + 1e-9)
    details["subcritical_u0_max"] = float(sub.series.u0.max())
    checks.append(("subcritical control run not bounded", bounded))
    secs = time.perf_counter() - start
    checks.append((f"runtime {secs:.0f} s > 300", secs <= 300.0))
    return _result(9, "PDE solver", checks, details, start)


def check_cross_module() -> CheckResult:
    start = time.perf_counter()
    checks, details = [], {}
    nu_s = 0.1
    grid = pde.pde_grid(1e-6, 1e3, 64, nu_s)
    z = grid.nodes
    basis = pde.eigen_basis(3)
    m = pde.eval_profile("Q", z, nu=nu_s) + 0.01 * basis.phi(2, z, nu_s, BETA)
    fld = pde.PartialMassField(grid, m, 0.0, float(m[-1]))
    p = pde.project_remainder(fld, BETA, 3, mu=1.0)
    details["synthetic"] = dict(nu=p.nu, a=p.a)
    checks.append((f"synthetic nu error {abs(p.nu - nu_s):.1e}", abs(p.nu - nu_s) <= 1e-4))
    checks.append((f"synthetic a2 error {abs(p.a[1] - 0.01):.1e}", abs(p.a[1] - 0.01) <= 1e-4))
    others = max(abs(p.a[0]), abs(p.a[2]))
    checks.append((f"synthetic other a_n {others:.1e}", others <= 1e-4))
    # leading-order eigenfunctions carry O(nu^2) errors of the same size as
    # m_eps, so the trend is read from the numerically exact basis only
    projs = [q for q in blowup_run().projections if q.basis == "spectral"]
    ratios = np.array([q.me_norm / q.nu ** 2 for q in projs])
    slope = float(np.polyfit(np.arange(ratios.size), np.log(ratios), 1)[0]) if ratios.size >= 3 else float("nan")
    details["live_ratio"] = list(ratios)
    checks.append((f"|m_eps|/nu^2 trend slope {slope:+.3f} per snapshot is not downward "
                   f"({ratios[0]:.4f} -> {ratios[-1]:.4f})", slope < 0.0))
    return _result(10, "cross-module oracle", checks, details, start)


CHECKS = {
    1: check_eigenvalue_law,
    2: check_refined_correction,
    3: check_eigenfunction_norms,
    4: check_spectral_gap,
    5: check_coercivity,
    6: check_stable_law,
    7: check_unstable_laws,
    8: check_overlaps,
    9: check_pde,
    10: check_cross_module,
}


def run_suite(items=None) -> list:
    items = sorted(CHECKS) if items is None else list(items)
    return [CHECKS[i]() for i in items]
