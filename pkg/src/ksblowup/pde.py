"""Adaptive solver for the radial partial-mass Keller-Segel equation.

In physical variables the partial mass m(r, t) = (1/2pi) int_{|x|<=r} u obeys

    m_t = m_rr - m_r/r + m m_r/r,

which in s = ln r reads m_t = r^-2 (m_ss - 2 m_s + m m_s).  The linear part is
advanced implicitly (tridiagonal solve), the quadratic flux explicitly.  The
grid is rebuilt around the collapsing core as the scale shrinks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.optimize import brentq, minimize_scalar

from ._jit import njit
from .errors import (
    ConfigurationError,
    NotConcentratedError,
    ParameterError,
    ProjectionError,
    ResolutionError,
    StepRejectedError,
)
from .specialfun import RadialGrid, build_Tj_table, c_coefficient, eval_profile, make_grid
from .spectral import assemble_operator, sl_weight, solve_top_spectrum, spectral_grid

PRESETS = ("scaled_Q", "Q_plus_bump")
STOP_LABELS = ("blowup-resolved", "horizon", "subcritical")


@dataclass(frozen=True, eq=False)
class PartialMassField:
    grid: RadialGrid
    m: np.ndarray
    t: float
    total: float

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != self.grid.nodes.shape:
            raise ParameterError("m does not match the grid")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes


def pde_grid(r_min: float = 1e-4, r_max: float = 1e3, points_per_decade: float = 64,
             cluster_scale: float = 1.0) -> RadialGrid:
    """Log-graded grid with extra density around the core scale."""
    return make_grid(r_min, r_max, points_per_decade, cluster_scale, anchor=None)


def _check_resolved(grid: RadialGrid, lam: float) -> None:
    r = grid.nodes
    if grid.r_min > lam / 100.0:
        raise ResolutionError(f"first node {grid.r_min:.3g} does not resolve lambda = {lam:.3g}")
    inside = np.count_nonzero((r >= lam / 10.0) & (r <= 10.0 * lam))
    if inside < 16:
        raise ResolutionError(f"only {inside} nodes in [lambda/10, 10 lambda]")


def make_initial(preset: str, grid: RadialGrid, lambda0: float = 1.0, mass_factor: float = 1.0,
                 amp: float = 0.1, width: float = 1.0) -> PartialMassField:
    """Initial partial mass on ``grid``.

    scaled_Q: m0 = 4 mass_factor r^2/(r^2 + lambda0^2).
    Q_plus_bump: Q_lambda0 plus the partial mass amp (1 - exp(-r^2/width^2))
    of a centred Gaussian density.  The outer node is pinned to the limit
    value, which is the conserved total.
    """
    if preset not in PRESETS:
        raise ParameterError(f"unknown preset {preset!r}")
    if not lambda0 > 0.0:
        raise ParameterError("lambda0 must be > 0")
    _check_resolved(grid, lambda0)
    r = grid.nodes
    if preset == "scaled_Q":
        if not mass_factor > 0.0:
            raise ParameterError("mass_factor must be > 0")
        total = 4.0 * mass_factor
        m = total * r ** 2 / (r ** 2 + lambda0 ** 2)
    else:
        if not width > 0.0 or amp < 0.0:
            raise ParameterError("need width > 0 and amp >= 0")
        total = 4.0 + amp
        m = 4.0 * r ** 2 / (r ** 2 + lambda0 ** 2) - amp * np.expm1(-(r / width) ** 2)
    m[-1] = total
    return PartialMassField(grid, m, 0.0, total)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _central_u0(m, r):
    return (2.0 * m[0] / (r[0] * r[0]) + 2.0 * m[1] / (r[1] * r[1]) + 2.0 * m[2] / (r[2] * r[2])) / 3.0


@njit(cache=True)
def _cfl_dt(m, s, r, cfl):
    # explicit flux m m_s / r^2 moves information at speed m/r^2 in s
    dt = np.inf
    for i in range(1, m.size - 1):
        h = min(s[i] - s[i - 1], s[i + 1] - s[i])
        v = abs(m[i]) / (r[i] * r[i])
        if v > 0.0 and cfl * h / v < dt:
            dt = cfl * h / v
    return dt


@njit(cache=True)
def _imex_step(m, s, r, total, dt, nonlinear, a, b, c, d, cp, dp):
    n = m.size
    for i in range(1, n - 1):
        h0 = s[i] - s[i - 1]
        h1 = s[i + 1] - s[i]
        w2m = 2.0 / (h0 * (h0 + h1))
        w2p = 2.0 / (h1 * (h0 + h1))
        w20 = -2.0 / (h0 * h1)
        w1m = -h1 / (h0 * (h0 + h1))
        w1p = h0 / (h1 * (h0 + h1))
        w10 = (h1 - h0) / (h0 * h1)
        k = dt / (r[i] * r[i])
        a[i] = -k * (w2m - 2.0 * w1m)
        b[i] = 1.0 - k * (w20 - 2.0 * w10)
        c[i] = -k * (w2p - 2.0 * w1p)
        d[i] = m[i]
        if nonlinear:
            d[i] += k * m[i] * (w1m * m[i - 1] + w10 * m[i] + w1p * m[i + 1])
    # inner closure m = u0 r^2/2 with u0 taken at the next node
    a[0] = 0.0
    b[0] = 1.0
    c[0] = -(r[0] / r[1]) ** 2
    d[0] = 0.0
    a[n - 1] = 0.0
    b[n - 1] = 1.0
    c[n - 1] = 0.0
    d[n - 1] = total
    cp[0] = c[0] / b[0]
    dp[0] = d[0] / b[0]
    for i in range(1, n):
        den = b[i] - a[i] * cp[i - 1]
        cp[i] = c[i] / den
        dp[i] = (d[i] - a[i] * dp[i - 1]) / den
    m[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        m[i] = dp[i] - cp[i] * m[i + 1]


@njit(cache=True)
def _advance(m, s, r, total, t, t_stop, u0_lo, u0_hi, cfl, dt_factor, max_steps):
    # step until u0 leaves (u0_lo, u0_hi), t reaches t_stop or max_steps
    n = m.size
    a = np.empty(n)
    b = np.empty(n)
    c = np.empty(n)
    d = np.empty(n)
    cp = np.empty(n)
    dp = np.empty(n)
    steps = 0
    while steps < max_steps and t < t_stop:
        u0 = _central_u0(m, r)
        if u0 >= u0_hi or u0 <= u0_lo:
            break
        dt = min(dt_factor / u0, _cfl_dt(m, s, r, cfl))
        if t + dt > t_stop:
            dt = t_stop - t
        _imex_step(m, s, r, total, dt, True, a, b, c, d, cp, dp)
        t += dt
        steps += 1
    return t, steps


def stable_dt(fld: PartialMassField, cfl: float = 0.5) -> float:
    """Largest dt allowed by the explicit flux."""
    r = fld.r
    return float(_cfl_dt(np.asarray(fld.m), np.log(r), r, cfl))


def step(fld: PartialMassField, dt: float, nonlinear: bool = True, cfl: float = 1.0) -> PartialMassField:
    """One IMEX Euler step; the quadratic flux can be switched off."""
    if not dt > 0.0:
        raise ParameterError("dt must be > 0")
    if nonlinear and dt > stable_dt(fld, cfl):
        raise StepRejectedError(f"dt = {dt:.3g} exceeds the stability bound {stable_dt(fld, cfl):.3g}")
    r = fld.r
    m = np.array(fld.m)
    n = m.size
    work = [np.empty(n) for _ in range(6)]
    _imex_step(m, np.log(r), r, fld.total, dt, nonlinear, *work)
    return PartialMassField(fld.grid, m, fld.t + dt, fld.total)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def central_density(fld: PartialMassField) -> float:
    return float(_central_u0(np.asarray(fld.m), fld.r))


def extract_scale(fld: PartialMassField) -> tuple:
    """(lambda, u0): first crossing of m = 2 and the central density."""
    m, r = fld.m, fld.r
    u0 = central_density(fld)
    above = np.nonzero(m >= 2.0)[0]
    if above.size == 0 or above[0] == 0:
        raise NotConcentratedError("partial mass never reaches 2 in the interior")
    k = above[0]
    lam = r[k - 1] + (2.0 - m[k - 1]) * (r[k] - r[k - 1]) / (m[k] - m[k - 1])
    return float(lam), u0


def profile_error(fld: PartialMassField, lam: float, y_max: float = 10.0) -> float:
    """sup over 0 < y <= y_max of |m(lambda y)/Q(y) - 1| at the nodes."""
    r = fld.r
    sel = r <= y_max * lam
    y = r[sel] / lam
    return float(np.max(np.abs(fld.m[sel] / eval_profile("Q", y) - 1.0)))


# ---------------------------------------------------------------------------
# regridding
# ---------------------------------------------------------------------------

def _interpolate(r_old, m_old, r_new):
    # quintic spline of ln m in ln r, clipped to the bracketing samples
    s_old, s_new = np.log(r_old), np.log(r_new)
    positive = np.all(m_old > 0.0)
    vals = np.log(m_old) if positive else m_old
    spline = make_interp_spline(s_old, vals, k=5)
    inside = (r_new >= r_old[0]) & (r_new <= r_old[-1])
    out = np.empty_like(r_new)
    raw = spline(s_new[inside])
    out[inside] = np.exp(raw) if positive else raw
    below = r_new < r_old[0]
    out[below] = m_old[0] * (r_new[below] / r_old[0]) ** 2
    k = np.clip(np.searchsorted(r_old, r_new[inside]), 1, r_old.size - 1)
    lo = np.minimum(m_old[k - 1], m_old[k])
    hi = np.maximum(m_old[k - 1], m_old[k])
    out[inside] = np.clip(out[inside], lo, hi)
    # nodes shared with the old grid keep their values
    j = np.clip(np.searchsorted(r_old, r_new), 0, r_old.size - 1)
    same = np.abs(r_old[j] - r_new) <= 1e-14 * r_new
    out[same] = m_old[j[same]]
    return out


def regrid(fld: PartialMassField, grid: RadialGrid) -> PartialMassField:
    """Transfer the field to ``grid`` (same outer radius)."""
    if abs(grid.r_max - fld.grid.r_max) > 1e-12 * grid.r_max:
        raise ParameterError("regridding must keep the outer radius")
    m = _interpolate(fld.r, np.asarray(fld.m), grid.nodes)
    m[-1] = fld.total
    return PartialMassField(grid, m, fld.t, fld.total)


@dataclass(frozen=True)
class AdaptThresholds:
    spacing_factor: float = 20.0    # regrid when lambda < factor * local spacing
    cluster_ratio: float = 2.0      # ... or lambda < ratio * cluster scale
    inner_ratio: float = 1e-3       # new r_min = inner_ratio * lambda
    r_floor: float = 1e-12
    points_per_decade: float = 64


class BlowupResolved(Exception):
    """Internal signal: the core scale reached the grid floor."""


def adapt(fld: PartialMassField, lam: float, th: AdaptThresholds = AdaptThresholds(),
          force: bool = False) -> PartialMassField:
    """Rebuild the grid around lambda/4 when the core outgrows the current one."""
    g = fld.grid
    if lam < 100.0 * th.r_floor:
        raise BlowupResolved(f"lambda = {lam:.3g} reached the grid floor")
    trigger = (lam < th.spacing_factor * g.spacing_at(lam)
               or lam < th.cluster_ratio * g.cluster_scale
               or lam < 1e3 * g.r_min)
    if not (trigger or force):
        return fld
    r_min = max(th.inner_ratio * lam, th.r_floor)
    r_min = min(r_min, g.r_min)
    new = make_grid(r_min, g.r_max, th.points_per_decade, lam / 4.0, anchor=None)
    return regrid(fld, new)


# ---------------------------------------------------------------------------
# remainder projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RemainderProjection:
    t: float
    mu: float
    nu: float
    a: tuple
    me_norm: float
    orthogonality: float
    basis: str = "leading"


class _EigenBasis:
    """Leading-order phi_{n,nu} = sum_j c_{n,j} beta^j nu^(2j-2) T_j(z/nu), tabulated once."""

    def __init__(self, N: int, r_min: float = 1e-8, r_max: float = 1e8, ppd: float = 48):
        grid = make_grid(r_min, r_max, ppd, 1.0)
        table = build_Tj_table(N, grid)
        self.N = N
        self.s = np.log(grid.nodes)
        self.r0 = grid.r_min
        self.T0 = table.T[:, 0].copy()
        self.splines = [make_interp_spline(self.s, table.T[j], k=5) for j in range(N + 1)]
        self.r_max = r_max

    def T(self, j: int, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x > self.r_max):
            raise ConfigurationError("T_j table too short for this grid")
        out = np.empty_like(x)
        small = x < self.r0
        out[small] = self.T0[j] * (x[small] / self.r0) ** 2
        out[~small] = self.splines[j](np.log(x[~small]))
        return out

    def phi(self, n: int, z: np.ndarray, nu: float, beta: float) -> np.ndarray:
        x = z / nu
        out = np.zeros_like(z)
        for j in range(n + 1):
            out += c_coefficient(n, j) * beta ** j * nu ** (2 * j - 2) * self.T(j, x)
        return out


class _SpectralBasis:
    """Numerical eigenfunctions of A^zeta from the spectral solver, cached per nu.

    Vectors carry the solver's normalization (nu^-2 T0(z/nu) at the origin),
    the same as the leading-order basis, and are splined in ln z.
    """

    def __init__(self, N: int, beta: float, points_per_decade: float = 64, cache: int = 128):
        self.N = N
        self.beta = beta
        self.ppd = points_per_decade
        self.cache: dict = {}
        self.limit = cache

    def _splines(self, nu: float):
        key = float(nu)
        if key not in self.cache:
            if len(self.cache) >= self.limit:
                self.cache.pop(next(iter(self.cache)))
            grid = spectral_grid(nu, self.beta, self.ppd)
            form = assemble_operator("Azeta", grid, nu=nu, beta=self.beta)
            pairs = solve_top_spectrum(form, self.N + 1)
            k = pairs[0].first
            s = np.log(grid.nodes[k:])
            self.cache[key] = (grid.nodes[k], grid.r_max, s,
                               [make_interp_spline(s, p.vector[k:], k=3) for p in pairs],
                               [p.vector[k] for p in pairs])
        return self.cache[key]

    def phi(self, n: int, z: np.ndarray, nu: float, beta: float) -> np.ndarray:
        if beta != self.beta:
            raise ParameterError("basis was built for another beta")
        z0, z1, _, splines, first = self._splines(nu)
        out = np.zeros_like(z)
        small = z < z0
        out[small] = first[n] * (z[small] / z0) ** 2
        inside = ~small & (z <= z1)
        out[inside] = splines[n](np.log(z[inside]))
        return out


_BASES: dict = {}


def eigen_basis(N: int, kind: str = "leading", beta: float = 0.5):
    """Leading-order (tabulated T_j) or numerical ("spectral") eigenfunctions."""
    if kind not in ("leading", "spectral"):
        raise ParameterError(f"unknown basis {kind!r}")
    key = (N, kind, beta if kind == "spectral" else None)
    if key not in _BASES:
        _BASES[key] = _EigenBasis(N) if kind == "leading" else _SpectralBasis(N, beta)
    return _BASES[key]


def _projection_parts(z, grid, mw, nu, beta, N, basis):
    w = sl_weight(z, nu, nu, beta)
    phis = np.array([basis.phi(n, z, nu, beta) for n in range(N + 1)])

    def ip(f, g):
        return grid.integrate(f * g * w, inner_power=3.0)

    D = mw - eval_profile("Q", z, nu=nu)
    G = np.array([[ip(phis[i], phis[j]) for j in range(N + 1)] for i in range(N + 1)])
    rhs = np.array([ip(D, phis[i]) for i in range(N + 1)])
    coef = np.linalg.solve(G, rhs)
    return coef, phis, D, ip


def _root_near(F, trial, centre):
    # keep the sign change of F on ``trial`` closest to ``centre``
    vals = np.array([F(x) for x in trial])
    if not np.all(np.isfinite(vals)):
        raise ProjectionError("orthogonality functional is not finite on the bracket")
    flips = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0.0)[0]
    if flips.size == 0:
        raise ProjectionError(f"no sign change of the orthogonality functional in "
                              f"[{trial[0]:.3g}, {trial[-1]:.3g}]")
    mid = np.sqrt(trial[flips] * trial[flips + 1])
    k = flips[np.argmin(np.abs(np.log(mid / centre)))]
    if vals[k] == 0.0:
        return float(trial[k])
    if vals[k + 1] == 0.0:
        return float(trial[k + 1])
    return brentq(F, trial[k], trial[k + 1], xtol=1e-15 * centre, rtol=1e-15, maxiter=200)


def project_remainder(fld: PartialMassField, beta: float = 0.5, N: int = 3,
                      T_est: Optional[float] = None, mu: Optional[float] = None,
                      z_cut: Optional[float] = None, basis: str = "leading") -> RemainderProjection:
    """Split m_w = Q_nu + a1 (phi1 - phi0) + sum_{n>=2} a_n phi_n + m_eps.

    The field is mapped to z = r/mu with mu = sqrt(2 beta (T_est - t)) unless
    ``mu`` is given.  For each trial nu the coefficients of m_w - Q_nu on
    span{phi_0..phi_N} come from a Gram solve; nu is the root of
    c_0 + c_1 = 0 (coefficient of phi_0 equal to -a1) in [lambda/4, 4 lambda].
    ``basis="spectral"`` swaps the leading-order eigenfunctions for the
    numerical ones (nu <= 0.1), refining the leading-order root; "auto" does
    so only when the leading-order nu is inside that range.
    """
    if basis not in ("leading", "spectral", "auto"):
        raise ParameterError(f"unknown basis {basis!r}")
    if N < 1:
        raise ParameterError("N must be >= 1")
    if mu is None:
        if T_est is None or not T_est > fld.t:
            raise ParameterError("need mu or T_est > t")
        mu = math.sqrt(2.0 * beta * (T_est - fld.t))
    lam, _ = extract_scale(fld)
    if z_cut is None:
        z_cut = math.sqrt(2.0 * 60.0 / beta)
    keep = fld.r / mu <= z_cut
    if np.count_nonzero(keep) < 16:
        raise ConfigurationError("too few nodes inside the weighted window")
    nodes = fld.r[keep] / mu
    sub = RadialGrid(nodes, fld.grid.kind, fld.grid.cluster_scale / mu,
                     fld.grid.jacobian[keep] / mu)
    mw = np.asarray(fld.m)[keep]
    nu_c = lam / mu

    def solve(bas, trial, centre):
        def F(nu):
            coef, *_ = _projection_parts(nodes, sub, mw, nu, beta, N, bas)
            return coef[0] + coef[1]
        return _root_near(F, trial, centre)

    lead = eigen_basis(N)
    nu = solve(lead, np.geomspace(nu_c / 4.0, 4.0 * nu_c, 25), nu_c)
    bas, used = lead, "leading"
    hi = min(1.25 * nu, 0.1)
    if basis == "spectral" and not hi > 0.8 * nu:
        raise ProjectionError(f"nu = {nu:.3g} is outside the spectral range")
    if basis != "leading" and hi > 0.8 * nu:
        bas, used = eigen_basis(N, "spectral", beta), "spectral"
        nu = solve(bas, np.geomspace(0.8 * nu, hi, 9), nu)
    coef, phis, D, ip = _projection_parts(nodes, sub, mw, nu, beta, N, bas)
    me = D - coef @ phis
    norm = math.sqrt(max(ip(me, me), 0.0))
    n0 = math.sqrt(ip(phis[0], phis[0]))
    orth = abs(ip(me, phis[0])) / (norm * n0) if norm > 0.0 else 0.0
    a = (float(coef[1]),) + tuple(float(c) for c in coef[2:])
    return RemainderProjection(fld.t, float(mu), float(nu), a, norm, float(orth), used)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    preset: str = "scaled_Q"
    lambda0: float = 1.0
    mass_factor: float = 1.1
    amp: float = 0.1
    width: float = 1.0
    points_per_decade: float = 64
    r_min: float = 1e-4
    r_max: float = 1e3
    r_floor: float = 1e-12
    u0_cap: float = 1e10
    t_max: float = 10.0
    cfl: float = 0.5
    dt_factor: float = 0.1
    sample_growth: float = 0.02
    sample_dt: float = 0.01
    snapshot_factor: float = 10.0
    beta: float = 0.5
    n_modes: int = 3
    basis: str = "auto"
    max_steps: int = 50_000_000

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ParameterError(f"unknown preset {self.preset!r}")
        for name in ("lambda0", "points_per_decade", "r_min", "r_max", "u0_cap", "t_max",
                     "cfl", "dt_factor", "sample_growth", "sample_dt", "beta"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0")
        if self.basis not in ("leading", "spectral", "auto"):
            raise ParameterError(f"unknown basis {self.basis!r}")
        if self.snapshot_factor <= 1.0:
            raise ParameterError("snapshot_factor must be > 1")

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, val in values.items():
            if key not in known:
                raise ParameterError(f"unknown key {key!r}")
            kind = type(getattr(cls(), key))
            kwargs[key] = kind(val) if kind is not str else str(val)
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"expected key = value, got {raw!r}")
            key, val = (p.strip() for p in line.split("=", 1))
            values[key] = val
        return cls.from_mapping(values)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n".replace("'", "") for f in fields(self))


@dataclass(frozen=True, eq=False)
class ScaleSeries:
    t: np.ndarray
    u0: np.ndarray
    lam: np.ndarray
    profile_err: np.ndarray
    status: str
    T_est: float
    eta: float

    @property
    def blowup_flag(self) -> bool:
        return self.status == "blowup-resolved"

    def T_minus_t(self) -> np.ndarray:
        return self.T_est - self.t

    def to_csv(self, path) -> Path:
        path = Path(path)
        tmt = self.T_minus_t()
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = self.lam ** 2 / tmt
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "u0", "lambda", "T_est_minus_t", "lambda_sq_over_Tmt", "profile_err"])
            for row in zip(self.t, self.u0, self.lam, tmt, ratio, self.profile_err):
                writer.writerow([f"{float(v):.17g}" for v in row])
        return path


@dataclass(frozen=True)
class Snapshot:
    t: float
    u0: float
    r: np.ndarray
    m: np.ndarray
    field: PartialMassField

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["r", "m"])
            for a, b in zip(self.r, self.m):
                writer.writerow([f"{float(a):.17g}", f"{float(b):.17g}"])
        return path


@dataclass(frozen=True, eq=False)
class RunResult:
    config: RunConfig
    series: ScaleSeries
    snapshots: list
    projections: list
    final: PartialMassField
    steps: int


def estimate_blowup_time(t: np.ndarray, u0: np.ndarray, decades: float = 2.0) -> tuple:
    """Fit 1/u0 = A (T - t)^p over the last ``decades`` of u0 growth.

    For each trial T the fit is linear in (ln A, p); T minimizes the residual.
    Returns (T_est, eta) with T_est = t_end + eta*4/u0_end.  This is a
    heuristic tail: for type II collapse eta is large and slowly growing,
    not a fixed O(1) constant.
    """
    t = np.asarray(t, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    sel = u0 >= u0[-1] / 10.0 ** decades
    if np.count_nonzero(sel) < 8:
        raise ConfigurationError("too few samples near the end of the run")
    tt, y = t[sel], -np.log(u0[sel])
    te = tt[-1]
    span = te - tt[0]
    if not span > 0.0:
        raise ConfigurationError("samples do not advance in time")

    def resid(x):
        design = np.column_stack([np.ones_like(tt), np.log(np.exp(x) + (te - tt))])
        coef = np.linalg.lstsq(design, y, rcond=None)[0]
        return float(np.sum((design @ coef - y) ** 2))

    xs = np.linspace(math.log(span * 1e-10), math.log(span * 10.0), 600)
    vals = [resid(x) for x in xs]
    k = int(np.argmin(vals))
    lo, hi = xs[max(k - 1, 0)], xs[min(k + 1, xs.size - 1)]
    x = minimize_scalar(resid, bounds=(lo, hi), method="bounded",
                        options={"xatol": 1e-10}).x
    dT = math.exp(x)
    return float(te + dT), float(dT * u0[-1] / 4.0)


def run(config: RunConfig = RunConfig(), project: bool = True) -> RunResult:
    """Time-step until u0 reaches the cap, the core hits the grid floor or t_max."""
    cfg = config
    grid = pde_grid(cfg.r_min, cfg.r_max, cfg.points_per_decade, cfg.lambda0)
    fld = make_initial(cfg.preset, grid, cfg.lambda0, cfg.mass_factor, cfg.amp, cfg.width)
    th = AdaptThresholds(r_floor=cfg.r_floor, points_per_decade=cfg.points_per_decade)
    m = np.array(fld.m)
    t = 0.0
    ts, us, lams, errs = [], [], [], []
    snaps = []
    next_snap = central_density(fld) * cfg.snapshot_factor
    status = None
    steps = 0

    def record(f):
        u0 = central_density(f)
        try:
            lam, _ = extract_scale(f)
            err = profile_error(f, lam)
        except NotConcentratedError:
            lam, err = float("nan"), float("nan")
        ts.append(f.t)
        us.append(u0)
        lams.append(lam)
        errs.append(err)
        return u0, lam

    u0, lam = record(fld)
    while True:
        r = fld.r
        s = np.log(r)
        grow = math.exp(cfg.sample_growth)
        t_stop = min(cfg.t_max, t + cfg.sample_dt)
        t, k = _advance(m, s, r, fld.total, t, t_stop, u0 / grow, min(u0 * grow, cfg.u0_cap),
                        cfg.cfl, cfg.dt_factor, cfg.max_steps - steps)
        steps += k
        fld = PartialMassField(fld.grid, m, t, fld.total)
        u0, lam = record(fld)
        if u0 >= next_snap:
            snaps.append(Snapshot(t, u0, fld.r.copy(), np.array(m), fld))
            while next_snap <= u0:
                next_snap *= cfg.snapshot_factor
        if u0 >= cfg.u0_cap:
            status = "blowup-resolved"
            break
        if t >= cfg.t_max or steps >= cfg.max_steps:
            status = "horizon" if fld.total > 4.0 else "subcritical"
            break
        if np.isfinite(lam):
            try:
                new = adapt(fld, lam, th)
            except BlowupResolved:
                status = "blowup-resolved"
                break
            if new is not fld:
                fld = new
                m = np.array(fld.m)

    t_arr, u_arr = np.array(ts), np.array(us)
    T_est, eta = float("nan"), float("nan")
    if status == "blowup-resolved":
        T_est, eta = estimate_blowup_time(t_arr, u_arr)
    series = ScaleSeries(t_arr, u_arr, np.array(lams), np.array(errs), status, T_est, eta)
    projections = []
    if project and status == "blowup-resolved":
        for snap in snaps:
            if snap.t < T_est:
                try:
                    projections.append(project_remainder(snap.field, cfg.beta, cfg.n_modes, T_est=T_est,
                                                         basis=cfg.basis))
                except (ProjectionError, NotConcentratedError, ConfigurationError):
                    continue
    return RunResult(cfg, series, snaps, projections, fld, steps)
