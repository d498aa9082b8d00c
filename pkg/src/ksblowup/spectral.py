"""Sturm-Liouville discretization of the linearized operators and their spectrum.

All three operators share the form

    A f = (1/w) (w f')' + V f,

with w = (a^2 + z^2)(b^2 + z^2) exp(-beta z^2/2) / (8 z) and V = (U_a + U_b)/2:
``Azeta`` is a = b = nu, ``Abar`` is a = nu, b = nutilde and ``A0`` is the
unscaled case a = b = 1, beta = 0 in the variable r.

The discretization works on the ground-state transform f = phi g with
phi = T0(z/c), c = sqrt(ab).  Because phi solves the beta-free equation for
a = b, the transformed operator

    (1/(w phi^2)) (w phi^2 g')' + R g

has a smooth bounded potential R and constants as the exact discrete kernel
of its diffusion part.  Working directly with f loses the zero mode to an
O(h^2/nu^2) consistency error, which shows up as a spurious large eigenvalue.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import exp1

from ._jit import njit
from .errors import (
    ConfigurationError,
    ConvergenceError,
    ParameterError,
    ResolutionError,
    TruncationError,
)
from .specialfun import (
    EULER_GAMMA,
    RadialGrid,
    build_Tj_table,
    eval_profile,
    make_grid,
    three_point_second_derivative,
)

OPERATOR_KINDS = ("A0", "Azeta", "Abar")
BOUNDARY_KINDS = ("regular-dirichlet", "dirichlet-dirichlet")
RESIDUAL_TOL = 1e-9
MAX_INVERSE_STEPS = 200
TAIL_TOL = 1e-12


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

def sl_weight(z, a: float, b: float, beta: float):
    """w = (a^2+z^2)(b^2+z^2) e^{-beta z^2/2} / (8z), the SL weight p = w."""
    z = np.asarray(z, dtype=float)
    return (a * a + z * z) * (b * b + z * z) / (8.0 * z) * np.exp(-0.5 * beta * z * z)


def sl_potential(z, a: float, b: float):
    """V = (U_a + U_b)/2."""
    return 0.5 * (eval_profile("U", z, a) + eval_profile("U", z, b))


def _ground_scale(a: float, b: float) -> float:
    return a if a == b else math.sqrt(a * b)


def _ground_slope(z, c: float):
    # phi'/phi for phi = T0(z/c)
    x2 = (z / c) ** 2
    return 2.0 / z * (1.0 - x2) / (1.0 + x2)


def reduced_potential(z, a: float, b: float, beta: float):
    """Potential R of the transformed operator acting on g = f/T0(z/c)."""
    z = np.asarray(z, dtype=float)
    c = _ground_scale(a, b)
    slope = _ground_slope(z, c)
    out = -beta * z * slope
    if a != b:
        mismatch = sl_potential(z, a, b) - eval_profile("U", z, c)
        drift = 2 * z / (z * z + a * a) + 2 * z / (z * z + b * b) - 4 * z / (z * z + c * c)
        out = out + mismatch + drift * slope
    return out


def _weighted_tail(Z: float, a: float, b: float, beta: float) -> float:
    # int_Z^inf w(z) dz in closed form
    x = 0.5 * beta * Z * Z
    e = math.exp(-x)
    t3 = e * (Z * Z / beta + 2.0 / (beta * beta))
    t1 = e / beta
    tm1 = 0.5 * exp1(x)
    return (t3 + (a * a + b * b) * t1 + (a * b) ** 2 * tm1) / 8.0


# ---------------------------------------------------------------------------
# the discrete form
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SturmLiouvilleForm:
    """Finite-volume discretization of (1/w)(p f')' + V f with p = w.

    ``conductance``, ``potential`` and ``mass`` are the SL data in the
    variable f.  The solver works with the ground-state data: ``ground_state``
    phi at the nodes, ``edge_weight`` p phi^2 / h per edge and
    ``reduced_potential`` R per node.  ``volume`` holds the control-volume
    lengths, so the f-frame mass matrix is diag(mass * volume).
    """

    grid: RadialGrid
    kind: str
    conductance: np.ndarray
    potential: np.ndarray
    mass: np.ndarray
    boundary: str
    params: tuple
    ground_state: np.ndarray
    edge_weight: np.ndarray
    reduced_potential: np.ndarray
    volume: np.ndarray

    @property
    def first(self) -> int:
        return 0 if self.boundary == "regular-dirichlet" else 1

    @property
    def unknowns(self) -> slice:
        return slice(self.first, self.grid.size - 1)

    @property
    def nodal_mass(self) -> np.ndarray:
        """f-frame lumped mass w_i * volume_i, zero at Dirichlet nodes."""
        out = self.mass * self.volume
        out = out.copy()
        out[: self.first] = 0.0
        out[-1] = 0.0
        return out

    def pencil(self):
        """(left, right, m, R) of the symmetric pencil B - alpha M in g."""
        s = self.unknowns
        kappa = self.edge_weight
        idx = np.arange(self.grid.size)[s]
        left = np.where(idx > 0, kappa[np.maximum(idx - 1, 0)], 0.0)
        right = kappa[idx]
        m = (self.mass * self.volume * self.ground_state ** 2)[s]
        return left, right, m, self.reduced_potential[s]

    def _to_g(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.grid.nodes.shape:
            raise ParameterError("samples do not match the grid")
        g = f / self.ground_state
        g[: self.first] = 0.0
        g[-1] = 0.0
        return g

    def _bg(self, g: np.ndarray) -> np.ndarray:
        # (B g) at every node in difference form; Dirichlet rows are zero
        flux = self.edge_weight * np.diff(g)
        out = np.zeros_like(g)
        out[:-1] += flux
        out[1:] -= flux
        mg = self.mass * self.volume * self.ground_state ** 2
        out += mg * self.reduced_potential * g
        out[: self.first] = 0.0
        out[-1] = 0.0
        return out

    def apply(self, f) -> np.ndarray:
        """S f with Dirichlet rows set to zero."""
        g = self._to_g(f)
        bg = self._bg(g)
        mg = self.mass * self.volume * self.ground_state
        out = np.zeros_like(g)
        s = self.unknowns
        out[s] = bg[s] / mg[s]
        return out

    def inner(self, f, h) -> float:
        """Mass inner product (f, h)_w over the unknowns."""
        return float(np.sum(self.nodal_mass * np.asarray(f) * np.asarray(h)))

    def quadratic(self, f) -> float:
        """(S f, f)_w evaluated without cancellation."""
        g = self._to_g(f)
        mg = self.mass * self.volume * self.ground_state ** 2
        s = self.unknowns
        return float(-np.sum(self.edge_weight * np.diff(g) ** 2)
                     + np.sum((mg * self.reduced_potential * g * g)[s]))

    def dense(self) -> np.ndarray:
        """Dense matrix of S on the unknowns (small grids only)."""
        s = self.unknowns
        n = self.grid.size
        cols = []
        for i in range(n)[s]:
            e = np.zeros(n)
            e[i] = 1.0
            cols.append(self.apply(e)[s])
        return np.array(cols).T


def _validate_scale(name: str, value: float, upper: float):
    if not (0.0 < value <= upper):
        raise ParameterError(f"{name} must lie in (0, {upper:g}]")


def _check_resolution(grid: RadialGrid, scale: float):
    z = grid.nodes
    if z[0] > scale / 100.0:
        raise ResolutionError(f"first node {z[0]:g} above {scale:g}/100")
    band = z[(z >= scale / 10.0) & (z <= scale * 10.0)]
    if band.size < 16 or np.max(np.diff(np.log10(band))) > 1.0 / 8.0:
        raise ResolutionError(f"fewer than 8 nodes per decade around {scale:g}")


def spectral_grid(nu: float, beta: float, points_per_decade: float = 64,
                  inner_factor: float = 1e-3, outer: Optional[float] = None,
                  max_spacing: float = 0.05) -> RadialGrid:
    """Composite grid on [inner_factor*nu, outer] clustered and anchored at nu."""
    if outer is None:
        outer = 16.0 * math.sqrt(0.5 / beta)
    return make_grid(nu * inner_factor, outer, points_per_decade, nu,
                     max_spacing=max_spacing, anchor=nu)


def a0_grid(outer: float = 1e3, points_per_decade: float = 32,
            inner: float = 1e-3) -> RadialGrid:
    """Log-graded grid in r with a node at r = 1."""
    return make_grid(inner, outer, points_per_decade, 1.0, anchor=1.0)


def assemble_operator(kind: str, grid: RadialGrid, nu: float = None,
                      beta: float = None, nutilde: float = None,
                      boundary: str = "regular-dirichlet") -> SturmLiouvilleForm:
    """Assemble A0, Azeta(nu, beta) or Abar(nu, nutilde, beta) on ``grid``.

    ``boundary`` is "regular-dirichlet" (zero flux of g at the inner node,
    which selects the branch vanishing like z^2) or "dirichlet-dirichlet"
    (f = 0 at both truncated ends).
    """
    if kind not in OPERATOR_KINDS:
        raise ParameterError(f"unknown operator kind {kind!r}")
    if boundary not in BOUNDARY_KINDS:
        raise ParameterError(f"unknown boundary {boundary!r}")
    if kind == "A0":
        a = b = 1.0
        beta_ = 0.0
    else:
        if nu is None or beta is None:
            raise ParameterError(f"{kind} needs nu and beta")
        _validate_scale("nu", nu, 0.1)
        if not 0.25 <= beta <= 2.0:
            raise ParameterError("beta must lie in [1/4, 2]")
        a = float(nu)
        b = a
        if kind == "Abar":
            if nutilde is None:
                raise ParameterError("Abar needs nutilde")
            _validate_scale("nutilde", nutilde, 0.2)
            b = float(nutilde)
        beta_ = float(beta)
        _check_resolution(grid, min(a, b))
        total = grid.integrate(sl_weight(grid.nodes, a, b, beta_))
        tail = _weighted_tail(grid.r_max, a, b, beta_)
        if tail > TAIL_TOL * total:
            raise TruncationError(
                f"weighted mass beyond z = {grid.r_max:g} is {tail / total:.2e} of the total")

    z = grid.nodes
    h = np.diff(z)
    zm = np.sqrt(z[1:] * z[:-1])
    c = _ground_scale(a, b)
    phi = eval_profile("T0", z, c)
    p_mid = sl_weight(zm, a, b, beta_)
    volume = np.empty_like(z)
    volume[1:-1] = 0.5 * (z[2:] - z[:-2])
    # the regular inner cell also carries (0, z0), where w phi^2 ~ z^3
    volume[0] = 0.5 * h[0] + 0.25 * z[0]
    volume[-1] = 0.5 * h[-1]
    arrays = dict(
        conductance=p_mid,
        potential=sl_potential(z, a, b),
        mass=sl_weight(z, a, b, beta_),
        ground_state=phi,
        edge_weight=p_mid * eval_profile("T0", zm, c) ** 2 / h,
        reduced_potential=reduced_potential(z, a, b, beta_),
        volume=volume,
    )
    for arr in arrays.values():
        arr.setflags(write=False)
    if np.any(arrays["conductance"] <= 0) or np.any(arrays["mass"] <= 0):
        raise ConfigurationError("weights underflowed on this grid")
    params = (a, b, beta_) if kind != "A0" else (1.0, 1.0, 0.0)
    return SturmLiouvilleForm(grid=grid, kind=kind, boundary=boundary, params=params, **arrays)


# ---------------------------------------------------------------------------
# eigen-solver: Sturm bisection on the pencil plus inverse iteration
# ---------------------------------------------------------------------------

@njit(cache=True)
def _count_above(left, right, m, R, sigma):
    # number of pencil eigenvalues above sigma; t_i = pivot_i + right_i keeps
    # the large conductances from cancelling
    count = 0
    t = 0.0
    for i in range(m.size):
        if i == 0:
            t = -left[0] + m[0] * (R[0] - sigma)
        else:
            c = left[i]
            den = c - t
            if den == 0.0:
                den = 1e-300 * (abs(c) + 1e-300)
            t = c * t / den + m[i] * (R[i] - sigma)
        if t > right[i]:
            count += 1
    return count


@njit(cache=True)
def _bisect(left, right, m, R, j, lo, hi):
    # alpha_j (0-based from the top) with count(lo) > j >= count(hi)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if hi - lo <= 4e-16 * max(1.0, abs(mid)):
            break
        if _count_above(left, right, m, R, mid) > j:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class EigenPair:
    """Eigenvalue, eigenvector on the nodes, and its weighted norm squared.

    The vector is scaled so that it matches nu^-2 T0(z/nu) at the innermost
    unknowns (T0(r) for A0), which fixes both sign and size.
    """

    alpha: float
    vector: np.ndarray
    norm_sq: float
    residual: float
    nodes: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    scale: float = 1.0
    first: int = 0


def _inner_target(nodes: np.ndarray, scale: float) -> np.ndarray:
    return eval_profile("T0", nodes, scale) / (scale * scale)


def _normalize_to_origin(vec: np.ndarray, nodes: np.ndarray, scale: float, first: int) -> np.ndarray:
    sel = slice(first, first + 3)
    ratio = np.mean(vec[sel] / _inner_target(nodes[sel], scale))
    if ratio == 0.0 or not np.isfinite(ratio):
        raise ConvergenceError("eigenvector vanishes at the inner nodes")
    return vec / ratio


@njit(cache=True)
def _flux_solve(left, right, m, R, sigma, b):
    # solve (B - sigma M) x = b returning x and its edge differences
    # d_i = x_{i+1} - x_i (d_{N-1} = -x_{N-1}); differences come straight from
    # the back substitution so they keep full relative precision
    n = m.size
    t = np.empty(n)
    y = np.empty(n)
    for i in range(n):
        e = m[i] * (R[i] - sigma)
        if i == 0:
            t[0] = -left[0] + e
            y[0] = b[0]
        else:
            piv = t[i - 1] - right[i - 1]
            if piv == 0.0:
                piv = -1e-300
            t[i] = left[i] * t[i - 1] / (left[i] - t[i - 1]) + e
            y[i] = b[i] - left[i] / piv * y[i - 1]
    x = np.empty(n)
    d = np.empty(n)
    piv = t[n - 1] - right[n - 1]
    x[n - 1] = y[n - 1] / piv
    d[n - 1] = -x[n - 1]
    for i in range(n - 2, -1, -1):
        piv = t[i] - right[i]
        d[i] = (t[i] * x[i + 1] - y[i]) / piv
        x[i] = x[i + 1] - d[i]
    return x, d


def _pencil_residual(left, right, m, R, alpha, x, d):
    flux = right * d
    out = flux.copy()
    out[1:] -= flux[:-1]
    out[0] -= left[0] * x[0]
    return out + m * (R - alpha) * x


def _pencil_quadratic(left, right, m, R, x, d):
    return float(-np.sum(right * d * d) - left[0] * x[0] ** 2 + np.sum(m * R * x * x))


def solve_top_spectrum(form: SturmLiouvilleForm, k: int) -> list:
    """The k largest eigenpairs of S v = alpha v in the mass inner product.

    Eigenvalues come from Sturm bisection on the pencil (B - alpha M) g = 0.
    Vectors come from shifted inverse iteration with mass re-orthogonalization,
    run until the weighted residual is below 1e-9.
    """
    if not 1 <= k <= 12:
        raise ParameterError("k must lie in 1..12")
    left, right, m, R = form.pencil()
    if m.size < k + 2:
        raise ParameterError("grid too small for the requested modes")
    hi = float(np.max(R)) + 1e-12
    span = 1.0
    lo = hi - span
    while _count_above(left, right, m, R, lo) < k:
        span *= 2.0
        lo = hi - span
        if span > 1e12:
            raise ConvergenceError(f"{form.kind}: cannot bracket {k} eigenvalues")
    alphas = [_bisect(left, right, m, R, j, lo, hi) for j in range(k)]

    vecs = []
    pairs = []
    nodes = form.grid.nodes
    a_scale = form.params[0] if form.kind != "A0" else 1.0
    for j, sigma in enumerate(alphas):
        x = np.linspace(1.0, 2.0, m.size)
        shift = sigma + 1e-13 * max(1.0, abs(sigma))
        res = np.inf
        alpha = sigma
        for _ in range(MAX_INVERSE_STEPS):
            x, d = _flux_solve(left, right, m, R, shift, m * x)
            for v, dv in vecs:
                c = np.dot(m * v, x)
                x = x - c * v
                d = d - c * dv
            scale = math.sqrt(np.dot(m * x, x))
            if not np.isfinite(scale) or scale == 0.0:
                shift += 1e-12 * max(1.0, abs(sigma))
                x = np.linspace(1.0, 2.0, m.size)
                continue
            x, d = x / scale, d / scale
            alpha = _pencil_quadratic(left, right, m, R, x, d)
            r = _pencil_residual(left, right, m, R, alpha, x, d)
            res = math.sqrt(float(np.sum(r * r / m)))
            if res <= RESIDUAL_TOL:
                break
        else:
            raise ConvergenceError(
                f"{form.kind}: inverse iteration for mode {j} stalled at residual {res:.2e}")
        vecs.append((x, d))
        g = x
        f = np.zeros(form.grid.size)
        f[form.unknowns] = g * form.ground_state[form.unknowns]
        f = _normalize_to_origin(f, nodes, a_scale, form.first)
        mass = form.nodal_mass
        pairs.append(EigenPair(alpha=float(alpha), vector=f, norm_sq=float(np.sum(mass * f * f)),
                               residual=res, nodes=nodes, mass=mass, scale=a_scale,
                               first=form.first))
    order = np.argsort([-p.alpha for p in pairs])
    pairs = [pairs[i] for i in order]
    if any(pairs[i].alpha <= pairs[i + 1].alpha for i in range(len(pairs) - 1)):
        raise ConvergenceError(f"{form.kind}: eigenvalues not strictly separated")
    return pairs


def scipy_top_spectrum(form: SturmLiouvilleForm, k: int) -> np.ndarray:
    """Cross-check: LAPACK tridiagonal eigenvalues of the symmetrized pencil.

    The absolute tolerance must be passed explicitly; the LAPACK default is
    relative to the matrix norm, which is enormous here.
    """
    from scipy.linalg import eigh_tridiagonal

    left, right, m, R = form.pencil()
    s = np.sqrt(m)
    d = (-left - right) / m + R
    e = right[:-1] / (s[:-1] * s[1:])
    n = d.size
    vals = eigh_tridiagonal(d, e, eigvals_only=True, select="i",
                            select_range=(n - k, n - 1), tol=1e-13)
    return vals[::-1]


# ---------------------------------------------------------------------------
# predictions and reports
# ---------------------------------------------------------------------------

def refined_constant(n: int, beta: float) -> float:
    """ln 2 - gamma - n - ln beta."""
    return math.log(2.0) - EULER_GAMMA - n - math.log(beta)


def predicted_alpha(n: int, nu: float, beta: float, refined: bool = False) -> float:
    """2 beta (1 - n + 1/(2 ln nu)) plus, if refined, 2 beta (ln2-gamma-n-ln beta)/(4 ln^2 nu)."""
    if n < 0:
        raise ParameterError("n must be >= 0")
    if not 0.0 < nu < 1.0:
        raise ParameterError("nu must lie in (0, 1)")
    L = math.log(nu)
    out = 2.0 * beta * (1.0 - n + 1.0 / (2.0 * L))
    if refined:
        if n > 1:
            raise ParameterError("refined eigenvalue only available for n = 0, 1")
        out += 2.0 * beta * refined_constant(n, beta) / (4.0 * L * L)
    return out


def scaled_residual(alpha: float, n: int, nu: float, beta: float) -> float:
    L = math.log(nu)
    return abs(alpha / (2.0 * beta) - (1.0 - n + 1.0 / (2.0 * L))) * L * L


def eigenfunction_norm(pair: EigenPair, nu: float, beta: float) -> float:
    """||phi||^2 in L^2(omega_nu/z) after matching nu^-2 T0(z/nu) near the origin."""
    if not 0.0 < nu < 1.0 or not beta > 0.0:
        raise ParameterError("need 0 < nu < 1 and beta > 0")
    f = _normalize_to_origin(pair.vector, pair.nodes, nu, pair.first)
    return float(np.sum(pair.mass * f * f))


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    nu: float
    beta: float
    computed: list
    predicted_leading: list
    predicted_refined: list
    residual_scaled: list
    norms: list
    metadata: dict = field(default_factory=dict)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.computed])

    def rows(self):
        for n, pair in enumerate(self.computed):
            yield dict(n=n, alpha_computed=pair.alpha, alpha_leading=self.predicted_leading[n],
                       alpha_refined=self.predicted_refined[n],
                       residual_scaled=self.residual_scaled[n], norm_sq=self.norms[n])

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = ["n", "alpha_computed", "alpha_leading", "alpha_refined", "residual_scaled", "norm_sq"]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            for row in self.rows():
                writer.writerow([_fmt(row[c]) for c in cols])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        doc = dict(nu=self.nu, beta=self.beta, modes=list(self.rows()),
                   residuals=[p.residual for p in self.computed], grid=self.metadata)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def compute_spectrum(nu: float, beta: float, n_modes: int = 4, *, refined: bool = True,
                     points_per_decade: float = 64, boundary: str = "regular-dirichlet",
                     grid: Optional[RadialGrid] = None) -> SpectrumReport:
    """Assemble Azeta, solve for the top ``n_modes`` and compare with the predictions."""
    if grid is None:
        grid = spectral_grid(nu, beta, points_per_decade)
    form = assemble_operator("Azeta", grid, nu=nu, beta=beta, boundary=boundary)
    pairs = solve_top_spectrum(form, n_modes)
    lead = [predicted_alpha(n, nu, beta) for n in range(n_modes)]
    ref = [predicted_alpha(n, nu, beta, refined=True) if refined and n <= 1 else None
           for n in range(n_modes)]
    scaled = [scaled_residual(p.alpha, n, nu, beta) for n, p in enumerate(pairs)]
    norms = [eigenfunction_norm(p, nu, beta) for p in pairs]
    meta = dict(size=grid.size, r_min=grid.r_min, r_max=grid.r_max, kind=grid.kind,
                points_per_decade=grid.points_per_decade, boundary=boundary)
    return SpectrumReport(nu, beta, pairs, lead, ref, scaled, norms, meta)


# ---------------------------------------------------------------------------
# spectral gap and stability under nu -> nutilde
# ---------------------------------------------------------------------------

def _gram(form: SturmLiouvilleForm, vecs: Sequence[np.ndarray]) -> np.ndarray:
    G = np.array([[form.inner(u, v) for v in vecs] for u in vecs])
    d = np.sqrt(np.diag(G))
    return G / np.outer(d, d)


def spectral_gap_check(form: SturmLiouvilleForm, pairs: Sequence[EigenPair], trials: int = 100,
                       seed: int = 0) -> float:
    """Largest Rayleigh quotient over trial functions orthogonal to ``pairs``.

    Trial 0 is the next eigenvector; the rest are random mixtures of the next
    few eigenvectors plus smoothed noise, or smoothed noise alone.
    """
    vecs = [p.vector for p in pairs]
    if vecs:
        G = _gram(form, vecs)
        if np.max(np.abs(G - np.eye(len(vecs)))) > 1e-8:
            raise ParameterError("pairs are not mass-orthogonal")
    n_pairs = len(vecs)
    k_extra = min(12, n_pairs + 6)
    extra = [p.vector for p in solve_top_spectrum(form, k_extra)][n_pairs:]
    rng = np.random.default_rng(seed)
    nodes = form.grid.size
    phi = form.ground_state
    s = form.unknowns
    basis = [v / math.sqrt(form.inner(v, v)) for v in vecs]

    def project(f):
        for _ in range(2):
            for v in basis:
                f = f - form.inner(f, v) * v
        return f

    def smooth_noise():
        width = int(rng.integers(1, 60))
        noise = rng.standard_normal(nodes + width)
        kern = np.ones(width) / width
        out = np.convolve(noise, kern, mode="valid")[:nodes] * phi
        out[:s.start] = 0.0
        out[-1] = 0.0
        return out

    worst = -np.inf
    for t in range(trials):
        if t == 0:
            f = extra[0].copy()
        elif t % 2:
            coef = rng.standard_normal(len(extra))
            f = sum(c * v / math.sqrt(form.inner(v, v)) for c, v in zip(coef, extra))
            noise = smooth_noise()
            f = f + 1e-3 * noise / math.sqrt(form.inner(noise, noise))
        else:
            f = smooth_noise()
        f = project(f)
        q = form.quadratic(f) / form.inner(f, f)
        worst = max(worst, q)
    return float(worst)


def eigen_stability_check(nu: float, nutilde: float, beta: float,
                          grid: Optional[RadialGrid] = None, k: int = 4,
                          points_per_decade: float = 128) -> np.ndarray:
    """|alpha_bar_n - alpha_n| ln^2(nu) for n < k on a shared grid."""
    L = abs(math.log(nu))
    if abs(nu - nutilde) > nu / L * (1.0 + 1e-12):
        raise ParameterError("need |nu - nutilde| <= nu/|ln nu|")
    if grid is None:
        grid = spectral_grid(min(nu, nutilde), beta, points_per_decade)
    base = solve_top_spectrum(assemble_operator("Azeta", grid, nu=nu, beta=beta), k)
    if nutilde == nu:
        return np.zeros(k)
    bar = solve_top_spectrum(assemble_operator("Abar", grid, nu=nu, beta=beta, nutilde=nutilde), k)
    return np.array([abs(b.alpha - a.alpha) * L * L for a, b in zip(base, bar)])


# ---------------------------------------------------------------------------
# coercivity and Hardy constants for A0
# ---------------------------------------------------------------------------

def cutoff_chi(x):
    """C^2 cutoff: 1 on [0, 1], 0 beyond 2, quintic smoothstep between."""
    t = np.clip(np.asarray(x, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


def _a0_pieces(grid: RadialGrid):
    form = assemble_operator("A0", grid, boundary="dirichlet-dirichlet")
    r = grid.nodes
    n = r.size
    inner = np.arange(1, n - 1)
    # map from interior unknowns to full vectors with zero ends
    P = np.zeros((n, inner.size))
    P[inner, np.arange(inner.size)] = 1.0
    h = np.diff(r)
    D = (np.eye(n, k=1) - np.eye(n))[:-1] / h[:, None]        # edge derivative
    return form, r, P, D


def _edge_diff(n: int) -> np.ndarray:
    return (np.eye(n, k=1) - np.eye(n))[:-1]


def _constrained_min(num: np.ndarray, den: np.ndarray, constraint: Optional[np.ndarray]) -> float:
    # Jacobi scaling first: the weights span many decades in r
    scale = 1.0 / np.sqrt(np.diag(den))
    num = num * np.outer(scale, scale)
    den = den * np.outer(scale, scale)
    if constraint is not None:
        Z = linalg.null_space((constraint * scale)[None, :])
        num = Z.T @ num @ Z
        den = Z.T @ den @ Z
    num = 0.5 * (num + num.T)
    den = 0.5 * (den + den.T)
    vals = linalg.eigh(num, den, eigvals_only=True, subset_by_index=[0, 0])
    return float(vals[0])


def coercivity_check(kind: str, grid: Optional[RadialGrid] = None, M: float = 20.0,
                     points_per_decade: float = 32) -> float:
    """Constrained minimum for delta0, delta1 or the Hardy constant of A0.

    f vanishes at both truncated ends.  delta0 and delta1 are minimized over
    (f, chi_M T0)_{w} = 0 with w = omega_0/r.
    """
    if kind not in ("delta0", "delta1", "hardy"):
        raise ParameterError(f"unknown coercivity kind {kind!r}")
    if not M >= 10.0:
        raise ParameterError("M must be >= 10")
    if grid is None:
        grid = a0_grid(200.0 * M, points_per_decade)
    if grid.r_max < 100.0 * M:
        raise ParameterError("outer cutoff must be >= 100 M")
    form, r, P, D = _a0_pieces(grid)
    n = r.size
    mass = form.mass * form.volume
    rm = np.sqrt(r[1:] * r[:-1])
    h = np.diff(r)
    w_edge = form.conductance * h
    grad_gram = D.T @ (w_edge[:, None] * D)

    constraint = None
    if kind != "hardy":
        chi = cutoff_chi(r / M)
        c_vec = (mass * chi * eval_profile("T0", r)) @ P
        band = (r >= M) & (r <= 2.0 * M)
        if np.count_nonzero(band) < 4 or np.linalg.norm(c_vec) < 1e-14:
            raise ConfigurationError("chi_M T0 is not resolved on this grid")
        constraint = c_vec / np.linalg.norm(c_vec)

    if kind == "hardy":
        num = P.T @ grad_gram @ P
        den = P.T @ np.diag(mass / (1.0 + r * r)) @ P
        return _constrained_min(num, den, None)

    phi = form.ground_state
    Dg = _edge_diff(n)
    K = Dg.T @ (form.edge_weight[:, None] * Dg)                 # g-frame stiffness
    inv_phi = np.diag(1.0 / phi)
    if kind == "delta0":
        num = P.T @ inv_phi @ K @ inv_phi @ P
        den = P.T @ (np.diag(mass / (1.0 + r * r)) + grad_gram) @ P
        return _constrained_min(num, den, constraint)

    # delta1: |A0 f|^2 against second-order weighted norms
    mg = mass * phi
    A = -(K / mg[:, None]) @ inv_phi @ P
    A = A[1:-1]
    num = A.T @ np.diag(mass[1:-1]) @ A
    D2 = np.array([three_point_second_derivative(r, col)[1:-1] for col in P.T]).T
    bracket = np.sqrt(1.0 + r * r)
    low = mass / ((1.0 + r ** 4) * (1.0 + np.log(bracket) ** 2))
    grad_low = D.T @ ((w_edge / (1.0 + rm * rm))[:, None] * D)
    den = D2.T @ np.diag(mass[1:-1]) @ D2 + P.T @ (grad_low + np.diag(low)) @ P
    return _constrained_min(num, den, constraint)


# ---------------------------------------------------------------------------
# overlaps of the leading-order eigenfunctions
# ---------------------------------------------------------------------------

def overlap_table(nu: float, beta: float, grid: Optional[RadialGrid] = None,
                  points_per_decade: float = 64) -> dict:
    """Scaled inner products of nu d_nu and beta d_beta of (phi1 - phi0).

    phi0 = nu^-2 T0(z/nu) and phi1 = phi0 + 2 beta T1(z/nu); then
    nu d_nu (phi1 - phi0) = 2 beta Theta1(z/nu) and
    beta d_beta (phi1 - phi0) = 2 beta T1(z/nu).
    """
    if grid is None:
        grid = spectral_grid(nu, beta, points_per_decade)
    table = build_Tj_table(1, grid.scaled(1.0 / nu))
    z = grid.nodes
    w = sl_weight(z, nu, nu, beta)
    phi0 = table.T[0] / nu ** 2
    phi1 = phi0 + 2.0 * beta * table.T[1]
    dnu = 2.0 * beta * table.Theta[1]
    dbeta = 2.0 * beta * table.T[1]
    L = abs(math.log(nu))

    def ip(f, g):
        return grid.integrate(f * g * w, inner_power=3.0)

    return {
        "nu_dnu_phi0": ip(dnu, phi0),
        "nu_dnu_phi1_over_ln": ip(dnu, phi1) / L,
        "beta_dbeta_phi0_over_ln": ip(dbeta, phi0) / L,
        "beta_dbeta_phi1_over_ln2": ip(dbeta, phi1) / L ** 2,
    }
