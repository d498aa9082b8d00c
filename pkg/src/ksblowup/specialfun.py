"""Closed-form profiles, weights, radial grids and the generalized kernel chain.

Everything here is deterministic and immutable after construction.  The
radial grid is the one mesh type used by the spectral, modulation and PDE
layers; it is built from a smooth map xi -> zeta with unit spacing in xi,
which lets quadrature and differentiation run on a uniform index grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    DivergenceError,
    DomainError,
    ParameterError,
    RangeError,
    RefinementError,
)

EULER_GAMMA = float(np.euler_gamma)
LN10 = math.log(10.0)

PROFILE_KINDS = ("U", "Q", "T0", "psi0", "psitilde0")
WEIGHT_KINDS = ("omega_nu", "omega_0", "omega_tilde", "rho", "rho_0")
GRID_KINDS = ("log-graded", "uniform", "composite")


# ---------------------------------------------------------------------------
# profiles and weights
# ---------------------------------------------------------------------------

def _positive_array(r, name: str = "r") -> np.ndarray:
    arr = np.asarray(r, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"{name} must be finite and > 0")
    return arr


def eval_profile(kind: str, r, nu: Optional[float] = None):
    """Evaluate U, Q, T0, psi0 or psitilde0 at r > 0.

    With ``nu`` the scaled variants are returned: U_nu(z) = U(z/nu)/nu**2 and
    Q_nu(z) = Q(z/nu); T0, psi0 and psitilde0 are simply evaluated at z/nu.
    """
    if kind not in PROFILE_KINDS:
        raise ParameterError(f"unknown profile kind {kind!r}")
    x = _positive_array(r)
    scale = 1.0
    if nu is not None:
        if not nu > 0.0:
            raise DomainError("nu must be > 0")
        x = x / nu
        scale = nu
    x2 = x * x
    bracket2 = (1.0 + x2) ** 2
    if kind == "U":
        out = 8.0 / bracket2 / (scale * scale)
    elif kind == "Q":
        out = 4.0 * x2 / (1.0 + x2)
    elif kind in ("T0", "psi0"):
        out = x2 / bracket2
    else:
        out = (x2 * x2 + 4.0 * x2 * np.log(x) - 1.0) / bracket2
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class WeightSpec:
    """Which weight to evaluate and its parameters."""

    kind: str
    nu: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ParameterError(f"unknown weight kind {self.kind!r}")
        if not self.nu > 0.0:
            raise ParameterError("nu must be > 0")
        if not self.beta >= 0.0:
            raise ParameterError("beta must be >= 0")


def weight(spec: WeightSpec, point):
    """Closed-form weight omega_nu, omega_0, omega_tilde, rho or rho_0."""
    z = _positive_array(point, "point")
    nu, beta = spec.nu, spec.beta
    if spec.kind == "omega_nu":
        out = (nu * nu + z * z) ** 2 / 8.0 * np.exp(-0.5 * beta * z * z)
    elif spec.kind == "omega_0":
        out = (1.0 + z * z) ** 2 / 8.0
    elif spec.kind == "omega_tilde":
        out = z ** 3 * np.exp(-0.5 * beta * z * z)
    elif spec.kind == "rho_0":
        out = np.exp(-0.5 * beta * z * z)
    else:
        out = np.exp(-0.5 * beta * nu * nu * z * z)
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Strictly increasing positive nodes with d(node)/d(xi) at unit xi spacing.

    ``jacobian`` holds dz/dxi at every node.  For grids built by
    :func:`make_grid` it is exact; for user-supplied nodes it is estimated by
    finite differences in the index.
    """

    nodes: np.ndarray
    kind: str = "log-graded"
    cluster_scale: float = 1.0
    jacobian: Optional[np.ndarray] = None
    points_per_decade: float = float("nan")

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 8:
            raise ParameterError("a grid needs at least 8 nodes")
        if np.any(nodes <= 0.0) or np.any(np.diff(nodes) <= 0.0):
            raise ParameterError("grid nodes must be positive and strictly increasing")
        if self.kind not in GRID_KINDS:
            raise ParameterError(f"unknown grid kind {self.kind!r}")
        jac = self.jacobian
        if jac is None:
            jac = _index_derivative(nodes)
        jac = np.array(jac, dtype=float)
        if jac.shape != nodes.shape or np.any(jac <= 0.0):
            raise ParameterError("jacobian must be positive and match the nodes")
        nodes.setflags(write=False)
        jac.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "jacobian", jac)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def r_min(self) -> float:
        return float(self.nodes[0])

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])

    def index_of(self, value: float, rtol: float = 1e-13) -> Optional[int]:
        """Index of the node equal to ``value`` up to ``rtol``, else None."""
        k = int(np.searchsorted(self.nodes, value))
        for cand in (k - 1, k):
            if 0 <= cand < self.size and abs(self.nodes[cand] - value) <= rtol * value:
                return cand
        return None

    def scaled(self, factor: float) -> "RadialGrid":
        """Grid with every node multiplied by ``factor``."""
        return RadialGrid(self.nodes * factor, self.kind, self.cluster_scale * factor,
                          self.jacobian * factor, self.points_per_decade)

    def spacing_at(self, value: float) -> float:
        """Local node spacing near ``value``."""
        k = int(np.clip(np.searchsorted(self.nodes, value), 1, self.size - 1))
        return float(self.nodes[k] - self.nodes[k - 1])

    def integrate(self, f, inner_power: Optional[float] = None) -> float:
        """Integral of samples ``f`` over [first node, last node].

        With ``inner_power`` the interval (0, first node) is added using the
        power-law extension f ~ f[0] (z/z0)**inner_power.
        """
        f = np.asarray(f, dtype=float)
        total = float(np.dot(_endpoint_weights(self.size), f * self.jacobian))
        if inner_power is not None:
            total += float(f[0]) * self.r_min / (inner_power + 1.0)
        return total

    def cumulative(self, f) -> np.ndarray:
        """Running integral from the first node, 6th order in xi."""
        return cumulative_integral(np.asarray(f, dtype=float) * self.jacobian)

    def derivative(self, f) -> np.ndarray:
        """First derivative by the 3-point nonuniform stencil."""
        return three_point_derivative(self.nodes, f)


def _index_derivative(nodes: np.ndarray) -> np.ndarray:
    # 4th-order differences of the nodes with respect to the index
    x = np.log(nodes)
    d = np.empty_like(x)
    d[2:-2] = (x[:-4] - 8.0 * x[1:-3] + 8.0 * x[3:-1] - x[4:]) / 12.0
    d[:2] = (-25 * x[0:2] + 48 * x[1:3] - 36 * x[2:4] + 16 * x[3:5] - 3 * x[4:6]) / 12.0
    d[-2:] = (25 * x[-2:] - 48 * x[-3:-1] + 36 * x[-4:-2] - 16 * x[-5:-3] + 3 * x[-6:-4]) / 12.0
    return d * nodes


def _softplus(x):
    return np.logaddexp(0.0, x)


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class _DensityMap:
    """Node density in s = log10(z) and its closed-form antiderivative."""

    def __init__(self, ppd: float, cluster_scale: float, boost: float,
                 width: float, max_spacing: Optional[float]):
        self.ppd = ppd
        self.lo = math.log10(cluster_scale) - 1.0
        self.hi = math.log10(cluster_scale) + 1.0
        self.boost = boost
        self.width = width
        self.max_spacing = max_spacing

    def density(self, s):
        w = self.width
        bump = _logistic((s - self.lo) / w) - _logistic((s - self.hi) / w)
        d = self.ppd * (1.0 + (self.boost - 1.0) * bump)
        if self.max_spacing is not None:
            d = d + LN10 * 10.0 ** s / self.max_spacing
        return d

    def count(self, s):
        w = self.width
        ramp = w * (_softplus((s - self.lo) / w) - _softplus((s - self.hi) / w))
        n = self.ppd * (s + (self.boost - 1.0) * ramp)
        if self.max_spacing is not None:
            n = n + 10.0 ** s / self.max_spacing
        return n


def make_grid(zeta_min: float, zeta_max: float, points_per_decade: float,
              cluster_scale: float, *, cluster_boost: float = 2.0,
              cluster_width: float = 0.15, max_spacing: Optional[float] = None,
              anchor: Optional[float] = 1.0) -> RadialGrid:
    """Log-graded grid with extra density in [cluster/10, 10*cluster].

    The end points are nodes, and so is ``anchor`` when it lies strictly
    inside the range.  ``max_spacing`` caps the node spacing at large z and
    turns the grid into a composite log/uniform one.
    """
    if not (0.0 < zeta_min < cluster_scale < zeta_max):
        raise ParameterError("need 0 < zeta_min < cluster_scale < zeta_max")
    if not points_per_decade >= 8:
        raise ParameterError("points_per_decade must be >= 8")
    if not cluster_boost >= 1.0:
        raise ParameterError("cluster_boost must be >= 1")
    if max_spacing is not None and not max_spacing > 0.0:
        raise ParameterError("max_spacing must be > 0")

    dmap = _DensityMap(float(points_per_decade), cluster_scale, cluster_boost,
                       cluster_width, max_spacing)
    s_min, s_max = math.log10(zeta_min), math.log10(zeta_max)
    n_min = dmap.count(s_min)
    span = dmap.count(s_max) - n_min
    n = int(math.ceil(span))
    stretch = span / n

    def s_of(eta: np.ndarray) -> np.ndarray:
        # invert count(s) = n_min + stretch*eta by safeguarded Newton steps
        target = n_min + stretch * np.asarray(eta, dtype=float)
        s = s_min + (s_max - s_min) * np.asarray(eta, dtype=float) / n
        for _ in range(100):
            step = (dmap.count(s) - target) / dmap.density(s)
            s = np.clip(s - step, s_min - 1.0, s_max + 1.0)
            if np.max(np.abs(step)) < 1e-15:
                break
        return s

    xi = np.arange(n + 1, dtype=float)
    eta = xi.copy()
    deta = np.ones_like(xi)
    anchored = anchor is not None and zeta_min < anchor < zeta_max
    if anchored:
        s_a = math.log10(anchor)
        xi_a = (dmap.count(s_a) - n_min) / stretch
        k_a = int(round(xi_a))
        k_a = min(max(k_a, 1), n - 1)
        delta = xi_a - k_a
        # smooth shift eta = xi + delta*b(xi), b(0)=b(n)=0, b(k_a)=1
        left = xi <= k_a
        b = np.where(left, np.sin(0.5 * np.pi * xi / k_a) ** 2,
                     np.cos(0.5 * np.pi * (xi - k_a) / (n - k_a)) ** 2)
        db = np.where(left, 0.5 * np.pi / k_a * np.sin(np.pi * xi / k_a),
                      -0.5 * np.pi / (n - k_a) * np.sin(np.pi * (xi - k_a) / (n - k_a)))
        eta = xi + delta * b
        deta = 1.0 + delta * db
        if np.any(deta <= 0.0):
            raise ParameterError("grid too coarse to place the anchor node")

    s = s_of(eta)
    s[0], s[-1] = s_min, s_max
    nodes = 10.0 ** s
    if anchored:
        nodes[k_a] = anchor
    jac = nodes * LN10 * stretch / dmap.density(s) * deta
    kind = "composite" if max_spacing is not None else "log-graded"
    return RadialGrid(nodes, kind, float(cluster_scale), jac, float(points_per_decade))


# ---------------------------------------------------------------------------
# quadrature and differentiation on the index grid
# ---------------------------------------------------------------------------

_GREGORY_ORDER = 6


def _gregory_corrections(m: int = _GREGORY_ORDER) -> np.ndarray:
    # left-end corrections c_j making the trapezoid rule exact for degree < m:
    # sum_j c_j j**p equals the Euler-Maclaurin endpoint functional
    bern = {1: Fraction(1, 12), 3: Fraction(-1, 720), 5: Fraction(1, 30240),
            7: Fraction(-1, 1209600)}
    rhs = []
    for p in range(m):
        val = Fraction(0)
        for k, coef in bern.items():
            if p == k:
                val = coef * math.factorial(k)
        rhs.append(float(val))
    vander = np.vander(np.arange(m, dtype=float), m, increasing=True).T
    return np.linalg.solve(vander, np.array(rhs))


_GREGORY = _gregory_corrections()


def _endpoint_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    m = _GREGORY.size
    if n >= 2 * m:
        w[:m] += _GREGORY
        w[-m:] += _GREGORY[::-1]
    return w


def _cell_weights(offset: int, width: int = 6) -> np.ndarray:
    # weights of the interpolant through nodes offset..offset+width-1,
    # integrated over the cell [0, 1]
    pts = np.arange(offset, offset + width, dtype=float)
    vander = np.vander(pts, width, increasing=True).T
    moments = np.array([1.0 / (p + 1) for p in range(width)])
    return np.linalg.solve(vander, moments)


_CELL_STENCILS = {off: _cell_weights(off) for off in range(-5, 1)}


def cumulative_integral(F: np.ndarray) -> np.ndarray:
    """Running integral of samples on the unit-spaced index grid.

    Each cell uses the degree-5 interpolant through six nearby samples
    (centred where possible), so the result is 6th-order accurate.
    """
    F = np.asarray(F, dtype=float)
    n = F.size
    out = np.zeros(n)
    if n < 6:
        out[1:] = np.cumsum(0.5 * (F[1:] + F[:-1]))
        return out
    cells = np.empty(n - 1)
    start = np.clip(np.arange(n - 1) - 2, 0, n - 6)
    for off in range(-5, 1):
        sel = np.nonzero(start - np.arange(n - 1) == off)[0]
        if sel.size:
            w = _CELL_STENCILS[off]
            cells[sel] = sum(w[k] * F[sel + off + k] for k in range(6))
    out[1:] = np.cumsum(cells)
    return out


def three_point_derivative(x: np.ndarray, f) -> np.ndarray:
    """First derivative on a nonuniform grid (3-point stencils)."""
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    d = np.empty_like(f)
    h0 = x[1:-1] - x[:-2]
    h1 = x[2:] - x[1:-1]
    d[1:-1] = (-h1 / (h0 * (h0 + h1)) * f[:-2] + (h1 - h0) / (h0 * h1) * f[1:-1]
               + h0 / (h1 * (h0 + h1)) * f[2:])
    a, b = x[1] - x[0], x[2] - x[1]
    d[0] = (-(2 * a + b) / (a * (a + b)) * f[0] + (a + b) / (a * b) * f[1]
            - a / (b * (a + b)) * f[2])
    a, b = x[-1] - x[-2], x[-2] - x[-3]
    d[-1] = ((2 * a + b) / (a * (a + b)) * f[-1] - (a + b) / (a * b) * f[-2]
             + a / (b * (a + b)) * f[-3])
    return d


def three_point_second_derivative(x: np.ndarray, f) -> np.ndarray:
    """Second derivative at interior nodes of a nonuniform grid (ends set to nan)."""
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    d = np.full_like(f, np.nan)
    h0 = x[1:-1] - x[:-2]
    h1 = x[2:] - x[1:-1]
    d[1:-1] = 2.0 * (f[:-2] / (h0 * (h0 + h1)) - f[1:-1] / (h0 * h1)
                     + f[2:] / (h1 * (h0 + h1)))
    return d


def apply_A0(grid: RadialGrid, f) -> np.ndarray:
    """Nodal finite-difference action f'' - f'/r + (Q f)'/r (ends are nan)."""
    r = grid.nodes
    f = np.asarray(f, dtype=float)
    q = eval_profile("Q", r)
    u = eval_profile("U", r)
    d1 = three_point_derivative(r, f)
    d2 = three_point_second_derivative(r, f)
    out = d2 + (q - 1.0) / r * d1 + u * f
    out[0] = out[-1] = np.nan
    return out


# ---------------------------------------------------------------------------
# explicit inverse and the T_j chain
# ---------------------------------------------------------------------------

def _inner_exponent(grid: RadialGrid, f: np.ndarray) -> float:
    f0, f1 = abs(f[0]), abs(f[1])
    if f0 == 0.0 or f1 == 0.0:
        return 2.0
    return math.log(f1 / f0) / math.log(grid.nodes[1] / grid.nodes[0])


def apply_A0_inverse(grid: RadialGrid, f) -> np.ndarray:
    """Explicit inverse of A0 with the psi0-coefficient fixed to zero.

    g(r) = psi0(r)/2 * int_r^1 (z^4 + 4 z^2 ln z - 1)/z f dz
           + psitilde0(r)/2 * int_0^r z f dz.
    Below the first node f is extended as f(z0)(z/z0)**2.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != grid.nodes.shape:
        raise ParameterError("samples do not match the grid")
    if not np.all(np.isfinite(f)):
        raise DivergenceError("samples are not finite")
    pivot = grid.index_of(1.0)
    if pivot is None:
        raise RefinementError("grid has no node at r = 1")
    if _inner_exponent(grid, f) <= -2.0:
        raise DivergenceError("z*f is not integrable at the origin")
    r = grid.nodes
    kernel = (r ** 4 + 4.0 * r ** 2 * np.log(r) - 1.0) / r
    c1 = grid.cumulative(kernel * f)
    outer = c1[pivot] - c1
    inner = grid.cumulative(r * f) + f[0] * r[0] ** 2 / 4.0
    return 0.5 * eval_profile("psi0", r) * outer + 0.5 * eval_profile("psitilde0", r) * inner


def dhat_exact(j: int) -> Fraction:
    """d̂_j from d̂_1 = -1/2 and d̂_{j+1} = -d̂_j/(4j(j+1))."""
    if j < 1:
        raise ParameterError("d̂_j is defined for j >= 1")
    d = Fraction(-1, 2)
    for k in range(1, j):
        d = -d / (4 * k * (k + 1))
    return d


def dhat_closed_form(j: int) -> Fraction:
    """(-1)^j 2^(1-2j) / (j ((j-1)!)^2) as an exact fraction."""
    if j < 1:
        raise ParameterError("d̂_j is defined for j >= 1")
    return Fraction((-1) ** j, 2 ** (2 * j - 1) * j * math.factorial(j - 1) ** 2)


def c_coefficient(n: int, j: int) -> int:
    """c_{n,j} = 2^j n!/(n-j)!."""
    if not 0 <= j <= n:
        raise ParameterError("need 0 <= j <= n")
    return 2 ** j * math.factorial(n) // math.factorial(n - j)


@dataclass(frozen=True, eq=False)
class TjTable:
    """T_j and Theta_j = (2j-2) T_j - r T_j' sampled on a grid."""

    jmax: int
    grid: RadialGrid
    T: np.ndarray
    Theta: np.ndarray
    dhat: tuple = field(default_factory=tuple)

    def dhat_value(self, j: int) -> float:
        return float(self.dhat[j - 1])

    def leading(self, j: int, r=None) -> np.ndarray:
        """Asymptotic model d̂_j r^(2j-2) ln r at large r (j >= 1)."""
        r = self.grid.nodes if r is None else np.asarray(r, dtype=float)
        return self.dhat_value(j) * r ** (2 * j - 2) * np.log(r)

    def to_csv(self, path) -> Path:
        path = Path(path)
        header = ["r"] + [f"T{j}" for j in range(self.jmax + 1)] + \
                 [f"Theta{j}" for j in range(self.jmax + 1)]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i, r in enumerate(self.grid.nodes):
                row = [r] + list(self.T[:, i]) + list(self.Theta[:, i])
                writer.writerow([f"{v:.17g}" for v in row])
        return path


def build_Tj_table(jmax: int, grid: RadialGrid) -> TjTable:
    """Iterate T_{j+1} = -A0^{-1} T_j starting from T0 = r^2/(1+r^2)^2."""
    if jmax < 0:
        raise ParameterError("jmax must be >= 0")
    r = grid.nodes
    if jmax >= 2 and (2 * jmax - 2) * math.log10(r[-1]) + math.log10(math.log(r[-1]) + 1) > 290:
        raise RangeError(f"r^(2j-2) overflows at r = {r[-1]:g} for j = {jmax}")
    T = np.empty((jmax + 1, r.size))
    T[0] = eval_profile("T0", r)
    for j in range(jmax):
        T[j + 1] = -apply_A0_inverse(grid, T[j])
    if not np.all(np.isfinite(T)):
        raise RangeError("T_j table overflowed")
    Theta = np.empty_like(T)
    for j in range(jmax + 1):
        Theta[j] = (2 * j - 2) * T[j] - r * grid.derivative(T[j])
    T.setflags(write=False)
    Theta.setflags(write=False)
    dh = tuple(dhat_exact(j) for j in range(1, jmax + 1))
    return TjTable(jmax, grid, T, Theta, dh)
