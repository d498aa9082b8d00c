"""Finite-dimensional modulation systems and the resulting blow-up laws.

Stable mode integrates

    nu_tau/nu = beta (1/(2 ln nu) + (ln2 - gamma - 2 - ln beta)/(4 ln^2 nu)),
    beta_tau = 0,   mu_tau = -beta mu,   a_{n,tau} = alpha_n a_n (n >= 2),

with a_1 slaved to the compatibility condition.  Unstable mode (ell >= 2)
integrates nu_tau/nu = beta (1 - ell) + beta ell/(2 ln nu) with a_ell slaved to
a_ell/(4 nu^2) = -1 + 1/(2 ln nu).

Scales become astronomically small (nu ~ exp(-sqrt(tau/2)), mu ~ exp(-beta tau)),
so nu, mu, |a_n|, T - t and lambda are carried as logarithms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import (
    ConvergenceError,
    DomainError,
    FitError,
    InvalidTrajectoryError,
    ParameterError,
    SamplingError,
)
from .specialfun import EULER_GAMMA
from .spectral import compute_spectrum, predicted_alpha

LN2 = math.log(2.0)
# below this nu the spectral weights lose too much range for the solver
SPECTRAL_NU_FLOOR = 1e-20
STABLE_PREFACTOR = 2.0 * math.exp(-(2.0 + EULER_GAMMA) / 2.0)


def stable_prefactor(beta: float) -> float:
    """sqrt(2/beta) exp(-(2+gamma)/2), the limit of nu exp(sqrt(beta tau))."""
    return math.sqrt(2.0 / beta) * math.exp(-(2.0 + EULER_GAMMA) / 2.0)


def compatibility_rhs(nu: float, beta: float, mode: str = "stable") -> float:
    """Right side of the compatibility condition for a_1/(4 nu^2) (or a_ell)."""
    return _compat_log(math.log(nu), beta, mode)


def _compat_log(L: float, beta: float, mode: str) -> float:
    out = -1.0 + 1.0 / (2.0 * L)
    if mode == "stable":
        out += (LN2 - EULER_GAMMA - 1.0 - math.log(beta)) / (4.0 * L * L)
    return out


def beta_from_compatibility(nu: float, a1: float) -> float:
    """Solve the stable compatibility condition for beta given (nu, a1)."""
    L = math.log(nu)
    k = a1 / (4.0 * nu * nu) + 1.0 - 1.0 / (2.0 * L)
    return math.exp(LN2 - EULER_GAMMA - 1.0 - 4.0 * L * L * k)


@dataclass(frozen=True)
class ModulationState:
    tau: float
    nu: float
    beta: float
    a: tuple
    mu: float


def _mode_parts(mode: str):
    if mode == "stable":
        return "stable", 1
    if mode.startswith("unstable"):
        try:
            ell = int(mode.split("=")[-1].strip(")").split("(")[-1]) if mode != "unstable" else 2
        except ValueError as exc:
            raise ParameterError(f"bad mode {mode!r}") from exc
        if ell < 2:
            raise ParameterError("unstable modes need ell >= 2")
        return "unstable", ell
    raise ParameterError(f"unknown mode {mode!r}")


def mode_name(ell: Optional[int]) -> str:
    return "stable" if ell is None else f"unstable({ell})"


def _nu_rate(log_nu: float, beta: float, kind: str, ell: int) -> float:
    L = log_nu
    if kind == "stable":
        c = LN2 - EULER_GAMMA - 2.0 - math.log(beta)
        return beta * (1.0 / (2.0 * L) + c / (4.0 * L * L))
    return beta * (1.0 - ell) + beta * ell / (2.0 * L)


def rhs(state: ModulationState, mode: str = "stable") -> dict:
    """Time derivatives (nu_tau, beta_tau, a_{n,tau}, mu_tau) at ``state``."""
    kind, ell = _mode_parts(mode)
    if not state.nu < 1.0:
        raise DomainError("nu must be < 1 for the logarithmic terms")
    if not state.nu > 0.0:
        raise DomainError("nu must be > 0")
    if not 0.25 <= state.beta <= 2.0:
        raise ParameterError("beta must lie in [1/4, 2]")
    L = math.log(state.nu)
    rate = _nu_rate(L, state.beta, kind, ell)
    slaved = 1 if kind == "stable" else ell
    da = []
    for n, an in enumerate(state.a, start=1):
        if n == slaved:
            k = compatibility_rhs(state.nu, state.beta, kind)
            dk = -1.0 / (2.0 * L * L) * rate
            if kind == "stable":
                c1 = LN2 - EULER_GAMMA - 1.0 - math.log(state.beta)
                dk -= c1 / (2.0 * L ** 3) * rate
            da.append(4.0 * state.nu ** 2 * (2.0 * rate * k + dk))
        else:
            da.append(predicted_alpha(n, state.nu, state.beta) * an)
    return dict(nu=rate * state.nu, beta=0.0, a=tuple(da), mu=-state.beta * state.mu)


@dataclass(frozen=True, eq=False)
class ModulationTrajectory:
    """Samples of (tau, nu, beta, a_1..a_N, mu), stored in log form."""

    mode: str
    tau: np.ndarray
    log_nu: np.ndarray
    beta: np.ndarray
    log_mu: np.ndarray
    a_sign: np.ndarray          # (N, samples), entries in {-1, 0, 1}
    a_log: np.ndarray           # (N, samples), log|a_n| (-inf where a_n = 0)
    tolerance: float = 1e-10

    @property
    def size(self) -> int:
        return self.tau.size

    @property
    def nu(self) -> np.ndarray:
        return np.exp(self.log_nu)

    @property
    def mu(self) -> np.ndarray:
        return np.exp(self.log_mu)

    @property
    def a(self) -> np.ndarray:
        return self.a_sign * np.exp(self.a_log)

    def state(self, i: int) -> ModulationState:
        return ModulationState(float(self.tau[i]), float(self.nu[i]), float(self.beta[i]),
                               tuple(self.a[:, i]), float(self.mu[i]))

    @property
    def samples(self) -> list:
        return [self.state(i) for i in range(self.size)]

    def prefactor(self) -> np.ndarray:
        """nu exp(sqrt(beta tau)) in the stable mode (sqrt(tau/2) at beta = 1/2)."""
        return np.exp(self.log_nu + np.sqrt(self.beta * self.tau))

    def to_csv(self, path) -> Path:
        path = Path(path)
        N = self.a_sign.shape[0]
        header = ["tau", "nu", "beta", "mu"] + [f"a{n}" for n in range(1, N + 1)]
        a = self.a
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i in range(self.size):
                row = [self.tau[i], self.nu[i], self.beta[i], self.mu[i]] + list(a[:, i])
                writer.writerow([f"{float(v):.17g}" for v in row])
        return path


def initial_state(mode: str = "stable", tau0: float = 10.0, beta0: float = 0.5,
                  N: int = 3, nu0: Optional[float] = None, a_extra: Sequence[float] = (),
                  start: str = "prefactor") -> ModulationState:
    """Start on the compatibility manifold with mu0 = exp(-beta0 tau0).

    Stable mode: ``start="prefactor"`` takes nu0 = c0 exp(-sqrt(beta0 tau0))
    with c0 = sqrt(2/beta0) exp(-(2+gamma)/2), which cancels the
    O(tau^-1/2) transient of the prefactor; ``start="bare"`` takes
    |ln nu0| = sqrt(beta0 tau0).  Unstable default: nu0 = exp(-beta0 tau0).
    ``a_extra`` fills a_n for the non-slaved modes.
    """
    kind, ell = _mode_parts(mode)
    if start not in ("prefactor", "bare"):
        raise ParameterError(f"unknown start {start!r}")
    if nu0 is None:
        if kind == "stable":
            c0 = stable_prefactor(beta0) if start == "prefactor" else 1.0
            nu0 = c0 * math.exp(-math.sqrt(beta0 * tau0))
        else:
            nu0 = math.exp(-beta0 * tau0)
    slaved = 1 if kind == "stable" else ell
    if N < slaved:
        raise ParameterError(f"need N >= {slaved}")
    a = []
    extra = list(a_extra)
    for n in range(1, N + 1):
        if n == slaved:
            a.append(4.0 * nu0 ** 2 * compatibility_rhs(nu0, beta0, kind))
        else:
            a.append(extra.pop(0) if extra else 0.0)
    return ModulationState(tau0, nu0, beta0, tuple(a), math.exp(-beta0 * tau0))


def integrate(initial: ModulationState, mode: str = "stable", tau_end: float = 1e5,
              tolerance: float = 1e-10, samples_per_decade: int = 200) -> ModulationTrajectory:
    """Adaptive Dormand-Prince 5(4) integration of the reduced system.

    The state is (ln nu, ln mu, ln|a_n| for free modes); the slaved amplitude
    is reconstructed from the compatibility condition at every sample and
    beta is recomputed from it.
    """
    kind, ell = _mode_parts(mode)
    if not initial.nu < 0.2:
        raise ParameterError("initial nu must be < 0.2")
    if not tau_end > initial.tau:
        raise ParameterError("tau_end must exceed the initial tau")
    slaved = 1 if kind == "stable" else ell
    k0 = initial.a[slaved - 1] / (4.0 * initial.nu ** 2)
    if abs(k0 - compatibility_rhs(initial.nu, initial.beta, kind)) > 1e-12:
        raise ParameterError("initial state violates the compatibility condition")
    beta = initial.beta
    N = len(initial.a)
    free = [n for n in range(1, N + 1) if n != slaved]
    signs = np.array([np.sign(initial.a[n - 1]) for n in free])
    live = [i for i, s in enumerate(signs) if s != 0]

    def f(tau, y):
        log_nu = y[0]
        if log_nu >= 0.0:
            raise DomainError("nu reached 1")
        out = np.empty_like(y)
        out[0] = _nu_rate(log_nu, beta, kind, ell)
        out[1] = -beta
        nu = math.exp(log_nu) if log_nu > -700 else 0.0
        for j, i in enumerate(live):
            n = free[i]
            out[2 + j] = predicted_alpha(n, nu, beta) if nu > 0 else 2.0 * beta * (1.0 - n)
        return out

    y0 = [math.log(initial.nu), math.log(initial.mu)] + \
         [math.log(abs(initial.a[free[i] - 1])) for i in live]
    decades = math.log10(tau_end / initial.tau)
    n_samples = max(int(math.ceil(decades * samples_per_decade)) + 1, 8)
    t_eval = np.geomspace(initial.tau, tau_end, n_samples)
    t_eval[0], t_eval[-1] = initial.tau, tau_end
    sol = solve_ivp(f, (initial.tau, tau_end), y0, method="RK45", t_eval=t_eval,
                    rtol=1e-13, atol=tolerance)
    if not sol.success:
        raise ConvergenceError(f"modulation integration failed: {sol.message}")
    tau = sol.t
    log_nu = sol.y[0]
    log_mu = sol.y[1]
    a_sign = np.zeros((N, tau.size))
    a_log = np.full((N, tau.size), -np.inf)
    for j, i in enumerate(live):
        a_sign[free[i] - 1] = signs[i]
        a_log[free[i] - 1] = sol.y[2 + j]
    # slaved amplitude and beta recovered from the compatibility condition
    betas = np.empty(tau.size)
    for s in range(tau.size):
        nu = math.exp(log_nu[s])
        k = _compat_log(log_nu[s], beta, kind)
        a_sign[slaved - 1, s] = np.sign(k)
        a_log[slaved - 1, s] = math.log(4.0 * abs(k)) + 2.0 * log_nu[s]
        if kind == "stable" and nu > 0.0:
            a1 = 4.0 * nu * nu * k
            betas[s] = beta_from_compatibility(nu, a1) if a1 != 0.0 else beta
        else:
            betas[s] = beta
    for arr in (tau, log_nu, betas, log_mu, a_sign, a_log):
        arr.setflags(write=False)
    return ModulationTrajectory(mode_name(None if kind == "stable" else ell), tau, log_nu,
                                betas, log_mu, a_sign, a_log, tolerance)


def compatibility_residual(traj: ModulationTrajectory) -> np.ndarray:
    """a_slaved/(4 nu^2) minus the compatibility right side, per sample."""
    kind, ell = _mode_parts(traj.mode)
    slaved = 1 if kind == "stable" else ell
    out = np.empty(traj.size)
    for s in range(traj.size):
        k = traj.a_sign[slaved - 1, s] * math.exp(traj.a_log[slaved - 1, s] - 2 * traj.log_nu[s]) / 4.0
        out[s] = k - _compat_log(traj.log_nu[s], traj.beta[s], kind)
    return out


# ---------------------------------------------------------------------------
# residual identities
# ---------------------------------------------------------------------------

def _spectral_alpha_table(nu_values: np.ndarray, beta: float, N: int, nodes: int = 12):
    # spectral alpha_n at a few nu, interpolated in x = 1/|ln nu|
    ok = nu_values[(nu_values <= 0.1) & (nu_values >= SPECTRAL_NU_FLOOR)]
    if ok.size == 0:
        return None
    x_all = 1.0 / np.abs(np.log(ok))
    xs = np.linspace(x_all.min(), x_all.max(), nodes) if x_all.max() > x_all.min() else x_all[:1]
    alphas = []
    for x in xs:
        nu = math.exp(-1.0 / x)
        rep = compute_spectrum(nu, beta, N + 1, refined=False, points_per_decade=32)
        alphas.append(rep.alphas)
    alphas = np.array(alphas)
    if xs.size < 2:
        return lambda x: np.repeat(alphas, np.size(x), axis=0)
    return CubicSpline(xs, alphas, axis=0)


def mod_residuals(traj: ModulationTrajectory, alpha_source: str = "predicted") -> np.ndarray:
    """Mod_0 .. Mod_N per sample, shape (N + 1, samples).

    Mod_0 = 8 nu^2 (nu_tau/nu - beta) + a_{1,tau} - alpha_0 a_1 and
    Mod_n = -(a_{n,tau} - alpha_n a_n), with alpha_n the full eigenvalue
    (refined prediction for n = 0, 1 or the spectral solver).  Derivatives
    are second-order finite differences of the logarithms.  The spectral
    source covers SPECTRAL_NU_FLOOR <= nu <= 0.1 and leaves nan elsewhere.
    """
    if alpha_source not in ("predicted", "spectral"):
        raise ParameterError(f"unknown alpha source {alpha_source!r}")
    if traj.size < 5:
        raise SamplingError("need at least 5 samples for finite differences")
    tau = traj.tau
    if np.any(np.diff(tau) <= 0):
        raise SamplingError("tau must be strictly increasing")
    N = traj.a_sign.shape[0]
    nu = traj.nu
    beta = traj.beta
    rate = np.gradient(traj.log_nu, tau, edge_order=2)
    a = traj.a
    da = np.zeros_like(a)
    for n in range(N):
        if np.any(traj.a_sign[n] != 0):
            da[n] = a[n] * np.gradient(np.where(np.isfinite(traj.a_log[n]), traj.a_log[n], 0.0),
                                       tau, edge_order=2)
    alphas = np.empty((N + 1, traj.size))
    if alpha_source == "predicted":
        for s in range(traj.size):
            for n in range(N + 1):
                alphas[n, s] = predicted_alpha(n, nu[s], beta[s], refined=n <= 1)
    else:
        table = _spectral_alpha_table(nu, float(np.median(beta)), N)
        alphas[:] = np.nan
        if table is not None:
            mask = (nu <= 0.1) & (nu >= SPECTRAL_NU_FLOOR)
            alphas[:, mask] = np.asarray(table(1.0 / np.abs(np.log(nu[mask])))).T
    out = np.empty((N + 1, traj.size))
    a1 = a[0] if N >= 1 else np.zeros(traj.size)
    da1 = da[0] if N >= 1 else np.zeros(traj.size)
    out[0] = 8.0 * nu ** 2 * (rate - beta) + da1 - alphas[0] * a1
    for n in range(1, N + 1):
        out[n] = -(da[n - 1] - alphas[n] * a[n - 1])
    return out


# ---------------------------------------------------------------------------
# physical time and laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PhysicalLaw:
    """Physical-time image of a trajectory; T - t and lambda kept as logs."""

    mode: str
    T: float
    tau: np.ndarray
    t: np.ndarray
    log_T_minus_t: np.ndarray
    log_mu: np.ndarray
    log_nu: np.ndarray
    beta: np.ndarray

    @property
    def log_lambda(self) -> np.ndarray:
        return self.log_mu + self.log_nu

    @property
    def prefactor(self) -> np.ndarray:
        return np.exp(self.log_nu + np.sqrt(self.beta * self.tau))

    def log_law(self) -> np.ndarray:
        """Logarithm of the predicted law without its unknown constant (unstable) or with it (stable)."""
        x = self.log_T_minus_t
        kind, ell = _mode_parts(self.mode)
        if kind == "stable":
            return math.log(STABLE_PREFACTOR) + 0.5 * x - np.sqrt(np.abs(x) / 2.0)
        return 0.5 * ell * x - ell / (2.0 * (ell - 1)) * np.log(np.abs(x))

    def lambda_over_law(self) -> np.ndarray:
        return np.exp(self.log_lambda - self.log_law())

    def to_csv(self, path) -> Path:
        path = Path(path)
        ratio = self.lambda_over_law()
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "T_minus_t", "lambda", "lambda_over_law"])
            for i in range(self.tau.size):
                row = [self.t[i], math.exp(self.log_T_minus_t[i]), math.exp(self.log_lambda[i]), ratio[i]]
                writer.writerow([f"{float(v):.17g}" for v in row])
        return path


def _log_segment_integral(la: np.ndarray, lb: np.ndarray, h: np.ndarray) -> np.ndarray:
    # log of int_0^h exp(la + (lb - la) s/h) ds, exact for log-linear integrands
    slope = lb - la
    small = np.abs(slope) < 1e-8
    safe = np.where(small, 1.0, slope)
    big = np.maximum(la, lb)
    val = np.where(small, np.log(h) + 0.5 * (la + lb),
                   np.log(h) + big + np.log(np.abs(np.expm1(-np.abs(safe)))) - np.log(np.abs(safe)))
    return val


def to_physical(traj: ModulationTrajectory, t0: float = 0.0) -> PhysicalLaw:
    """Map tau to physical time with dt/dtau = mu^2 and the tail mu^2/(2 beta).

    T - t(tau_i) is accumulated backward in log space from segment integrals
    of mu^2 that are exact when ln mu is linear in tau (constant beta).
    """
    if np.any(np.diff(traj.log_mu) >= 0.0):
        raise InvalidTrajectoryError("mu must decrease along the trajectory")
    if 2.0 * (traj.log_mu[-1] - traj.log_mu[0]) > math.log(1e-12):
        raise InvalidTrajectoryError("trajectory too short: mu(end)^2 > 1e-12 mu(0)^2")
    l2 = 2.0 * traj.log_mu
    seg = _log_segment_integral(l2[:-1], l2[1:], np.diff(traj.tau))
    n = traj.size
    log_rest = np.empty(n)
    log_rest[-1] = l2[-1] - math.log(2.0 * traj.beta[-1])
    for i in range(n - 2, -1, -1):
        log_rest[i] = np.logaddexp(log_rest[i + 1], seg[i])
    T = t0 + math.exp(log_rest[0])
    t = T - np.exp(log_rest)
    t[0] = t0
    return PhysicalLaw(traj.mode, T, traj.tau.copy(), t, log_rest, traj.log_mu.copy(),
                       traj.log_nu.copy(), traj.beta.copy())


@dataclass(frozen=True)
class PowerFit:
    C: float
    p: float
    q: float
    residual: float
    samples: int


def fit_power_law(law: PhysicalLaw, window: Optional[tuple] = None,
                  log_T_minus_t=None, log_lambda=None) -> PowerFit:
    """Least squares for ln lambda = ln C + p ln(T-t) + q ln|ln(T-t)|.

    ``window`` = (lo, hi) restricts to lo <= |ln(T-t)| <= hi.  Explicit log
    arrays may be passed instead of a law (synthetic data).
    """
    x = law.log_T_minus_t if log_T_minus_t is None else np.asarray(log_T_minus_t, dtype=float)
    y = law.log_lambda if log_lambda is None else np.asarray(log_lambda, dtype=float)
    if window is not None:
        sel = (np.abs(x) >= window[0]) & (np.abs(x) <= window[1])
        x, y = x[sel], y[sel]
    if x.size < 30:
        raise FitError(f"need at least 30 samples, got {x.size}")
    if np.any(x >= 0.0):
        raise FitError("T - t must be below 1 for the log-log model")
    span = (x.max() - x.min()) / math.log(10.0)
    if span < 6.0:
        raise FitError(f"samples span {span:.2f} decades of T - t, need 6")
    design = np.column_stack([np.ones_like(x), x, np.log(np.abs(x))])
    coef, res, rank, sv = np.linalg.lstsq(design, y, rcond=None)
    if rank < 3 or sv[-1] / sv[0] < 1e-12:
        raise FitError("degenerate design matrix")
    resid = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return PowerFit(float(math.exp(coef[0])), float(coef[1]), float(coef[2]), resid, int(x.size))
