"""Command-line front end: spectrum, modulate, simulate, verify, tables.

Parameters are given as inline ``key=value`` pairs or a ``--config`` file of
``key = value`` lines (inline pairs win).  Exit codes: 0 success, 1 failed
checks, 2 parameter error, 3 convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import acceptance, modulation, pde, spectral
from .errors import ConvergenceError, KSError, ParameterError

REQUIRED = object()

DEFAULTS = {
    "spectrum": dict(nu=[1e-2, 1e-3, 1e-4], beta=REQUIRED, n=4, points_per_decade=64.0,
                     refined=True, boundary="regular-dirichlet", gap_trials=100, max_scaled=5.0),
    "modulate": dict(mode="stable", tau0=10.0, tau_end=1e5, beta0=0.5, N=3, tolerance=1e-10,
                     samples_per_decade=200, start="prefactor", fit_min=100.0, fit_max=math.inf),
    "simulate": {f: getattr(pde.RunConfig(), f) for f in pde.RunConfig.__dataclass_fields__},
    "verify": dict(items=[float(i) for i in sorted(acceptance.CHECKS)]),
    "tables": dict(nu=[1e-2, 1e-3, 1e-4], beta=0.5, n=4, ells=[2.0, 3.0, 4.0]),
}
DEFAULTS["simulate"]["project"] = True

USAGE = """usage: ksblowup <command> [key=value ...] [--config PATH] [--out DIR] [--seed N]

commands and keys (defaults in brackets):
""" + "\n".join(
    f"  {cmd}: " + ", ".join(f"{k}[{'required' if v is REQUIRED else _v}]"
                             for k, v in d.items() for _v in [v if not isinstance(v, list) else ",".join(f"{x:g}" for x in v)])
    for cmd, d in DEFAULTS.items())


def _parse_value(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, list):
            return [float(x) for x in text.split(",") if x.strip()]
        if isinstance(default, int):
            return int(float(text)) if float(text).is_integer() else int(text)
        if isinstance(default, float) or default is REQUIRED:
            return float(text)
        return text
    except ValueError as exc:
        raise ParameterError(f"bad value for {key}: {text!r}") from exc


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(repr(float(x)) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    command: str
    parameters: dict = field(default_factory=dict)
    output_dir: Path = Path(".")
    seed: int = 0

    @classmethod
    def build(cls, command: str, pairs: dict, output_dir=".", seed: int = 0) -> "RunConfig":
        if command not in DEFAULTS:
            raise ParameterError(f"unknown command {command!r}")
        defaults = DEFAULTS[command]
        params = {}
        for key, text in pairs.items():
            if key not in defaults:
                raise ParameterError(f"unknown key {key!r} for {command}")
            params[key] = text if not isinstance(text, str) else _parse_value(key, text, defaults[key])
        for key, val in defaults.items():
            if key not in params:
                if val is REQUIRED:
                    raise ParameterError(f"missing required key {key!r} for {command}")
                params[key] = list(val) if isinstance(val, list) else val
        return cls(command, params, Path(output_dir), int(seed))

    def to_text(self) -> str:
        lines = [f"command = {self.command}", f"seed = {self.seed}"]
        lines += [f"{k} = {_format_value(v)}" for k, v in self.parameters.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, output_dir=".") -> "RunConfig":
        pairs = parse_config_text(text)
        command = pairs.pop("command", None)
        if command is None:
            raise ParameterError("config text lacks a command line")
        seed = int(pairs.pop("seed", 0))
        return cls.build(command, pairs, output_dir, seed)


def parse_config_text(text: str) -> dict:
    pairs = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"expected key = value, got {raw!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        pairs[key] = val
    return pairs


def _parse_pairs(items) -> dict:
    pairs = {}
    for item in items:
        if "=" not in item:
            raise ParameterError(f"expected key=value, got {item!r}")
        key, val = item.split("=", 1)
        pairs[key.strip()] = val
    return pairs


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else f"{float(v):.17g}" for v in row])
    return path


def cmd_spectrum(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    p = cfg.parameters
    ok = True
    for nu in p["nu"]:
        try:
            grid = spectral.spectral_grid(nu, p["beta"], p["points_per_decade"])
            form = spectral.assemble_operator("Azeta", grid, nu=nu, beta=p["beta"], boundary=p["boundary"])
            rep = spectral.compute_spectrum(nu, p["beta"], p["n"], refined=p["refined"],
                                            boundary=p["boundary"], grid=grid)
        except ConvergenceError as exc:
            raise ConvergenceError(f"Azeta at nu={nu:g}: {exc}") from exc
        stem = f"spectrum_nu{nu:g}"
        rep.to_csv(cfg.output_dir / f"{stem}.csv")
        rep.to_json(cfg.output_dir / f"{stem}.json")
        worst = max(rep.residual_scaled)
        gap_ok = True
        if p["gap_trials"] > 0 and p["n"] < 12:
            extra = spectral.solve_top_spectrum(form, p["n"] + 1)
            q = spectral.spectral_gap_check(form, extra[:p["n"]], trials=p["gap_trials"], seed=cfg.seed)
            gap_ok = q <= extra[-1].alpha + 1e-6
        good = worst <= p["max_scaled"] and gap_ok
        ok &= good
        print(f"nu={nu:g} alphas={np.array2string(rep.alphas, precision=7)} "
              f"max residual_scaled={worst:.3f} gap={'ok' if gap_ok else 'VIOLATED'}", file=out)
    return 0 if ok else 1


def cmd_modulate(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    p = cfg.parameters
    mode = p["mode"]
    if mode.startswith("unstable") and "(" not in mode:
        raise ParameterError("unstable mode needs ell, e.g. mode=unstable(2)")
    kind, ell = modulation._mode_parts(mode)
    N = max(p["N"], ell)
    init = modulation.initial_state(mode, tau0=p["tau0"], beta0=p["beta0"], N=N, start=p["start"])
    traj = modulation.integrate(init, mode, p["tau_end"], p["tolerance"], p["samples_per_decade"])
    law = modulation.to_physical(traj)
    traj.to_csv(cfg.output_dir / "trajectory.csv")
    law.to_csv(cfg.output_dir / "law.csv")
    if kind == "stable":
        pref = traj.prefactor()
        print(f"stable: nu*exp(sqrt(beta*tau)) at tau={traj.tau[-1]:g}: {pref[-1]:.6f} "
              f"(limit {modulation.stable_prefactor(p['beta0']):.6f})", file=out)
    else:
        fit = modulation.fit_power_law(law, window=(p["fit_min"], p["fit_max"]))
        print(f"unstable({ell}): p={fit.p:.4f} (law {ell / 2:g}), q={fit.q:.4f} "
              f"(law {-ell / (2 * (ell - 1)):.4f})", file=out)
    return 0


def cmd_simulate(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    p = dict(cfg.parameters)
    project = p.pop("project")
    res = pde.run(pde.RunConfig(**p), project=project)
    res.series.to_csv(cfg.output_dir / "scale_series.csv")
    for k, snap in enumerate(res.snapshots):
        snap.to_csv(cfg.output_dir / f"snapshot_{k:02d}.csv")
    _write_csv(cfg.output_dir / "projections.csv",
               ["t", "mu", "nu", "me_norm", "me_over_nu2"] + [f"a{n}" for n in range(1, p["n_modes"] + 1)]
               + ["basis"],
               [[q.t, q.mu, q.nu, q.me_norm, q.me_norm / q.nu ** 2, *q.a, q.basis] for q in res.projections])
    s = res.series
    print(f"stop: {s.status} at t={s.t[-1]:.12g}, u0={s.u0[-1]:.4g}, lambda={s.lam[-1]:.4g}, "
          f"T_est={s.T_est:.12g}, eta={s.eta:.4g}, steps={res.steps}", file=out)
    return 0


def cmd_verify(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    items = [int(i) for i in cfg.parameters["items"]]
    unknown = [i for i in items if i not in acceptance.CHECKS]
    if unknown:
        raise ParameterError(f"unknown acceptance items {unknown}")
    failed = []
    for i in items:
        res = acceptance.CHECKS[i]()
        print(res.line(), file=out, flush=True)
        if not res.passed:
            failed.append(i)
    if failed:
        print(f"failed items: {', '.join(map(str, failed))}", file=out)
        return 1
    print("all items passed", file=out)
    return 0


def cmd_tables(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    p = cfg.parameters
    rows = []
    for nu in p["nu"]:
        rep = spectral.compute_spectrum(nu, p["beta"], p["n"])
        L = abs(math.log(nu))
        for n, (a, lead, ref) in enumerate(zip(rep.alphas, rep.predicted_leading, rep.predicted_refined)):
            rows.append([nu, n, a, lead, "" if ref is None else f"{ref:.17g}",
                         abs(a - lead) / (2 * p["beta"]) * L * L,
                         "" if ref is None else f"{abs(a - ref) / (2 * p['beta']) * L ** 3:.17g}"])
    _write_csv(cfg.output_dir / "eigen_table.csv",
               ["nu", "n", "alpha_computed", "alpha_leading", "alpha_refined",
                "leading_residual_L2", "refined_residual_L3"], rows)
    laws = []
    traj = modulation.integrate(modulation.initial_state("stable", beta0=0.5), "stable", 1e5)
    laws.append(["stable", "", 0.5, "", traj.prefactor()[-1], modulation.STABLE_PREFACTOR])
    for ell in p["ells"]:
        ell = int(ell)
        fit = acceptance.unstable_fit(ell)
        laws.append([f"unstable({ell})", fit.p, ell / 2, fit.q, -ell / (2 * (ell - 1)), ""])
    _write_csv(cfg.output_dir / "law_table.csv",
               ["mode", "p_fit", "p_law", "q_fit", "q_law_or_prefactor", "prefactor_limit"],
               laws)
    print(f"wrote eigen_table.csv ({len(rows)} rows) and law_table.csv ({len(laws)} rows)", file=out)
    return 0


COMMANDS = dict(spectrum=cmd_spectrum, modulate=cmd_modulate, simulate=cmd_simulate,
                verify=cmd_verify, tables=cmd_tables)


def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(prog="ksblowup", add_help=True, usage=USAGE[len("usage: "):])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("pairs", nargs="*")
    parser.add_argument("--config")
    parser.add_argument("--out", default=".")
    parser.add_argument("--seed", type=int, default=0)
    try:
        args = parser.parse_intermixed_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        pairs = {}
        if args.config:
            pairs.update(parse_config_text(Path(args.config).read_text()))
            pairs.pop("command", None)
            seed = pairs.pop("seed", None)
            if seed is not None and args.seed == 0:
                args.seed = int(seed)
        pairs.update(_parse_pairs(args.pairs))
        cfg = RunConfig.build(args.command, pairs, args.out, args.seed)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        (cfg.output_dir / f"{args.command}.config").write_text(cfg.to_text())
        return COMMANDS[args.command](cfg)
    except ParameterError as exc:
        print(f"error: {exc}\n\n{USAGE}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 3
    except KSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
