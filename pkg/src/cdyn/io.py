"""Scenario configuration files, CSV trajectories and summary reports."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import CSV_DIAGNOSTICS, MechanicalSystem, Trajectory, state_diagnostics
from .errors import ContractError

SCENARIOS = ("pendulum", "differentiator", "bouncing-ball", "disk-pile")
INTEGRATORS = ("index3", "baumgarte", "ggl", "half-explicit", "shake", "moreau-jean")


@dataclass
class ScenarioConfig:
    """Everything one CLI run needs; unset fields fall back to scenario defaults."""

    scenario: str = "pendulum"
    integrator: Optional[str] = None
    dt: Optional[float] = None
    t_end: Optional[float] = None
    theta: float = 1.0
    mode: str = "linearized"
    solver: str = "pgs"
    tol: Optional[float] = None
    max_iter: Optional[int] = None
    r: Optional[float] = None
    relax: float = 1.0
    restitution: float = 0.0
    seed: int = 0
    output: Optional[str] = None
    stride: int = 1
    newton_tol: float = 1e-10
    baumgarte_alpha: Optional[float] = None
    baumgarte_beta: Optional[float] = None
    # physical parameters
    gamma: float = 9.81
    mass: float = 1.0
    alpha0: float = 0.05
    omega0: float = 0.0
    height: float = 1.0
    R: float = 1.0
    L: float = 1.0
    n_disks: int = 100
    radius: float = 1.0
    box_width: float = 25.0
    box_height: float = 40.0
    pack_width: float = 16.0
    contact_margin: Optional[float] = None
    activation_tol: float = 0.0
    disks: list = field(default_factory=list)

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ContractError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.integrator is not None and self.integrator not in INTEGRATORS:
            raise ContractError(f"unknown integrator {self.integrator!r}")
        for name in ("gamma", "mass", "height", "R", "L", "radius", "box_width",
                     "box_height", "pack_width"):
            if not getattr(self, name) > 0.0:
                raise ContractError(f"{name} must be positive")
        for name in ("dt", "t_end", "tol", "r"):
            val = getattr(self, name)
            if val is not None and not val > 0.0:
                raise ContractError(f"{name} must be positive")
        if self.stride < 1 or self.n_disks < 1:
            raise ContractError("stride and n_disks must be >= 1")
        if self.disks and len(self.disks) != self.n_disks:
            raise ContractError(f"{len(self.disks)} disk entries for n_disks = {self.n_disks}")
        return self


def _field_types():
    hints = {"Optional[float]": float, "Optional[int]": int, "Optional[str]": str,
             "float": float, "int": int, "str": str}
    return {f.name: hints.get(str(f.type)) for f in dataclasses.fields(ScenarioConfig)
            if f.name != "disks"}


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments) and repeated ``disk = x y`` entries."""
    types = _field_types()
    values = {}
    disks = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            if key == "disk":
                x, y = (float(s) for s in val.split())
                disks.append((x, y))
            elif key in types:
                values[key] = types[key](val)
            else:
                raise ContractError(f"config line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ContractError):
                raise
            raise ContractError(f"config line {lineno}: bad value {val!r} for {key}") from exc
    if disks:
        values["disks"] = disks
        values.setdefault("n_disks", len(disks))
    return values


def load_config(path) -> dict:
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise ContractError(f"cannot read config {path}: {exc}") from exc


def _fmt(x) -> str:
    return format(float(x), ".17g")


def csv_header(sys: MechanicalSystem):
    return (["t"] + [f"q_{i}" for i in range(sys.n_q)] + [f"v_{i}" for i in range(sys.n_q)]
            + [f"lambda_{i}" for i in range(sys.n_lambda)] + [f"p_{i}" for i in range(sys.n_u)]
            + list(CSV_DIAGNOSTICS))


def write_csv(path, sys: MechanicalSystem, traj: Trajectory):
    """One row per sample; floats with 17 significant digits."""
    diag = traj.diagnostics
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(csv_header(sys)) + "\n")
        for k, (t, st) in enumerate(zip(traj.times, traj.states)):
            cells = [_fmt(t)]
            cells += [_fmt(x) for x in st.q]
            cells += [_fmt(x) for x in st.v]
            cells += [_fmt(x) for x in (st.lam if st.lam.size == sys.n_lambda else np.zeros(sys.n_lambda))]
            cells += [_fmt(x) for x in (st.p if st.p.size == sys.n_u else np.zeros(sys.n_u))]
            cells += [str(int(diag[name][k])) if name == "iters" else _fmt(diag[name][k])
                      for name in CSV_DIAGNOSTICS]
            fh.write(",".join(cells) + "\n")


def read_csv(path):
    """Header and float matrix of a trajectory CSV."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def summarize(traj: Trajectory) -> dict:
    """Run summary; per-step observer series (if recorded) take precedence over samples."""
    d = {**traj.diagnostics, **traj.series}
    e_tot = traj.diagnostics["e_tot"]
    min_gap = d["min_gap"]
    finite_gap = min_gap[np.isfinite(min_gap)]
    return {
        "samples": len(traj),
        "t_final": float(traj.times[-1]),
        "max_drift": float(np.max(d["g_inf"])),
        "max_velocity_drift": float(np.max(d["gv_inf"])),
        "final_energy": float(e_tot[-1]) if np.isfinite(e_tot[-1])
        else float(traj.diagnostics["e_kin"][-1]),
        "worst_penetration": float(max(0.0, -finite_gap.min())) if finite_gap.size else 0.0,
        "total_solver_iterations": int(np.sum(d["iters"])),
    }


def format_report(summary: dict) -> str:
    return "".join(f"{k}: {_fmt(v) if isinstance(v, float) else v}\n" for k, v in summary.items())


def report_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.name + ".report.txt")


def _diag(name):
    return lambda sys, state: state_diagnostics(sys, state)[name]


def step_observers():
    """Per-step observers feeding :func:`summarize`."""
    return {name: _diag(name) for name in ("g_inf", "gv_inf", "min_gap", "iters")}
