"""
Time stepping by per-step Picard iteration.

Within a step the nonlinear couplings are frozen at the previous iterate
(U, Phi) and the linear blocks are solved in the order mu -> psi -> phi -> u.
At delta = 0 the first three collapse into the coupled Cahn-Hilliard block.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .grid import (
    WALLS,
    ChannelGrid,
    FloatArray,
    VectorField,
    WallSide,
    d2dx,
    ddx,
    ddy,
    dirichlet_energy,
    integrate,
    laplacian,
    mean,
    normal_deriv,
)
from .linsolve import (
    CHSources,
    advection,
    boundary_heat_step,
    ch_coupled_step,
    helmholtz_neumann,
    interior_heat_step,
    momentum_step,
)
from .physics import (
    EnergyReport,
    PhysParams,
    bulk_force,
    chemical_potential,
    energy_report,
    wall_energy_d,
)

logger = logging.getLogger(__name__)


@dataclass
class SimState:
    grid: ChannelGrid
    t: float
    u: VectorField
    phi: FloatArray
    mu: FloatArray
    psi_bottom: FloatArray
    psi_top: FloatArray
    params: PhysParams
    step: int = 0

    def copy(self) -> "SimState":
        return replace(
            self,
            u=VectorField(self.u.u1.copy(), self.u.u2.copy()),
            phi=self.phi.copy(),
            mu=self.mu.copy(),
            psi_bottom=self.psi_bottom.copy(),
            psi_top=self.psi_top.copy(),
        )


@dataclass
class Sources:
    """Additive manufactured sources, evaluated at the new time level."""

    momentum: VectorField | None = None
    slip_bottom: FloatArray | None = None
    slip_top: FloatArray | None = None
    phase: FloatArray | None = None
    chem: FloatArray | None = None
    relax_bottom: FloatArray | None = None
    relax_top: FloatArray | None = None


Forcing = Callable[[ChannelGrid, float], Sources]

NORM_SPECS = ("l2u+h1phi", "l2")


@dataclass(frozen=True)
class StepConfig:
    dt: float
    picard_tol: float = 1e-10
    picard_max: int = 50
    norm_spec: str = "l2u+h1phi"
    solve_flow: bool = True
    forcing: Forcing | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError("dt must be > 0")
        if not self.picard_tol > 0.0:
            raise ValueError("picard_tol must be > 0")
        if self.picard_max < 1:
            raise ValueError("picard_max must be >= 1")
        if self.norm_spec not in NORM_SPECS:
            raise ValueError(f"norm_spec must be one of {NORM_SPECS}")


@dataclass
class PicardReport:
    iterations: int
    residuals: list[float]
    converged: bool

    @property
    def contraction_ratios(self) -> list[float]:
        r = self.residuals
        return [r[i + 1] / r[i] for i in range(len(r) - 1) if r[i] > 0.0]


class StepFailure(RuntimeError):
    def __init__(self, step: int, report: PicardReport) -> None:
        super().__init__(
            f"Picard iteration did not converge at step {step} "
            f"(last residual {report.residuals[-1]:.3e} after {report.iterations} iterations)"
        )
        self.step = step
        self.report = report


# --- initial data -----------------------------------------------------------

def _bump_sum(g: ChannelGrid, left: FloatArray, right: FloatArray, slope: FloatArray | float, c: float) -> FloatArray:
    """Periodic phase field: +1 between ``left`` and ``right`` (per y), -1 elsewhere."""
    X = g.mesh[0]
    phi = -np.ones(g.shape)
    for n in range(-3, 4):
        s = n * g.Lx
        phi += np.tanh(slope * (X - left - s) / c) - np.tanh(slope * (X - right - s) / c)
    return phi


@dataclass(frozen=True)
class FlatInterface:
    x0: float | None = None
    width: float = 1.0


@dataclass(frozen=True)
class TiltedInterface:
    """Two straight interfaces meeting the bottom wall at ``angle`` degrees inside the phi > 0 phase."""

    angle: float = 60.0
    x0: float | None = None
    width: float = 1.0


@dataclass(frozen=True)
class PerturbedInterface:
    amplitude: float = 0.2
    mode: int = 1
    x0: float | None = None
    width: float = 1.0


@dataclass(frozen=True)
class ShearFlow:
    amplitude: float = 0.1
    x0: float | None = None
    width: float = 1.0


@dataclass(frozen=True)
class Equilibrium:
    value: float = 1.0


ICKind = Union[FlatInterface, TiltedInterface, PerturbedInterface, ShearFlow, Equilibrium]


def build_initial(g: ChannelGrid, kind: ICKind) -> tuple[VectorField, FloatArray]:
    """
    Initial velocity and phase field.

    Interfaces come in periodic pairs: the phi > 0 band starts at ``x0``
    (default Lx/4) and has length Lx/2, so straight pairs have zero mean.
    Profiles are ``tanh(distance / (sqrt(2) * width))``.
    """
    zero = np.zeros(g.shape)
    if isinstance(kind, Equilibrium):
        if abs(kind.value) != 1.0:
            raise ValueError("equilibrium value must be +1 or -1")
        return VectorField(zero, zero.copy()), np.full(g.shape, float(kind.value))
    if kind.width <= 0.0:
        raise ValueError("width must be > 0")
    x0 = g.Lx / 4.0 if kind.x0 is None else float(kind.x0)
    c = math.sqrt(2.0) * kind.width
    Y = g.mesh[1]
    if isinstance(kind, TiltedInterface):
        if not 0.0 < kind.angle < 180.0:
            raise ValueError("angle must lie in (0, 180)")
        th = math.radians(kind.angle)
        shift = (Y + 1.0) / math.tan(th)
        if np.max(np.abs(2.0 * shift)) >= g.Lx / 2.0:
            raise ValueError("angle too shallow for the channel period")
        phi = _bump_sum(g, x0 + shift, x0 + g.Lx / 2.0 - shift, math.sin(th), c)
        return VectorField(zero, zero.copy()), phi
    if isinstance(kind, PerturbedInterface):
        if kind.mode < 1:
            raise ValueError("mode must be >= 1")
        xs = x0 + kind.amplitude * np.cos(kind.mode * np.pi * (Y + 1.0) / 2.0)
        phi = _bump_sum(g, xs, xs + g.Lx / 2.0, 1.0, c)
        return VectorField(zero, zero.copy()), phi
    phi = _bump_sum(g, x0, x0 + g.Lx / 2.0, 1.0, c)
    if isinstance(kind, ShearFlow):
        return VectorField(kind.amplitude * np.sin(np.pi * Y), zero), phi
    if isinstance(kind, FlatInterface):
        return VectorField(zero, zero.copy()), phi
    raise TypeError(f"unknown initial condition {kind!r}")


def init_mu_delta(g: ChannelGrid, u0: VectorField, phi0: FloatArray, delta: float, mobility: float = 1.0) -> FloatArray:
    """Initial chemical potential of the regularized problem (Helmholtz solve)."""
    if not delta > 0.0:
        raise ValueError("delta must be > 0")
    mu0 = -laplacian(g, phi0) + bulk_force(phi0)
    rhs = mu0 - delta * advection(g, u0, phi0) + delta**2 * d2dx(g, phi0)
    return helmholtz_neumann(g, delta * mobility, rhs)


def make_state(g: ChannelGrid, u0: VectorField, phi0: FloatArray, params: PhysParams, t: float = 0.0) -> SimState:
    phi0 = np.array(phi0, dtype=np.float64)
    if params.delta > 0.0:
        mu = init_mu_delta(g, u0, phi0, params.delta, params.mobility)
    else:
        mu = chemical_potential(g, phi0, params)
    return SimState(
        grid=g,
        t=float(t),
        u=VectorField(np.array(u0.u1, dtype=np.float64), np.array(u0.u2, dtype=np.float64)),
        phi=phi0,
        mu=mu,
        psi_bottom=phi0[:, 0].copy(),
        psi_top=phi0[:, -1].copy(),
        params=params,
    )


# --- Picard step ------------------------------------------------------------

def _convective(g: ChannelGrid, U: VectorField) -> VectorField:
    d1x, d1y = ddx(g, U.u1), ddy(g, U.u1)
    d2x, d2y = ddx(g, U.u2), ddy(g, U.u2)
    return VectorField(U.u1 * d1x + U.u2 * d1y, U.u1 * d2x + U.u2 * d2y)


def composite_norm(g: ChannelGrid, du: VectorField, dphi: FloatArray, spec: str) -> float:
    s = integrate(g, du.u1**2 + du.u2**2) + integrate(g, dphi**2)
    if spec == "l2u+h1phi":
        s += dirichlet_energy(g, dphi)
    return math.sqrt(max(s, 0.0))


def picard_step(state: SimState, cfg: StepConfig) -> tuple[SimState, PicardReport]:
    """
    Advance one step; on non-convergence the input state is returned unchanged.
    """
    g, p = state.grid, state.params
    dt = cfg.dt
    t1 = state.t + dt
    src = cfg.forcing(g, t1) if cfg.forcing is not None else None
    if src is not None and p.delta > 0.0:
        raise ValueError("manufactured sources are supported on the delta = 0 path only")
    ch_src = None
    if src is not None:
        ch_src = CHSources(src.phase, src.chem, src.relax_bottom, src.relax_top)

    U, Phi = state.u, state.phi
    residuals: list[float] = []
    converged = False
    for it in range(1, cfg.picard_max + 1):
        if p.delta == 0.0:
            phi, mu, q_b, q_t = ch_coupled_step(g, state.phi, dt, U, Phi, p, ch_src, return_flux=True)
            L_b = q_b + wall_energy_d(Phi[:, 0], p.a)
            L_t = q_t + wall_energy_d(Phi[:, -1], p.a)
            psi_b, psi_t = phi[:, 0].copy(), phi[:, -1].copy()
        else:
            d = p.delta
            G1 = -laplacian(g, Phi) + bulk_force(Phi) + d**2 * d2dx(g, Phi) - d * advection(g, U, Phi)
            mu = helmholtz_neumann(g, d * p.mobility, G1)
            L_b = normal_deriv(g, Phi, WallSide.BOTTOM) + wall_energy_d(Phi[:, 0], p.a)
            L_t = normal_deriv(g, Phi, WallSide.TOP) + wall_energy_d(Phi[:, -1], p.a)
            G2_b = -U.u1[:, 0] * ddx(g, Phi[:, 0]) - p.relax * L_b
            G2_t = -U.u1[:, -1] * ddx(g, Phi[:, -1]) - p.relax * L_t
            psi_b = boundary_heat_step(g, state.psi_bottom, d, dt, G2_b)
            psi_t = boundary_heat_step(g, state.psi_top, d, dt, G2_t)
            phi = interior_heat_step(g, state.phi, d, dt, mu - bulk_force(Phi), psi_b, psi_t)
            phi[:, 0] = psi_b
            phi[:, -1] = psi_t
        if cfg.solve_flow:
            conv = _convective(g, U)
            G4 = VectorField(-conv.u1 + mu * ddx(g, Phi), -conv.u2 + mu * ddy(g, Phi))
            g4_b = L_b * ddx(g, Phi[:, 0])
            g4_t = L_t * ddx(g, Phi[:, -1])
            if src is not None:
                if src.momentum is not None:
                    G4 = VectorField(G4.u1 + src.momentum.u1, G4.u2 + src.momentum.u2)
                if src.slip_bottom is not None:
                    g4_b = g4_b + src.slip_bottom
                if src.slip_top is not None:
                    g4_t = g4_t + src.slip_top
            u = momentum_step(g, state.u, dt, G4, g4_b, g4_t, p)
        else:
            u = state.u
        diff = composite_norm(g, VectorField(u.u1 - U.u1, u.u2 - U.u2), phi - Phi, cfg.norm_spec)
        size = composite_norm(g, u, phi, cfg.norm_spec)
        res = diff / size if size > 0.0 else diff
        residuals.append(res)
        U, Phi = u, phi
        if not math.isfinite(res):
            break
        if res <= cfg.picard_tol:
            converged = True
            break

    report = PicardReport(iterations=len(residuals), residuals=residuals, converged=converged)
    if not converged:
        return state, report
    new = SimState(
        grid=g,
        t=t1,
        u=VectorField(U.u1, U.u2) if cfg.solve_flow else VectorField(state.u.u1.copy(), state.u.u2.copy()),
        phi=Phi,
        mu=mu,
        psi_bottom=psi_b,
        psi_top=psi_t,
        params=p,
        step=state.step + 1,
    )
    return new, report


# --- driver -----------------------------------------------------------------

@dataclass
class StepEvent:
    step: int
    state: SimState
    energy: EnergyReport
    mass_mean: float
    law_residual: float
    picard: PicardReport


Sink = Callable[[StepEvent], None]


def advance(
    state: SimState,
    n_steps: int,
    cfg: StepConfig,
    sinks: Iterable[Sink] = (),
) -> SimState:
    """Run ``n_steps`` accepted steps; raises :class:`StepFailure` on the first failed one."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    sinks = list(sinks)
    g = state.grid
    e_prev = energy_report(g, state)
    for _ in range(n_steps):
        new, rep = picard_step(state, cfg)
        if not rep.converged:
            raise StepFailure(state.step + 1, rep)
        e_new = energy_report(g, new)
        law = (e_new.total - e_prev.total) / cfg.dt + e_new.dissipation
        ev = StepEvent(new.step, new, e_new, mean(g, new.phi), law, rep)
        for sink in sinks:
            sink(ev)
        state, e_prev = new, e_new
    return state


class Trajectory:
    """Sink collecting every event in memory."""

    def __init__(self) -> None:
        self.events: list[StepEvent] = []

    def __call__(self, ev: StepEvent) -> None:
        self.events.append(ev)


# --- delta continuation -----------------------------------------------------

@dataclass
class ContinuationReport:
    deltas: list[float]
    states: list[SimState]
    cauchy_phi: list[float]
    cauchy_u: list[float]
    native: SimState | None = None
    native_phi: list[float] = field(default_factory=list)
    native_u: list[float] = field(default_factory=list)


def _l2(g: ChannelGrid, F: FloatArray) -> float:
    return math.sqrt(integrate(g, F**2))


def _l2u(g: ChannelGrid, u: VectorField, v: VectorField) -> float:
    return math.sqrt(integrate(g, (u.u1 - v.u1) ** 2 + (u.u2 - v.u2) ** 2))


def delta_continuation(
    initial: SimState,
    cfg: StepConfig,
    deltas: Sequence[float],
    horizon: float,
    native: bool = True,
) -> ContinuationReport:
    """
    Run the same initial data to ``horizon`` for each delta of a decreasing ladder.

    ``initial.params.delta`` is overridden per run; with ``native`` the delta = 0
    scheme is run as well and every ladder member is compared against it.
    """
    ds = [float(d) for d in deltas]
    if len(ds) < 2 or any(d <= 0.0 for d in ds) or any(b >= a for a, b in zip(ds, ds[1:])):
        raise ValueError("delta ladder must be strictly decreasing and positive")
    n = int(round(horizon / cfg.dt))
    if n < 1 or abs(n * cfg.dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be a positive multiple of dt")
    g = initial.grid

    def run(delta: float) -> SimState:
        p = replace(initial.params, delta=delta)
        s0 = make_state(g, initial.u, initial.phi, p, initial.t)
        logger.info("continuation run delta=%g", delta)
        return advance(s0, n, cfg)

    states = [run(d) for d in ds]
    cp = [_l2(g, a.phi - b.phi) for a, b in zip(states, states[1:])]
    cu = [_l2u(g, a.u, b.u) for a, b in zip(states, states[1:])]
    rep = ContinuationReport(ds, states, cp, cu)
    if native:
        s0 = run(0.0)
        rep.native = s0
        rep.native_phi = [_l2(g, s.phi - s0.phi) for s in states]
        rep.native_u = [_l2u(g, s.u, s0.u) for s in states]
    return rep
