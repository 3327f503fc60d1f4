"""Verification harness: energy audit, conservation, wall angles and MMS studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.integrate import quad

from .grid import WALLS, ChannelGrid, FloatArray, VectorField, WallSide, divergence, make_grid, mean
from .linsolve import helmholtz_neumann, interior_heat_step, momentum_step
from .physics import EnergyReport, PhysParams, boundary_residual, wall_energy_d


def interface_tension() -> float:
    """Surface tension of the 1D profile tanh(x/sqrt 2): integral of phi'(x)^2."""
    def dphi2(x: float) -> float:
        return ((1.0 - math.tanh(x / math.sqrt(2.0)) ** 2) / math.sqrt(2.0)) ** 2

    val, _ = quad(dphi2, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-13)
    return val


def young_amplitude(theta_deg: float) -> float:
    """Wall-energy amplitude a giving static angle theta via cos(theta) = 2a / gamma."""
    return 0.5 * interface_tension() * math.cos(math.radians(theta_deg))


def _crossings(v: FloatArray) -> list[tuple[float, int]]:
    """Periodic zero crossings of a sampled line as (fractional index, direction)."""
    n = v.size
    out = []
    pos = v >= 0.0
    for i in range(n):
        j = (i + 1) % n
        if pos[i] != pos[j]:
            frac = v[i] / (v[i] - v[j])
            out.append((i + frac, 1 if v[j] > v[i] else -1))
    return out


def contact_angle(g: ChannelGrid, phi: FloatArray, wall: WallSide, reference: str = "phase") -> list[float]:
    """
    Angles (degrees) between the phi = 0 level set and the wall, one per crossing.

    The level set is located in the three rows nearest the wall and fitted by
    least squares ``x = x_c + s (y - y_wall)``. With ``reference="phase"`` the
    angle is measured inside the phi > 0 phase; with ``reference="x"`` it is
    measured from the +x direction.
    """
    if reference not in ("phase", "x"):
        raise ValueError("reference must be 'phase' or 'x'")
    phi = np.asarray(phi, dtype=np.float64)
    rows = [0, 1, 2] if wall is WallSide.BOTTOM else [g.Ny - 1, g.Ny - 2, g.Ny - 3]
    base = _crossings(phi[:, rows[0]])
    if not base:
        raise ValueError(f"no zero crossing of phi on the {wall.value} wall")
    angles = []
    for xi, direction in base:
        xs = [xi]
        for j in rows[1:]:
            cands = _crossings(phi[:, j])
            if not cands:
                raise ValueError("level set does not reach the wall-adjacent rows")
            d = [((c - xi + g.Nx / 2) % g.Nx) - g.Nx / 2 for c, _ in cands]
            xs.append(xi + min(d, key=abs))
        xs_arr = np.array(xs) * g.dx
        ys = g.y[rows]
        s = np.polyfit(ys - ys[0], xs_arr, 1)[0]
        # level-set direction pointing into the fluid
        t = np.array([s, 1.0]) if wall is WallSide.BOTTOM else np.array([-s, -1.0])
        t /= np.linalg.norm(t)
        e = np.array([1.0, 0.0])
        if reference == "phase" and direction < 0:
            e = -e
        angles.append(math.degrees(math.acos(float(np.clip(t @ e, -1.0, 1.0)))))
    return angles


# --- energy audit -----------------------------------------------------------

@dataclass
class AuditRecord:
    t: float
    energy: EnergyReport
    law_residual: float


@dataclass
class EnergyAudit:
    records: list[AuditRecord]
    max_residual: float
    max_increment: float

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.law_residual for r in self.records])


def audit_energy(trajectory: Sequence[tuple[float, EnergyReport]]) -> EnergyAudit:
    """
    Discrete energy-law residuals of a trajectory of ``(t, EnergyReport)`` pairs.

    ``r_n = (E^{n+1} - E^n) / (t^{n+1} - t^n) + D^{n+1}`` with the dissipation
    taken at the end of each step, matching backward Euler.
    """
    traj = list(trajectory)
    if len(traj) < 2:
        raise ValueError("energy audit needs at least 2 records")
    recs = []
    incr = -math.inf
    for (t0, e0), (t1, e1) in zip(traj, traj[1:]):
        if not t1 > t0:
            raise ValueError("trajectory records must be time-ordered")
        dE = e1.total - e0.total
        incr = max(incr, dE)
        recs.append(AuditRecord(t1, e1, dE / (t1 - t0) + e1.dissipation))
    res = max(abs(r.law_residual) for r in recs)
    return EnergyAudit(recs, res, incr)


def mass_drift(trajectory: Iterable[Any]) -> float:
    """max_n |<phi^n> - <phi^0>| / (1 + |<phi^0>|) over states or precomputed means."""
    means = []
    for item in trajectory:
        if isinstance(item, (float, int, np.floating)):
            means.append(float(item))
        else:
            means.append(mean(item.grid, item.phi))
    if not means:
        return 0.0
    m0 = means[0]
    return max(abs(m - m0) for m in means) / (1.0 + abs(m0))


def boundary_identity_norm(state: Any) -> dict[str, float]:
    g = state.grid
    r = np.concatenate([boundary_residual(g, state, None, w) for w in WALLS])
    return {"linf": float(np.max(np.abs(r))), "l2": math.sqrt(g.dx * float(np.sum(r**2)))}


# --- manufactured solutions -------------------------------------------------

class MMSCase(Enum):
    HELMHOLTZ_NEUMANN = "HelmholtzNeumann"
    INTERIOR_HEAT = "InteriorHeat"
    MOMENTUM = "Momentum"
    FULL_STEP = "FullStep"


@dataclass
class ConvergenceTable:
    case: str
    resolutions: list[float]
    errors: list[float]
    orders: list[float]
    extras: dict[str, list[float]] = field(default_factory=dict)

    def rows(self) -> list[list[float]]:
        out = []
        for i, (h, e) in enumerate(zip(self.resolutions, self.errors)):
            row = [h, e, self.orders[i - 1] if i > 0 else math.nan]
            row += [v[i] for v in self.extras.values()]
            out.append(row)
        return out


def _orders(h: Sequence[float], e: Sequence[float]) -> list[float]:
    return [math.log(e[i] / e[i + 1]) / math.log(h[i] / h[i + 1]) for i in range(len(e) - 1)]


def _mms_helmholtz(Ny: int, Nx: int, Lx: float) -> tuple[float, float]:
    g = make_grid(Lx, Nx, Ny)
    X, Y = g.mesh
    d, m = 0.3, 2
    kx = 2.0 * np.pi / Lx
    exact = np.cos(kx * X) * np.cos(m * np.pi * (Y + 1.0) / 2.0)
    G1 = (1.0 + d * (kx**2 + (m * np.pi / 2.0) ** 2)) * exact
    mu = helmholtz_neumann(g, d, G1)
    return g.dy, float(np.max(np.abs(mu - exact)))


def _mms_interior_heat(Ny: int, Nx: int, Lx: float) -> tuple[float, float]:
    g = make_grid(Lx, Nx, Ny)
    X, Y = g.mesh
    kx = 2.0 * np.pi / Lx
    exact = np.cos(kx * X) * np.sin(np.pi * (Y + 1.0) / 4.0) + Y**2
    lap = -(kx**2 + (np.pi / 4.0) ** 2) * np.cos(kx * X) * np.sin(np.pi * (Y + 1.0) / 4.0) + 2.0
    phi = interior_heat_step(g, exact, 1.0, 0.1, -lap, exact[:, 0], exact[:, -1])
    return g.dy, float(np.max(np.abs(phi - exact)))


def momentum_mms_fields(g: ChannelGrid, nu: float = 1.0):
    """Single-mode streamfunction (1 - y^2)^2 cos(kx) with its steady forcing and wall data."""
    X, Y = g.mesh
    kx = 2.0 * np.pi / g.Lx
    c, s = np.cos(kx * X), np.sin(kx * X)
    u1 = c * (-4.0 * Y * (1.0 - Y**2))
    u2 = kx * s * (1.0 - Y**2) ** 2
    lap1 = -kx**2 * u1 + c * 24.0 * Y
    lap2 = -kx**2 * u2 + kx * s * (-4.0 + 12.0 * Y**2)
    G4 = VectorField(-nu * lap1, -nu * lap2)
    cx = np.cos(kx * g.x)
    return VectorField(u1, u2), G4, -8.0 * nu * cx, 8.0 * nu * cx


def _mms_momentum(Ny: int, Nx: int, Lx: float) -> tuple[float, float, float]:
    g = make_grid(Lx, Nx, Ny)
    p = PhysParams(beta=1.0)
    exact, G4, gb, gt = momentum_mms_fields(g, p.nu)
    u = momentum_step(g, exact, 1e3, G4, gb, gt, p)
    err = max(float(np.max(np.abs(u.u1 - exact.u1))), float(np.max(np.abs(u.u2 - exact.u2))))
    div = float(np.max(np.abs(divergence(g, u))))
    return g.dy, err, div


class ManufacturedFlow:
    """
    Smooth time-dependent solution of the full system with matching sources.

    phi = P(t) cos(kx) cos(pi (y+1)/2), mu = Q(t) cos(kx) cos(pi (y+1)),
    u from sigma = R(t) sin(kx) (1 - y^2)^2, p = 0.
    """

    def __init__(self, params: PhysParams, Lx: float = 2.0 * np.pi) -> None:
        self.p = params
        self.kx = 2.0 * np.pi / Lx

    @staticmethod
    def P(t):
        return 0.5 + 0.3 * np.sin(2.0 * t), 0.6 * np.cos(2.0 * t)

    @staticmethod
    def Q(t):
        return 0.4 * np.cos(t), -0.4 * np.sin(t)

    @staticmethod
    def R(t):
        return 0.2 * np.exp(-t), -0.2 * np.exp(-t)

    def fields(self, g: ChannelGrid, t: float):
        k = self.kx
        X, Y = g.mesh
        c, s = np.cos(k * X), np.sin(k * X)
        (P, Pt), (Q, _), (R, Rt) = self.P(t), self.Q(t), self.R(t)
        a1 = np.cos(np.pi * (Y + 1.0) / 2.0)
        a1y = -(np.pi / 2.0) * np.sin(np.pi * (Y + 1.0) / 2.0)
        phi = P * c * a1
        mu = Q * c * np.cos(np.pi * (Y + 1.0))
        w = (1.0 - Y**2) ** 2
        wy = -4.0 * Y * (1.0 - Y**2)
        u = VectorField(R * s * wy, -R * k * c * w)
        return u, phi, mu

    def __call__(self, g: ChannelGrid, t: float):
        from .stepper import Sources

        p, k = self.p, self.kx
        X, Y = g.mesh
        c, s = np.cos(k * X), np.sin(k * X)
        (P, Pt), (Q, _), (R, Rt) = self.P(t), self.Q(t), self.R(t)
        th = np.pi * (Y + 1.0) / 2.0
        a1, a1y = np.cos(th), -(np.pi / 2.0) * np.sin(th)
        phi = P * c * a1
        phi_t = Pt * c * a1
        phi_x = -P * k * s * a1
        phi_y = P * c * a1y
        lap_phi = -(k**2 + (np.pi / 2.0) ** 2) * phi
        b = np.cos(2.0 * th)
        mu = Q * c * b
        lap_mu = -(k**2 + np.pi**2) * mu
        w = (1.0 - Y**2) ** 2
        wy = -4.0 * Y * (1.0 - Y**2)
        wyy = -4.0 + 12.0 * Y**2
        wyyy = 24.0 * Y
        u1, u2 = R * s * wy, -R * k * c * w
        u1t, u2t = Rt * s * wy, -Rt * k * c * w
        u1x, u1y = R * k * c * wy, R * s * wyy
        u2x, u2y = R * k**2 * s * w, -R * k * c * wy
        lap_u1 = -k**2 * u1 + R * s * wyyy
        lap_u2 = -k**2 * u2 - R * k * c * wyy
        mom = VectorField(
            u1t + u1 * u1x + u2 * u1y - p.nu * lap_u1 - mu * phi_x,
            u2t + u1 * u2x + u2 * u2y - p.nu * lap_u2 - mu * phi_y,
        )
        phase = phi_t + u1 * phi_x + u2 * phi_y - p.mobility * lap_mu
        chem = mu + lap_phi - (phi**3 - phi)
        out = {}
        for side, j, sign in ((WallSide.BOTTOM, 0, -1.0), (WallSide.TOP, -1, 1.0)):
            L = sign * phi_y[:, j] + wall_energy_d(phi[:, j], p.a)
            dn_u1 = sign * R * np.sin(k * g.x) * wyy[:, j]
            out[side] = (
                p.beta * u1[:, j] + p.nu * dn_u1 - L * phi_x[:, j],
                phi_t[:, j] + u1[:, j] * phi_x[:, j] + p.relax * L,
            )
        return Sources(
            momentum=mom,
            slip_bottom=out[WallSide.BOTTOM][0],
            slip_top=out[WallSide.TOP][0],
            phase=phase,
            chem=chem,
            relax_bottom=out[WallSide.BOTTOM][1],
            relax_top=out[WallSide.TOP][1],
        )


def _mms_full_step(dt: float, Nx: int, Ny: int, horizon: float) -> tuple[float, float]:
    from .stepper import SimState, StepConfig, advance

    g = make_grid(2.0 * np.pi, Nx, Ny)
    p = PhysParams(a=0.5)
    man = ManufacturedFlow(p, g.Lx)
    u0, phi0, mu0 = man.fields(g, 0.0)
    s0 = SimState(g, 0.0, u0, phi0, mu0, phi0[:, 0].copy(), phi0[:, -1].copy(), p)
    n = int(round(horizon / dt))
    s = advance(s0, n, StepConfig(dt=dt, picard_tol=1e-11, picard_max=200, forcing=man))
    u, phi, _ = man.fields(g, s.t)
    err = max(
        float(np.max(np.abs(s.phi - phi))),
        float(np.max(np.abs(s.u.u1 - u.u1))),
        float(np.max(np.abs(s.u.u2 - u.u2))),
    )
    return dt, err


def mms_convergence(
    case: MMSCase | str,
    resolutions: Sequence[float] | None = None,
    Nx: int = 16,
    Lx: float = 2.0 * np.pi,
) -> ConvergenceTable:
    """
    Observed convergence orders for one manufactured-solution case.

    Spatial cases take Ny values (dyadic: 17, 33, 65, ...) and report the max
    error against dy. ``FullStep`` takes time steps on a fixed fine grid.
    """
    case = MMSCase(case) if isinstance(case, str) else case
    if case is MMSCase.FULL_STEP:
        dts = list(resolutions) if resolutions is not None else [0.04, 0.02, 0.01]
        if len(dts) < 3:
            raise ValueError("need at least 3 resolutions")
        rows = [_mms_full_step(dt, 16, 129, 0.4) for dt in dts]
        h, e = [r[0] for r in rows], [r[1] for r in rows]
        return ConvergenceTable(case.value, h, e, _orders(h, e))
    nys = [int(n) for n in resolutions] if resolutions is not None else [17, 33, 65]
    if len(nys) < 3:
        raise ValueError("need at least 3 resolutions")
    extras: dict[str, list[float]] = {}
    if case is MMSCase.HELMHOLTZ_NEUMANN:
        rows = [_mms_helmholtz(n, Nx, Lx) for n in nys]
    elif case is MMSCase.INTERIOR_HEAT:
        rows = [_mms_interior_heat(n, Nx, Lx) for n in nys]
    else:
        rows3 = [_mms_momentum(n, Nx, Lx) for n in nys]
        rows = [(r[0], r[1]) for r in rows3]
        extras["divergence"] = [r[2] for r in rows3]
    h, e = [r[0] for r in rows], [r[1] for r in rows]
    return ConvergenceTable(case.value, h, e, _orders(h, e), extras)
