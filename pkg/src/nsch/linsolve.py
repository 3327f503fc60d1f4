"""
Per-Fourier-mode solvers for the linearized sub-problems.

Every solver transforms in x with ``rfft``, solves one tridiagonal (or 2x2
block tridiagonal) system in y per mode, and transforms back. The matrices
depend only on the grid, the time step and the physical parameters, so their
factorizations are cached and reused across Picard iterations and steps.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .grid import (
    ChannelGrid,
    FloatArray,
    VectorField,
    check_field,
    check_wall_field,
    ddx,
    ddy_flux,
    irfft_x,
    rfft_x,
)
from .physics import PhysParams, wall_energy_d

logger = logging.getLogger(__name__)

_PIVOT_TOL = 1e-13


class SingularSystemError(RuntimeError):
    """A modal system has a (numerically) vanishing pivot."""


class Thomas:
    """
    Batched Thomas factorization for M independent tridiagonal systems.

    Coefficient arrays have shape (N, M): row j of system m reads
    ``lower[j, m] x[j-1] + diag[j, m] x[j] + upper[j, m] x[j+1] = r[j, m]``.
    ``lower[0]`` and ``upper[-1]`` are ignored.
    """

    def __init__(self, lower: np.ndarray, diag: np.ndarray, upper: np.ndarray) -> None:
        lower = np.asarray(lower, dtype=np.float64)
        diag = np.asarray(diag, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        N = diag.shape[0]
        scale = np.abs(lower) + np.abs(diag) + np.abs(upper)
        inv = np.empty_like(diag)
        cp = np.zeros_like(diag)
        piv = diag[0].copy()
        for j in range(N):
            if j > 0:
                piv = diag[j] - lower[j] * cp[j - 1]
            bad = np.abs(piv) <= _PIVOT_TOL * scale[j]
            if np.any(bad):
                m = int(np.flatnonzero(bad)[0])
                raise SingularSystemError(f"vanishing pivot in system {m}, row {j}")
            inv[j] = 1.0 / piv
            if j < N - 1:
                cp[j] = upper[j] * inv[j]
        self.N = N
        self.inv = inv
        self.gl = lower * inv
        self.cp = cp

    def solve(self, r: np.ndarray) -> np.ndarray:
        """Solve for right-hand sides of shape (N, M); real or complex."""
        z = r * self.inv
        gl, cp = self.gl, self.cp
        for j in range(1, self.N):
            z[j] -= gl[j] * z[j - 1]
        for j in range(self.N - 2, -1, -1):
            z[j] -= cp[j] * z[j + 1]
        return z


class BlockThomas2:
    """
    Batched block Thomas factorization with 2x2 blocks.

    Blocks have shape (N, M, 2, 2); ``A[j]`` couples row j to j-1, ``C[j]``
    to j+1.
    """

    def __init__(self, A: np.ndarray, B: np.ndarray, C: np.ndarray) -> None:
        N = B.shape[0]
        inv = np.empty_like(B)
        Cp = np.zeros_like(B)
        G = np.zeros_like(B)
        P = B[0].copy()
        for j in range(N):
            if j > 0:
                P = B[j] - A[j] @ Cp[j - 1]
            det = P[..., 0, 0] * P[..., 1, 1] - P[..., 0, 1] * P[..., 1, 0]
            scale = np.max(np.abs(P), axis=(-2, -1)) ** 2
            bad = np.abs(det) <= _PIVOT_TOL * scale
            if np.any(bad):
                m = int(np.flatnonzero(bad)[0])
                raise SingularSystemError(f"singular pivot block in system {m}, row {j}")
            Pi = np.empty_like(P)
            Pi[..., 0, 0] = P[..., 1, 1] / det
            Pi[..., 1, 1] = P[..., 0, 0] / det
            Pi[..., 0, 1] = -P[..., 0, 1] / det
            Pi[..., 1, 0] = -P[..., 1, 0] / det
            inv[j] = Pi
            if j > 0:
                G[j] = Pi @ A[j]
            if j < N - 1:
                Cp[j] = Pi @ C[j]
        self.N = N
        self.inv = [inv[..., a, b].copy() for a in range(2) for b in range(2)]
        self.G = [G[..., a, b].copy() for a in range(2) for b in range(2)]
        self.Cp = [Cp[..., a, b].copy() for a in range(2) for b in range(2)]

    def solve(self, r0: np.ndarray, r1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve for the two right-hand-side components, each of shape (N, M)."""
        i00, i01, i10, i11 = self.inv
        z0 = i00 * r0 + i01 * r1
        z1 = i10 * r0 + i11 * r1
        g00, g01, g10, g11 = self.G
        for j in range(1, self.N):
            a, b = z0[j - 1], z1[j - 1]
            z0[j] -= g00[j] * a + g01[j] * b
            z1[j] -= g10[j] * a + g11[j] * b
        c00, c01, c10, c11 = self.Cp
        for j in range(self.N - 2, -1, -1):
            a, b = z0[j + 1], z1[j + 1]
            z0[j] -= c00[j] * a + c01[j] * b
            z1[j] -= c10[j] * a + c11[j] * b
        return z0, z1


def _modal(F: FloatArray) -> np.ndarray:
    """(Nx, Ny) real field -> (Ny, K) contiguous modal array."""
    return np.ascontiguousarray(rfft_x(F).T)


def _physical(Fh: np.ndarray, g: ChannelGrid) -> FloatArray:
    return irfft_x(np.ascontiguousarray(Fh.T), g.Nx)


# --- Helmholtz with Neumann walls -------------------------------------------

@lru_cache(maxsize=64)
def _helmholtz_factor(g: ChannelGrid, delta: float) -> Thomas:
    N, h = g.Ny, g.dy
    K = g.k2[None, :]
    diag = np.broadcast_to(1.0 + delta * (2.0 / h**2 + K), (N, K.size)).copy()
    off = np.full_like(diag, -delta / h**2)
    lower, upper = off.copy(), off.copy()
    upper[0] *= 2.0
    lower[-1] *= 2.0
    return Thomas(lower, diag, upper)


def helmholtz_neumann(g: ChannelGrid, delta: float, G1: FloatArray) -> FloatArray:
    """
    Solve ``mu - delta * Lap_N mu = G1`` with zero normal flux at both walls.

    ``Lap_N`` is :func:`grid.flux_laplacian` with zero fluxes, so the
    trapezoid mean of ``mu`` equals that of ``G1`` exactly.
    """
    if not delta > 0.0:
        raise ValueError(f"delta must be > 0, got {delta}")
    G1 = check_field(g, G1, "G1")
    T = _helmholtz_factor(g, float(delta))
    return _physical(T.solve(_modal(G1)), g)


# --- wall-line heat step ----------------------------------------------------

def boundary_heat_step(
    g: ChannelGrid,
    psi_n: FloatArray,
    delta: float,
    dt: float,
    G2: FloatArray,
) -> FloatArray:
    """Backward-Euler step of ``psi_t - delta * psi_xx = G2`` on one wall line."""
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if delta < 0.0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    psi_n = check_wall_field(g, psi_n, "psi_n")
    G2 = check_wall_field(g, G2, "G2")
    rhs = np.fft.rfft(psi_n) + dt * np.fft.rfft(G2)
    return np.fft.irfft(rhs / (1.0 + delta * dt * g.k2), n=g.Nx)


# --- bulk heat step with Dirichlet walls ------------------------------------

def _dirichlet_thomas(g: ChannelGrid, k2: np.ndarray, shift: float, scale: float) -> Thomas:
    """Rows ``(shift + scale*(2/h^2 + K)) x_j - scale*(x_{j-1} + x_{j+1})/h^2``; wall rows identity."""
    N, h = g.Ny, g.dy
    K = k2[None, :]
    diag = np.broadcast_to(shift + scale * (2.0 / h**2 + K), (N, K.size)).copy()
    off = np.full_like(diag, -scale / h**2)
    lower, upper = off.copy(), off.copy()
    diag[0] = diag[-1] = 1.0
    upper[0] = 0.0
    lower[-1] = 0.0
    return Thomas(lower, diag, upper)


@lru_cache(maxsize=64)
def _dirichlet_factor(g: ChannelGrid, shift: float) -> Thomas:
    return _dirichlet_thomas(g, g.k2, shift, 1.0)


def interior_heat_step(
    g: ChannelGrid,
    phi_n: FloatArray,
    delta: float,
    dt: float,
    G3: FloatArray,
    g3_bottom: FloatArray,
    g3_top: FloatArray,
) -> FloatArray:
    """Backward-Euler step of ``delta * phi_t - Lap phi = G3`` with Dirichlet wall data."""
    if not delta > 0.0:
        raise ValueError(f"delta must be > 0, got {delta}")
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    phi_n = check_field(g, phi_n, "phi_n")
    G3 = check_field(g, G3, "G3")
    rhs = (delta / dt) * phi_n + G3
    rhs[:, 0] = check_wall_field(g, g3_bottom, "g3_bottom")
    rhs[:, -1] = check_wall_field(g, g3_top, "g3_top")
    T = _dirichlet_factor(g, float(delta / dt))
    return _physical(T.solve(_modal(rhs)), g)


# --- momentum: vorticity / streamfunction -----------------------------------

class _MomentumOps(NamedTuple):
    vort: Thomas
    stream: Thomas
    mean: Thomas
    mean_elim: tuple[float, float]
    basis_sigma: tuple[np.ndarray, np.ndarray]
    influence_inv: np.ndarray


def _wall_slope(sig: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided d/dy of modal arrays (N, M) at bottom and top."""
    bot = (-3.0 * sig[0] + 4.0 * sig[1] - sig[2]) / (2.0 * h)
    top = (3.0 * sig[-1] - 4.0 * sig[-2] + sig[-3]) / (2.0 * h)
    return bot, top


def _modal_ddy(sig: np.ndarray, h: float) -> np.ndarray:
    D = np.empty_like(sig)
    D[1:-1] = (sig[2:] - sig[:-2]) / (2.0 * h)
    D[0], D[-1] = _wall_slope(sig, h)
    return D


@lru_cache(maxsize=32)
def _momentum_ops(g: ChannelGrid, dt: float, nu: float, beta: float) -> _MomentumOps:
    N, h = g.Ny, g.dy
    # modes 1 .. Nx/2 - 1; the Nyquist mode of u is discarded
    ks = slice(1, g.Nx // 2)
    vort = _dirichlet_thomas(g, g.k2[ks], 1.0 / dt, nu)
    stream = _dirichlet_thomas(g, g.k2[ks], 0.0, 1.0)
    M = g.Nx // 2 - 1
    sig_b_w = np.zeros((N, M))
    sig_b_w[0] = 1.0
    sig_t_w = np.zeros((N, M))
    sig_t_w[-1] = 1.0
    bases = []
    for e in (sig_b_w, sig_t_w):
        w = vort.solve(e)
        w[0] = w[-1] = 0.0
        bases.append(stream.solve(w))
    Ubb, Utb = _wall_slope(bases[0], h)
    Ubt, Utt = _wall_slope(bases[1], h)
    Mi = np.empty((M, 2, 2))
    Mi[:, 0, 0] = nu + beta * Ubb
    Mi[:, 0, 1] = beta * Ubt
    Mi[:, 1, 0] = -beta * Utb
    Mi[:, 1, 1] = nu - beta * Utt
    det = np.linalg.det(Mi)
    if np.any(np.abs(det) <= _PIVOT_TOL * np.max(np.abs(Mi), axis=(1, 2)) ** 2):
        raise SingularSystemError("influence matrix is singular")
    # mean mode: Robin rows eliminated to tridiagonal form
    a = -nu / h**2
    b = 1.0 / dt + 2.0 * nu / h**2
    e = nu / (2.0 * h)
    s = e / a
    lower = np.full((N, 1), a)
    diag = np.full((N, 1), b)
    upper = np.full((N, 1), a)
    diag[0] = beta + 3.0 * nu / (2.0 * h) - s * a
    upper[0] = -4.0 * nu / (2.0 * h) - s * b
    diag[-1] = beta + 3.0 * nu / (2.0 * h) - s * a
    lower[-1] = -4.0 * nu / (2.0 * h) - s * b
    mean = Thomas(lower, diag, upper)
    return _MomentumOps(vort, stream, mean, (s, s), (bases[0], bases[1]), np.linalg.inv(Mi))


def momentum_step(
    g: ChannelGrid,
    u_n: VectorField,
    dt: float,
    G4: VectorField,
    g4_bottom: FloatArray,
    g4_top: FloatArray,
    params: PhysParams,
) -> VectorField:
    """
    Backward-Euler step of the Stokes problem with Navier slip walls.

    Solves ``u_t - nu Lap u + grad p = G4``, ``div u = 0``, ``u2 = 0`` and
    ``beta u1 + nu d_n u1 = g4`` on the walls. Nonzero modes use the vorticity
    ``w = -Lap sigma`` with ``u = (d_y sigma, -d_x sigma)``; the wall vorticity
    is fixed by the slip condition through a 2x2 influence matrix per mode.
    The x-mean of ``u1`` solves a Robin problem directly, the x-mean of
    ``G4[1]`` is balanced by the mean pressure gradient.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    nu, beta = params.nu, params.beta
    ops = _momentum_ops(g, float(dt), float(nu), float(beta))
    h = g.dy
    ks = slice(1, g.Nx // 2)
    k = g.k[ks][None, :]

    u1n = check_field(g, u_n.u1, "u_n.u1")
    u2n = check_field(g, u_n.u2, "u_n.u2")
    G1 = check_field(g, G4.u1, "G4.u1")
    G2 = check_field(g, G4.u2, "G4.u2")
    gb = np.fft.rfft(check_wall_field(g, g4_bottom, "g4_bottom"))
    gt = np.fft.rfft(check_wall_field(g, g4_top, "g4_top"))

    u1h = _modal(u1n)
    u2h = _modal(u2n)
    G1h = _modal(G1)
    G2h = _modal(G2)
    out1 = np.zeros_like(u1h)
    out2 = np.zeros_like(u1h)

    # nonzero modes
    sig_n = 1j * u2h[:, ks] / k
    sig_n[0] = sig_n[-1] = 0.0
    w_n = np.zeros_like(sig_n)
    w_n[1:-1] = (2.0 / h**2 + k**2) * sig_n[1:-1] - (sig_n[2:] + sig_n[:-2]) / h**2
    curl = np.zeros_like(sig_n)
    curl[1:-1] = 1j * k * G2h[1:-1, ks] - (G1h[2:, ks] - G1h[:-2, ks]) / (2.0 * h)
    rhs = w_n / dt + curl
    rhs[0] = rhs[-1] = 0.0
    w_p = ops.vort.solve(rhs)
    w_p[0] = w_p[-1] = 0.0
    sig_p = ops.stream.solve(w_p)
    up_b, up_t = _wall_slope(sig_p, h)
    rb = gb[ks] - beta * up_b
    rt = beta * up_t - gt[ks]
    Mi = ops.influence_inv
    lam_b = Mi[:, 0, 0] * rb + Mi[:, 0, 1] * rt
    lam_t = Mi[:, 1, 0] * rb + Mi[:, 1, 1] * rt
    sig = sig_p + lam_b * ops.basis_sigma[0] + lam_t * ops.basis_sigma[1]
    out1[:, ks] = _modal_ddy(sig, h)
    out2[:, ks] = -1j * k * sig

    # mean mode
    s_b, s_t = ops.mean_elim
    r = (u1h[:, :1].real / dt + G1h[:, :1].real).copy()
    r[0] = gb[0].real - s_b * r[1]
    r[-1] = gt[0].real - s_t * r[-2]
    out1[:, :1] = ops.mean.solve(r)

    return VectorField(_physical(out1, g), _physical(out2, g))


# --- coupled Cahn-Hilliard block (delta = 0) --------------------------------

@lru_cache(maxsize=32)
def _ch_factor(g: ChannelGrid, dt: float, mobility: float, relax: float) -> BlockThomas2:
    N, h = g.Ny, g.dy
    Kn = g.k2.size
    s = 2.0 / h**2 + g.k2
    B = np.zeros((N, Kn, 2, 2))
    B[..., 0, 0] = 1.0 / dt
    B[..., 0, 1] = mobility * s
    B[..., 1, 0] = -s
    B[..., 1, 1] = 1.0
    B[0, :, 1, 0] -= 2.0 / (h * relax * dt)
    B[-1, :, 1, 0] -= 2.0 / (h * relax * dt)
    off = np.zeros((N, Kn, 2, 2))
    off[..., 0, 1] = -mobility / h**2
    off[..., 1, 0] = 1.0 / h**2
    A = off.copy()
    C = off.copy()
    C[0] *= 2.0
    A[-1] *= 2.0
    return BlockThomas2(A, B, C)


def advection(g: ChannelGrid, U: VectorField, Phi: FloatArray) -> FloatArray:
    """Conservative ``div(U Phi)``; its trapezoid integral vanishes when U2 = 0 on the walls."""
    return ddx(g, U.u1 * Phi) + ddy_flux(g, U.u2 * Phi)


class CHSources(NamedTuple):
    """Optional additive sources for the coupled Cahn-Hilliard block."""

    phase: FloatArray | None = None
    chem: FloatArray | None = None
    relax_bottom: FloatArray | None = None
    relax_top: FloatArray | None = None


def ch_coupled_step(
    g: ChannelGrid,
    phi_n: FloatArray,
    dt: float,
    U: VectorField,
    Phi: FloatArray,
    params: PhysParams,
    sources: CHSources | None = None,
    return_flux: bool = False,
):
    """
    One linearized Cahn-Hilliard step at delta = 0.

    Solves jointly for (phi, mu)::

        (phi - phi_n)/dt + div(U Phi) = M Lap_N mu
        mu + Lap_q phi = f(Phi)

    where ``Lap_q`` carries the outward wall flux ``q`` of phi, eliminated
    through the relaxation row
    ``(phi - phi_n)/dt + U1 d_x Phi = -Gamma (q + gamma_fs'(Phi))`` at each
    wall node. The bulk rows use the conservative flux so that the trapezoid
    mean of phi is preserved exactly. With ``return_flux`` the wall fluxes ``(q_bottom, q_top)`` are
    appended to the result.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    h = g.dy
    M, Gam = params.mobility, params.relax
    phi_n = check_field(g, phi_n, "phi_n")
    Phi = check_field(g, Phi, "Phi")
    src = sources if sources is not None else CHSources()

    A = advection(g, U, Phi)
    rphi = phi_n / dt - A
    if src.phase is not None:
        rphi = rphi + src.phase
    F = Phi**3 - Phi
    if src.chem is not None:
        F = F + src.chem
    gp_b = wall_energy_d(Phi[:, 0], params.a)
    gp_t = wall_energy_d(Phi[:, -1], params.a)
    s_b = src.relax_bottom if src.relax_bottom is not None else 0.0
    s_t = src.relax_top if src.relax_top is not None else 0.0
    # wall transport in the relaxation rows: u1 d_x Phi (u2 = 0 there)
    B_b = U.u1[:, 0] * ddx(g, Phi[:, 0])
    B_t = U.u1[:, -1] * ddx(g, Phi[:, -1])
    Fw = F.copy()
    Fw[:, 0] += (2.0 / h) * (gp_b - (phi_n[:, 0] / dt - B_b + s_b) / Gam)
    Fw[:, -1] += (2.0 / h) * (gp_t - (phi_n[:, -1] / dt - B_t + s_t) / Gam)

    T = _ch_factor(g, float(dt), float(M), float(Gam))
    ph, mh = T.solve(_modal(rphi), _modal(Fw))
    phi = _physical(ph, g)
    mu = _physical(mh, g)
    if not return_flux:
        return phi, mu
    q_b = -gp_b - ((phi[:, 0] - phi_n[:, 0]) / dt + B_b - s_b) / Gam
    q_t = -gp_t - ((phi[:, -1] - phi_n[:, -1]) / dt + B_t - s_t) / Gam
    return phi, mu, q_b, q_t
