"""
Channel geometry T_Lx x (-1, 1) and its discrete calculus.

x is periodic and handled with FFTs; y uses a uniform node set including both
walls with second-order finite differences. Fields are plain float64 arrays of
shape (Nx, Ny), indexed ``F[i, j]`` with ``x_i = i*dx`` and ``y_j = -1 + j*dy``.
Wall traces are 1D arrays of length Nx.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import NamedTuple

import numpy as np

FloatArray = np.ndarray


class GridError(ValueError):
    """Invalid grid parameters or a field that does not live on the grid."""


class OddNxError(GridError):
    pass


class WallSide(Enum):
    BOTTOM = "bottom"
    TOP = "top"


WALLS = (WallSide.BOTTOM, WallSide.TOP)


class VectorField(NamedTuple):
    u1: FloatArray
    u2: FloatArray


@dataclass(frozen=True)
class ChannelGrid:
    Lx: float
    Nx: int
    Ny: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.Lx) and self.Lx > 0.0):
            raise GridError(f"Lx must be > 0, got {self.Lx}")
        if self.Nx % 2 != 0:
            raise OddNxError(f"Nx must be even, got {self.Nx}")
        if self.Nx < 4:
            raise GridError(f"Nx must be >= 4, got {self.Nx}")
        if self.Ny < 5:
            raise GridError(f"Ny must be >= 5, got {self.Ny}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nx, self.Ny)

    @property
    def dx(self) -> float:
        return self.Lx / self.Nx

    @property
    def dy(self) -> float:
        return 2.0 / (self.Ny - 1)

    @property
    def area(self) -> float:
        return 2.0 * self.Lx

    @cached_property
    def x(self) -> FloatArray:
        return np.arange(self.Nx) * self.dx

    @cached_property
    def y(self) -> FloatArray:
        return -1.0 + np.arange(self.Ny) * self.dy

    @cached_property
    def mesh(self) -> tuple[FloatArray, FloatArray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def k(self) -> FloatArray:
        """rfft wavenumbers 2*pi*m/Lx, m = 0..Nx/2."""
        return 2.0 * np.pi * np.arange(self.Nx // 2 + 1) / self.Lx

    @cached_property
    def k_deriv(self) -> FloatArray:
        """Wavenumbers for first derivatives (Nyquist zeroed)."""
        kd = self.k.copy()
        kd[-1] = 0.0
        return kd

    @cached_property
    def k2(self) -> FloatArray:
        return self.k**2

    @cached_property
    def wy(self) -> FloatArray:
        """Trapezoid weights in y."""
        w = np.full(self.Ny, self.dy)
        w[0] = w[-1] = 0.5 * self.dy
        return w

    @cached_property
    def weights(self) -> FloatArray:
        return self.dx * np.broadcast_to(self.wy, self.shape)

    def wall_index(self, wall: WallSide) -> int:
        return 0 if wall is WallSide.BOTTOM else self.Ny - 1


def make_grid(Lx: float = 2.0 * np.pi, Nx: int = 64, Ny: int = 33) -> ChannelGrid:
    return ChannelGrid(float(Lx), int(Nx), int(Ny))


def check_field(g: ChannelGrid, F: FloatArray, name: str = "field") -> FloatArray:
    F = np.asarray(F, dtype=np.float64)
    if F.shape != g.shape:
        raise GridError(f"{name} has shape {F.shape}, grid expects {g.shape}")
    return F


def check_wall_field(g: ChannelGrid, B: FloatArray, name: str = "wall field") -> FloatArray:
    B = np.asarray(B, dtype=np.float64)
    if B.shape != (g.Nx,):
        raise GridError(f"{name} has shape {B.shape}, grid expects ({g.Nx},)")
    return B


# --- x calculus -------------------------------------------------------------

def rfft_x(F: FloatArray) -> np.ndarray:
    return np.fft.rfft(F, axis=0)


def irfft_x(Fh: np.ndarray, Nx: int) -> FloatArray:
    return np.fft.irfft(Fh, n=Nx, axis=0)


def _kshape(k: FloatArray, ndim: int) -> FloatArray:
    return k.reshape((-1,) + (1,) * (ndim - 1))


def ddx(g: ChannelGrid, F: FloatArray) -> FloatArray:
    """Spectral x-derivative; works on bulk fields and wall traces."""
    F = np.asarray(F, dtype=np.float64)
    if F.shape[0] != g.Nx:
        raise GridError(f"field has {F.shape[0]} x-nodes, grid expects {g.Nx}")
    Fh = rfft_x(F)
    return irfft_x(1j * _kshape(g.k_deriv, F.ndim) * Fh, g.Nx)


def d2dx(g: ChannelGrid, F: FloatArray) -> FloatArray:
    """Spectral second x-derivative with the true -k^2 (Nyquist kept)."""
    F = np.asarray(F, dtype=np.float64)
    if F.shape[0] != g.Nx:
        raise GridError(f"field has {F.shape[0]} x-nodes, grid expects {g.Nx}")
    Fh = rfft_x(F)
    return irfft_x(-_kshape(g.k2, F.ndim) * Fh, g.Nx)


# --- y calculus -------------------------------------------------------------

def ddy(g: ChannelGrid, F: FloatArray) -> FloatArray:
    """Centered differences inside, second-order one-sided at the walls."""
    F = check_field(g, F)
    h = g.dy
    D = np.empty_like(F)
    D[:, 1:-1] = (F[:, 2:] - F[:, :-2]) / (2.0 * h)
    D[:, 0] = (-3.0 * F[:, 0] + 4.0 * F[:, 1] - F[:, 2]) / (2.0 * h)
    D[:, -1] = (3.0 * F[:, -1] - 4.0 * F[:, -2] + F[:, -3]) / (2.0 * h)
    return D


def ddy_flux(g: ChannelGrid, F: FloatArray) -> FloatArray:
    """
    Summation-by-parts first derivative in y.

    Centered inside and first-order one-sided at the walls, so that the
    trapezoid sum of the result equals ``F[:, -1] - F[:, 0]`` exactly. Used for
    the conservative advection flux, where the wall values of the flux vanish.
    """
    F = check_field(g, F)
    h = g.dy
    D = np.empty_like(F)
    D[:, 1:-1] = (F[:, 2:] - F[:, :-2]) / (2.0 * h)
    D[:, 0] = (F[:, 1] - F[:, 0]) / h
    D[:, -1] = (F[:, -1] - F[:, -2]) / h
    return D


def d2dy(g: ChannelGrid, F: FloatArray) -> FloatArray:
    """Three-point second derivative inside, four-point one-sided at the walls."""
    F = check_field(g, F)
    h2 = g.dy**2
    D = np.empty_like(F)
    D[:, 1:-1] = (F[:, 2:] - 2.0 * F[:, 1:-1] + F[:, :-2]) / h2
    D[:, 0] = (2.0 * F[:, 0] - 5.0 * F[:, 1] + 4.0 * F[:, 2] - F[:, 3]) / h2
    D[:, -1] = (2.0 * F[:, -1] - 5.0 * F[:, -2] + 4.0 * F[:, -3] - F[:, -4]) / h2
    return D


def laplacian(g: ChannelGrid, F: FloatArray) -> FloatArray:
    return d2dx(g, F) + d2dy(g, F)


def flux_laplacian(
    g: ChannelGrid,
    F: FloatArray,
    flux_bottom: FloatArray | float = 0.0,
    flux_top: FloatArray | float = 0.0,
) -> FloatArray:
    """
    Finite-volume Laplacian with prescribed outward normal fluxes at the walls.

    The wall rows read ``(2/dy) * (q + (F_1 - F_0)/dy)`` (ghost-point form), so
    that the trapezoid integral of the result reduces to the wall integral of
    the fluxes. With zero fluxes this is the discrete Neumann Laplacian used by
    the solvers.
    """
    F = check_field(g, F)
    h = g.dy
    D = np.empty_like(F)
    D[:, 1:-1] = (F[:, 2:] - 2.0 * F[:, 1:-1] + F[:, :-2]) / h**2
    D[:, 0] = (2.0 / h) * ((F[:, 1] - F[:, 0]) / h + flux_bottom)
    D[:, -1] = (2.0 / h) * ((F[:, -2] - F[:, -1]) / h + flux_top)
    return D + d2dx(g, F)


def dirichlet_energy(g: ChannelGrid, F: FloatArray) -> float:
    """
    Discrete ``||grad F||^2`` paired with :func:`flux_laplacian`.

    Satisfies ``-sum(W * F * flux_laplacian(F)) == dirichlet_energy(F)`` for
    zero wall fluxes.
    """
    F = check_field(g, F)
    ex = -float(np.sum(g.weights * F * d2dx(g, F)))
    dyF = np.diff(F, axis=1) / g.dy
    ey = g.dx * g.dy * float(np.sum(dyF**2))
    return ex + ey


# --- traces and quadrature --------------------------------------------------

def trace(g: ChannelGrid, F: FloatArray, wall: WallSide) -> FloatArray:
    F = check_field(g, F)
    return F[:, g.wall_index(wall)].copy()


def normal_deriv(g: ChannelGrid, F: FloatArray, wall: WallSide) -> FloatArray:
    """Outward normal derivative: +d/dy at the top wall, -d/dy at the bottom."""
    F = check_field(g, F)
    h = g.dy
    if wall is WallSide.TOP:
        return (3.0 * F[:, -1] - 4.0 * F[:, -2] + F[:, -3]) / (2.0 * h)
    return -(-3.0 * F[:, 0] + 4.0 * F[:, 1] - F[:, 2]) / (2.0 * h)


def integrate(g: ChannelGrid, F: FloatArray) -> float:
    F = check_field(g, F)
    return float(np.sum(g.weights * F))


def mean(g: ChannelGrid, F: FloatArray) -> float:
    return integrate(g, F) / g.area


def inner(g: ChannelGrid, F: FloatArray, G: FloatArray) -> float:
    return integrate(g, np.asarray(F) * np.asarray(G))


def integrate_wall(g: ChannelGrid, B: FloatArray) -> float:
    B = check_wall_field(g, B)
    return g.dx * float(np.sum(B))


def divergence(g: ChannelGrid, u: VectorField) -> FloatArray:
    return ddx(g, u.u1) + ddy(g, u.u2)
