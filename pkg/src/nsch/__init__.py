"""Channel Navier-Stokes / Cahn-Hilliard solver with moving-contact-line wall laws."""

from .grid import ChannelGrid, VectorField, WallSide, make_grid
from .physics import EnergyReport, PhysParams, energy_report

__all__ = [
    "ChannelGrid",
    "EnergyReport",
    "PhysParams",
    "VectorField",
    "WallSide",
    "energy_report",
    "make_grid",
]
