"""kelsim: finite-volume simulation and diagnostics for the degenerate Keller-Segel system.

    u_t = div(grad u^m - u^{q-1} grad v),   delta v_t = lap v - gamma v + u

on a periodic box truncation of R^n.
"""

from kelsim.grid import GridSpec, VectorField, make_grid
from kelsim.density import CflConfig, ModelParams
from kelsim.system import InitialData, Trajectory, run

__all__ = [
    "GridSpec",
    "VectorField",
    "make_grid",
    "CflConfig",
    "ModelParams",
    "InitialData",
    "Trajectory",
    "run",
]

__version__ = "0.1.0"
