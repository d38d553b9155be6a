"""Standard figures from pendulum-chain trajectory CSV logs."""

from .plots import PlotError, PlotSpec, plot

__all__ = ["PlotError", "PlotSpec", "plot"]
__version__ = "0.1.0"
