"""Recurrent forecasting cells with in-cell STL decomposition.

Seven cell kinds share one step/readout contract: the plain RNN, LSTM and
GRU, their STL-cell counterparts (RNN_STLC, LSTM_STLC, GRU_STLC) and the
Correlation Recurrent Unit (CRU).
"""

from cru.cells import CellKind, CellParams, DecomposedInput, count_parameters
from cru.stl import StlComponents, StlConfig, stl_decompose

__version__ = "0.1.0"

__all__ = [
    "CellKind",
    "CellParams",
    "DecomposedInput",
    "StlComponents",
    "StlConfig",
    "count_parameters",
    "stl_decompose",
]
