"""Cell-transit simulation and multimodal classification toolkit.

A 2D lattice-Boltzmann / spring-network simulator generates constriction
transits of deformable cells, producing per-cell mechanical features
(deformation index, transition time, peak velocity) plus synthetic
bright-field-style images.  On top of that sits a small reverse-mode
autodiff engine with the model zoo needed to compare classifiers:
classical baselines, a feature MLP, a residual CNN image encoder, and a
late-fusion network combining both modalities.
"""

__version__ = "0.1.0"

from celltransit.errors import (
    CellTransitError,
    ConfigError,
    DataError,
    NumericalError,
)

__all__ = [
    "CellTransitError",
    "ConfigError",
    "NumericalError",
    "DataError",
    "__version__",
]
