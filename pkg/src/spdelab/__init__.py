"""spdelab: spectral Galerkin laboratory for noise transfer in polynomial SPDEs."""

__version__ = "0.1.0"

from .basis import (
    BasisSpec,
    SpectralField,
    apply_l,
    dirichlet_interval,
    from_grid,
    sobolev_inner,
    sobolev_norm,
    to_grid,
    torus_2d,
)
