"""Pseudo-spectral toolkit for the 2D Zakharov system on the torus.

Modules
-------
spectral      grids, transforms, multiplier operators, norms
profiles      radial ground state and self-similar profile pairs
construction  cutoff blow-up data, wave correction, zero-mode tuning
evolve        time integration of the full and reduced systems
diagnostics   conserved quantities, weighted norms, rate fits, concentration
cli           configuration-driven experiment runner
"""

from ztorus.spectral import Field, TorusGrid

__all__ = ["Field", "TorusGrid"]
__version__ = "0.1.0"
