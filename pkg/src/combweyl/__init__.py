"""Heat-trace and Weyl-remainder experiments on comb domains."""

from .comb_domain import CombPolygon, ToothSequence, build_polygon, dyadic_teeth
from .fd_spectrum import Spectrum, discretize, discrete_heat_trace, lowest_eigenvalues
from .spectral_functionals import WeylConstants, heat_trace, remainder_E

__all__ = [
    "CombPolygon",
    "ToothSequence",
    "build_polygon",
    "dyadic_teeth",
    "Spectrum",
    "discretize",
    "discrete_heat_trace",
    "lowest_eigenvalues",
    "WeylConstants",
    "heat_trace",
    "remainder_E",
]
