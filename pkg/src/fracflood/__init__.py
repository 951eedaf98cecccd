"""fracflood: dual-porosity/dual-permeability fracturing-flooding simulator
with CMA-ES history matching and a semi-analytical well-test reference.
"""

__version__ = "0.1.0"

from .params import ParamsError, RepresentativeParams

__all__ = ["ParamsError", "RepresentativeParams", "__version__"]
