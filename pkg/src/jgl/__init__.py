"""Transfer-matrix and Pruefer-variable laboratory for random Jacobi matrices."""

from ._accel import backend_name
from .coeffstream import (
    Constant,
    DumitriuEdelman,
    Unperturbed,
    Upsilon,
    UpsilonParams,
    coeff_at,
    make_constant,
    make_unperturbed,
    sample_dumitriu_edelman,
    sample_upsilon,
    stream_from_dict,
)

__version__ = "0.1.0"

__all__ = [
    "Constant",
    "DumitriuEdelman",
    "Unperturbed",
    "Upsilon",
    "UpsilonParams",
    "backend_name",
    "coeff_at",
    "make_constant",
    "make_unperturbed",
    "sample_dumitriu_edelman",
    "sample_upsilon",
    "stream_from_dict",
]
