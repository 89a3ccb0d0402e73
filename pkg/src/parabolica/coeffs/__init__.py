"""Coefficient families and the pointwise functionals built from them."""

from .eig import AsymmetryError, check_symmetric, eigh, jacobi_eigh, lambda_extremes
from .examples import CATALOGUE, FamilyError, example_family, ex1, ex2, heat_spec, spec_from_expressions
from .functionals import (
    H_beta_sup, K_eta, M_gamma, SigmaError, SingularDiffusionError, gradient_functionals, tilde_K_eta,
)
from .growth import Growth
from .spec import MissingDataError, OperatorSpec

__all__ = [
    "AsymmetryError", "CATALOGUE", "FamilyError", "Growth", "H_beta_sup", "K_eta", "M_gamma",
    "MissingDataError", "OperatorSpec", "SigmaError", "SingularDiffusionError", "check_symmetric",
    "eigh", "ex1", "ex2", "example_family", "gradient_functionals", "heat_spec", "jacobi_eigh",
    "lambda_extremes", "spec_from_expressions", "tilde_K_eta",
]
