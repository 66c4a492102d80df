"""Symbolic-numeric toolkit for Pfaffian integration of Hamiltonian systems."""

__version__ = "0.1.0"

from .expr import (EvaluationError, Expr, ExprError, ParseError, diff, evaluate, parse, render,
                   simplify, substitute)
from .geometry import (KAPPA, Chart, JacobiStructure, KForm, VectorField, check_jacobi_axioms,
                       contact_to_jacobi, exterior_derivative, hamiltonian_vf, jacobi_bracket,
                       lcs_to_jacobi, lie_bracket, symplectic_to_jacobi, wedge)
from .cinf import (HamiltonianSystem, check_closure_numeric, check_closure_symbolic,
                   check_independence, check_reeb_compatibility, extend_time_dependent)
from .forms import (PfaffianSequence, SkewExprMatrix, bracket_matrix, cross_check_paths,
                    forms_contraction, forms_minor, pfaffian)
from .integration import (ChainEntry, LevelSet, NotSeparable, Trajectory, check_frobenius,
                          check_pfaffian_solution, check_rate, conservation, flow, run_chain,
                          sample_level_set, solve_separable)
from .document import DocumentError, SystemDocument, load_document
from .report import CheckReport


def fixture_path(name: str) -> str:
    """Path of a bundled example document, e.g. fixture_path("toda")."""
    from importlib.resources import files
    return str(files(__package__) / "data" / f"{name}.json")
