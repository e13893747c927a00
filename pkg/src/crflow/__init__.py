"""crflow: a numerical laboratory for a prescribed-curvature conformal flow
on discrete 3-dimensional CR model manifolds, with bubble test-function
machinery, reduced (shadow) dynamics, and a quadrature table of every
explicit Heisenberg-group constant entering the analysis."""

__version__ = "0.1.0"

from .heisenberg import (  # noqa: F401
    KAPPA_DELTA,
    BubbleSpec,
    HeisenbergPoint,
    bubble_value,
    dilate,
    koranyi_gauge,
)
from .manifold import ManifoldModel, ScalarField, build_model  # noqa: F401
from .quadrature import ConstantsTable, compute_constants  # noqa: F401
