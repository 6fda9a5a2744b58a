"""Exception types raised across the package.

Grouped by subsystem; all inherit from MdflowError so callers can catch the
package's failures with a single except clause.
"""


class MdflowError(Exception):
    """Base class for all errors raised by mdflow."""


# Geometry construction.


class NonConformingGeometry(MdflowError):
    """A fracture plane or extent does not coincide with a grid line."""


class UnsupportedGeometry(MdflowError):
    """Geometry outside the supported class (axis-aligned, fully crossing)."""


class DegenerateCell(MdflowError):
    """A computed cell volume is not strictly positive."""


class MatchingFailure(MdflowError):
    """A mortar cell could not be paired with exactly one face and one cell."""


class NonPositiveAperture(MdflowError):
    """Apertures must be strictly positive."""


class MissingNeighbourData(MdflowError):
    """Aperture data for a higher-dimensional neighbour is missing."""


# AD core.


class ShapeMismatch(MdflowError):
    """Operand shapes are incompatible for the requested operation."""


class UnsupportedCombination(MdflowError):
    """The (left kind, right kind, op) triple is not a defined combination."""


class UnknownVariable(MdflowError):
    """An operator graph references a variable not registered in the system."""


class DuplicateVariable(MdflowError):
    """A variable with this name is already registered."""


class CyclicGraph(MdflowError):
    """An operator graph contains a cycle."""


class NonSquareSystem(MdflowError):
    """Declared equation rows do not match the total number of dofs."""


# Discretization.


class NonPositiveDiffusivity(MdflowError):
    """Diffusivities must be strictly positive."""


class ZeroCellFaceDistance(MdflowError):
    """A cell center coincides with a face center; transmissibility undefined."""


class MissingDiscretization(MdflowError):
    """A discretization required by an operator has not been computed."""


# Physics / model setup.


class TemperatureBelowVogelCutoff(MdflowError):
    """Temperature at or below the viscosity-law cutoff parameter."""


class MissingCondition(MdflowError):
    """An external boundary face has no assigned boundary condition."""


# Solver.


class SingularMatrix(MdflowError):
    """The Jacobian factorization failed (singular or structurally rank-deficient)."""


class NumericalBreakdown(MdflowError):
    """NaN or Inf encountered during residual assembly or solve."""


class StepFailure(MdflowError):
    """A time step failed to converge after all dt reductions."""


# Verification.


class NonPositiveError(MdflowError):
    """Convergence-rate fits require strictly positive error values."""


class OutsideDomain(MdflowError):
    """A sample point lies outside the domain of the exact solution."""


# Front end.


class ConfigError(MdflowError):
    """A scenario configuration file is malformed; message names the field."""
