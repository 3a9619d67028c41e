"""Exception hierarchy for heatlands."""


class HeatlandsError(Exception):
    """Base class for all library errors."""


class NotStronglyElliptic(HeatlandsError):
    """Principal symbol minimum over the unit sphere is not positive.

    Carries the witness direction where the principal form attains its minimum.
    """

    def __init__(self, message, witness=None, minimum=None):
        super().__init__(message)
        self.witness = witness
        self.minimum = minimum


class NotCertified(HeatlandsError):
    """Operation requires a valid ellipticity certificate."""


class AliasingRisk(HeatlandsError):
    """Dual-lattice decay of the multiplier is insufficient for the grid.

    ``required_n`` suggests a grid size that would satisfy the decay check.
    """

    def __init__(self, message, required_n=None):
        super().__init__(message)
        self.required_n = required_n


class GridMismatch(HeatlandsError):
    """Two fields live on different lattices."""


class DegenerateFit(HeatlandsError):
    """Too few usable points for an envelope regression."""


class BranchCut(HeatlandsError):
    """Shifted symbol touches the branch cut of the fractional power."""


class TruncationOverflow(HeatlandsError):
    """Requested BCH order exceeds the implemented series depth."""


class OutsideChart(HeatlandsError):
    """Chart point lies outside the model's chart ball."""


class ChartDegenerate(HeatlandsError):
    """Chart Jacobian singular on the grid."""


class EffectiveOrderViolation(HeatlandsError):
    """A remainder coefficient fails its required vanishing order at 0."""


class SupportLeak(HeatlandsError):
    """Field mass escaped the tracked chart region."""

    def __init__(self, message, leaked=None):
        super().__init__(message)
        self.leaked = leaked


class TimeGridTooCoarse(HeatlandsError):
    """Graded time-quadrature error estimate exceeds tolerance."""


class Diverging(HeatlandsError):
    """Parametrix term norms grew for several consecutive orders."""


class BoundViolation(HeatlandsError):
    """No sane envelope constants fit the measured norms."""


class LambdaTooSmall(HeatlandsError):
    """Laplace-transform parameter below the fitted growth bound."""


class ContinuityUnmeasured(HeatlandsError):
    """Representation handle lacks (M, rho) continuity constants."""


class StencilOverflow(HeatlandsError):
    """Requested derivative order exceeds what the carrier grid resolves."""


class InsufficientLevels(HeatlandsError):
    """Growth profile has too few computed levels for a radius estimate."""
