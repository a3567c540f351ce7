"""Exception types shared across the package."""


class RmpcDriveError(Exception):
    """Base class for all package errors."""


# traffic
class NonPositiveGap(RmpcDriveError):
    """Bumper gap to the preceding vehicle is zero or negative."""


class CollisionDetected(RmpcDriveError):
    """A platoon step produced overlapping vehicles."""


# vehicle model
class SingularSpeed(RmpcDriveError):
    """The lateral error model is undefined at non-positive longitudinal speed."""


# potential field / planner
class DegenerateSigma(RmpcDriveError):
    """A convergence coefficient of the obstacle potential evaluated to zero."""


class OutOfRoad(RmpcDriveError):
    """Lateral position on or beyond a road boundary."""


class NoFeasibleCandidate(RmpcDriveError):
    """Every candidate maneuver left the road or hit the potential ceiling."""


# synthesis
class Infeasible(RmpcDriveError):
    """The semidefinite program has no feasible point."""


class SolverFailure(RmpcDriveError):
    """The SDP backend stopped without a certified solution."""


class WeightRootFailure(RmpcDriveError):
    """The state weight has a negative eigenvalue and no symmetric square root."""


class SteadyStateSingular(RmpcDriveError):
    """The steady-state target system is rank deficient."""


# simulation / io
class OffTrajectory(RmpcDriveError):
    """The ego station lies beyond the end of the active reference."""


class ParseError(RmpcDriveError):
    """Malformed scenario or table file."""


class ValidationError(RmpcDriveError):
    """Well-formed input that violates a documented invariant."""
