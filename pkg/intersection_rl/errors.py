"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class IntersectionRLError(Exception):
    """Base class for all domain errors raised by this package."""


class TopologyError(IntersectionRLError):
    """An intersection topology references lanes that do not exist."""


class DegenerateProjectionError(IntersectionRLError):
    """A connection whose middle control point collapses onto its endpoint."""

    def __init__(self, connection: int, entrance: int, exit_: int, which: str) -> None:
        self.connection = connection
        self.entrance = entrance
        self.exit = exit_
        super().__init__(
            f"Connection {connection} (entrance {entrance} -> exit {exit_}) has a "
            f"degenerate projection: {which} coincides with its lane endpoint."
        )


class ProfileError(IntersectionRLError):
    """A velocity profile cannot be built on the given path."""


class DynamicsSingularityError(IntersectionRLError):
    """The ego dynamics denominators vanish for the given longitudinal speed."""

    def __init__(self, v_x: float) -> None:
        self.v_x = v_x
        super().__init__(f"Singular ego dynamics at v_x={v_x:.6g} m/s")


class TapeError(IntersectionRLError):
    """Invalid use of a gradient tape."""


class CheckpointError(IntersectionRLError):
    """A checkpoint file is malformed or incompatible."""


class TrainingDivergedError(IntersectionRLError):
    """The policy loss became non-finite during training."""

    def __init__(self, iteration: int, value: float) -> None:
        self.iteration = iteration
        self.value = value
        super().__init__(f"J_pi diverged at iteration {iteration}: {value}")
