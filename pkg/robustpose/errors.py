import typing

__all__ = [
    "RobustPoseError",
    "DegenerateConfiguration",
    "NonFiniteObjective",
    "EmptyProjection",
    "EmptyDetectedMask",
    "EmptyMask",
    "DimensionMismatch",
    "InvalidPose",
    "ConfigError",
    "SceneFormatError",
]

class RobustPoseError(RuntimeError):
    """Base class of all errors raised by `robustpose`."""

class DegenerateConfiguration(RobustPoseError):
    """The keypoint configuration does not define a unique rotation."""

    def __init__(self, msg: str, rank: int) -> None:
        """
        Parameters
        ----------
        msg : str
            The text to show
        rank : int
            The numerical rank of the centered model keypoints
        """
        super(DegenerateConfiguration, self).__init__(msg)
        self.msg = msg
        self.rank = rank

    def __str__(self) -> str:
        return "{} (centered keypoint rank {}, need at least 2)".format(
            self.msg, self.rank)

class NonFiniteObjective(RobustPoseError):
    """The corrector objective evaluated to a non-finite value."""

    def __init__(self, msg: str, iteration: int) -> None:
        """
        Parameters
        ----------
        msg : str
            The text to show
        iteration : int
            The descent iteration the value was observed in, 0 for the
            initial evaluation
        """
        super(NonFiniteObjective, self).__init__(msg)
        self.msg = msg
        self.iteration = iteration

    def __str__(self) -> str:
        return "{} (iteration {})".format(self.msg, self.iteration)

class EmptyProjection(RobustPoseError):
    """No point of a posed cloud lands inside the image."""

class EmptyDetectedMask(RobustPoseError):
    """The detected mask has zero area."""

class EmptyMask(RobustPoseError):
    """The mask contains no pixel with a valid depth."""

class DimensionMismatch(RobustPoseError, ValueError):
    """An array does not have the size a parameter set was built for."""

    def __init__(self, msg: str, expected: typing.Any,
                 actual: typing.Any) -> None:
        """
        Parameters
        ----------
        msg : str
            The text to show
        expected : any
            The expected size or shape
        actual : any
            The size or shape that was given
        """
        super(DimensionMismatch, self).__init__(msg)
        self.msg = msg
        self.expected = expected
        self.actual = actual

    def __str__(self) -> str:
        return "{} (expected {}, got {})".format(self.msg, self.expected,
                                                 self.actual)

class InvalidPose(RobustPoseError, ValueError):
    """The rotation of a pose is not a proper rotation matrix."""

class ConfigError(RobustPoseError, ValueError):
    """An experiment configuration value is missing or invalid."""

    def __init__(self, key: str, reason: str) -> None:
        """
        Parameters
        ----------
        key : str
            The dotted path of the offending configuration key
        reason : str
            Why the value is rejected
        """
        super(ConfigError, self).__init__(reason)
        self.key = key
        self.reason = reason

    def __str__(self) -> str:
        return "Invalid configuration value '{}': {}".format(self.key,
                                                             self.reason)

class SceneFormatError(RobustPoseError, ValueError):
    """A scene dataset on disk is malformed."""

    def __init__(self, path: typing.Any, reason: str) -> None:
        """
        Parameters
        ----------
        path : str or pathlib.PurePath
            The file or directory that could not be read
        reason : str
            What is wrong with it
        """
        super(SceneFormatError, self).__init__(reason)
        self.path = path
        self.reason = reason

    def __str__(self) -> str:
        return "Malformed scene data in {}: {}".format(self.path, self.reason)
