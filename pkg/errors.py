"""
Exception hierarchy shared by all toolkit modules
"""


class PhotocalError(Exception):
    """Base class of every error raised by the toolkit"""


class ModelDomainError(PhotocalError, ValueError):
    """Input lies outside the valid domain of a camera or photometric model"""


class DimensionMismatchError(PhotocalError, ValueError):
    """Images, maps or arrays that must agree in shape do not"""


class CalibrationError(PhotocalError):
    """A calibration problem cannot be solved from the given data"""


class DegenerateConfigurationError(PhotocalError, ValueError):
    """Point configuration does not constrain the requested estimate"""


class TrajectoryError(PhotocalError, ValueError):
    """Invalid trajectory, ground truth or drift-injection request"""


class DatasetFormatError(PhotocalError):
    """A dataset file is missing or ill-formed"""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")
