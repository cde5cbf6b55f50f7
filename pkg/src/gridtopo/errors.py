"""Exception hierarchy shared across the package.

Every error carries a short machine-parsable ``category`` used by the CLI
when reporting failures on stderr.
"""


class GridTopoError(Exception):
    category = "error"


class GridParseError(GridTopoError):
    """Malformed grid-description document."""

    category = "parse-error"

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class GridValidationError(GridTopoError):
    """Structurally invalid grid graph (duplicates, bad impedance, ...)."""

    category = "validation-error"


class NotRadialError(GridTopoError):
    """Operational edges do not form a spanning tree."""

    category = "not-radial"


class RootEdgeError(GridTopoError):
    """Substation is not connected by exactly one operational edge."""

    category = "root-edge"


class ModelMismatchError(GridTopoError):
    """Voltage components do not match the requested power-flow model."""

    category = "model-mismatch"


class ParameterError(GridTopoError):
    """Invalid distribution, kernel or solver parameter."""

    category = "parameter-error"


class DegenerateInputError(GridTopoError):
    """Constant (zero-variance) signal handed to a statistical test."""

    category = "degenerate-input"


class DepthAssumptionError(GridTopoError):
    """Operational tree is too shallow for unambiguous learning."""

    category = "depth-assumption"


class StructuralFailureError(GridTopoError):
    """Leaf-attachment stage cannot proceed on the recovered edge set."""

    category = "structural-failure"


class ConfigError(GridTopoError):
    """Bad experiment configuration file or CLI arguments."""

    category = "config-error"


class MeasurementFormatError(GridTopoError):
    """Malformed measurement CSV."""

    category = "measurement-format"
