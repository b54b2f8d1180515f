"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class FlrouteError(Exception):
    exit_code = 1


class ConfigurationError(FlrouteError, ValueError):
    exit_code = 2


class DegenerateBatchError(ConfigurationError):
    """Train-mode batch norm was handed a single grid."""


class ProtocolError(FlrouteError):
    """Server received models that cannot be aggregated together."""

    exit_code = 2


class FormatError(FlrouteError):
    """Malformed on-disk sample, manifest or parameter artifact."""

    exit_code = 3

    def __init__(self, message: str, path=None, offset: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if offset is not None:
                where += f" @ byte {offset}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.offset = offset


class UndefinedAUCError(FlrouteError, ValueError):
    """ROC AUC requested on a set with only one label class."""

    exit_code = 4


class NumericError(FlrouteError, ArithmeticError):
    """Training produced a non-finite loss."""

    exit_code = 4
