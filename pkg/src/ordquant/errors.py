"""Exception hierarchy.

Every error carries a short machine-parsable ``category`` that the CLI prints
on failure.
"""


class OrdQuantError(Exception):
    category = "error"


class InvalidSelectionError(OrdQuantError, ValueError):
    category = "invalid-selection"


class SchemaMismatchError(OrdQuantError, ValueError):
    category = "schema-mismatch"


class EmptyInputError(OrdQuantError, ValueError):
    category = "empty-input"


class ShapeError(OrdQuantError, ValueError):
    category = "shape"


class ParameterError(OrdQuantError, ValueError):
    category = "parameter"


class DegenerateTrainingError(OrdQuantError, ValueError):
    category = "degenerate-training"


class InfeasibleSampleError(OrdQuantError, ValueError):
    category = "infeasible-sample"


class ProtocolError(OrdQuantError, RuntimeError):
    category = "protocol"


class UndefinedRIEError(OrdQuantError, ZeroDivisionError):
    category = "undefined-rie"


class UndefinedMeasureError(OrdQuantError, ValueError):
    category = "undefined-measure"


class IngestionError(OrdQuantError, ValueError):
    category = "ingestion"


class ConfigNotFoundError(OrdQuantError, FileNotFoundError):
    category = "config-not-found"


class ConfigError(OrdQuantError, ValueError):
    category = "config"
