"""Exception hierarchy. Every error carries a machine-parsable category
string that the CLI prints on stderr before exiting nonzero."""


class TriageError(Exception):
    category = "error"


class IngestionError(TriageError):
    """Malformed CSV content: wrong column count, unknown label, bad cell."""

    category = "ingestion-error"


class SchemaError(TriageError):
    """Invalid feature schema, or filtering removed every feature."""

    category = "schema-error"


class EmptyDatasetError(TriageError):
    """Filtering removed every subject."""

    category = "empty-dataset"


class ContractError(TriageError):
    """A caller violated an operation precondition."""

    category = "contract-error"


class DimensionError(TriageError):
    """Vector/matrix dimensions disagree with the schema."""

    category = "dimension-error"


class FitError(TriageError):
    """Training cannot proceed (single-class data, unobservable feature)."""

    category = "fit-error"


class UnsupportedOperationError(TriageError):
    category = "unsupported-operation"


class BundleError(TriageError):
    category = "bundle-error"


class BundleFormatError(BundleError):
    """Bundle bytes are not valid JSON or lack required structure."""

    category = "bundle-format-error"


class BundleVersionError(BundleError):
    """Bundle declares a format version this build does not read."""

    category = "bundle-version-error"
