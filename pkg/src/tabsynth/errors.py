"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration and domain errors exit
with 1, anything that points at a broken input file (parse failures,
corrupt bundles, degenerate data) exits with 2.
"""


class TabsynthError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TabsynthError):
    """Invalid run configuration (bad flag value, inconsistent options)."""


class SchemaError(TabsynthError):
    """Data does not conform to the declared or inferred table schema."""


class ParseError(TabsynthError):
    """A file could not be parsed (CSV cells, schema JSON, plan JSON)."""


class BundleError(TabsynthError):
    """A model bundle is corrupt, truncated or from an unknown format."""


class DegenerateDataError(TabsynthError):
    """Input data carries no usable signal (e.g. zero variance everywhere)."""


class PrivacyError(TabsynthError):
    """Invalid privacy parameters or accounting state."""
