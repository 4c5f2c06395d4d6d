"""Exception types shared across the pipeline."""


class DnshinError(Exception):
    """Base class for all errors raised by this package."""


class MalformedLineError(DnshinError, ValueError):
    """An input line that cannot be parsed into a record."""


class UnsupportedRecordTypeError(MalformedLineError):
    """A record type outside A/AAAA/CNAME; counted and skipped by readers."""


class ConflictingEntryError(DnshinError, ValueError):
    """The same exact name mapped to two different classes within one label file."""


class UnknownNodeError(DnshinError, KeyError):
    """A record references a name missing from the node registry."""


class EmptyGraphError(DnshinError, ValueError):
    """Pruning removed every domain; thresholds are misconfigured for this data."""


class DimensionMismatchError(DnshinError, ValueError):
    """Matrix operands with incompatible shapes."""


class ClosedFormSizeError(DnshinError, ValueError):
    """Dense closed-form solve requested above the configured size cap."""


class InfeasibleScenarioError(DnshinError, ValueError):
    """A synthetic scenario whose knobs cannot be satisfied."""


class EmptyTruthError(DnshinError, ValueError):
    """Evaluation requested against an empty ground-truth set."""


class ConfigError(DnshinError, ValueError):
    """Invalid engine configuration."""
