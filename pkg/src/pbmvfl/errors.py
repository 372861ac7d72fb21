"""Shared exception types."""


class ProtocolError(RuntimeError):
    """An aggregated or transmitted value violates a protocol range/consistency check.

    Raised when a recovered sum falls outside its provable range, a share is
    missing or duplicated, or transcript records are malformed. Indicates a bug
    or corruption, never an expected runtime condition.
    """


class SpecError(ValueError):
    """An experiment/generation spec file failed validation.

    The message names the offending file (when known) and the JSON path of the
    bad field so it can be fixed by hand.
    """
