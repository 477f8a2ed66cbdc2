"""Exception hierarchy shared by every stage of the pipeline."""


class ZefavError(Exception):
    """Base class for all errors raised by this package."""


class EmptyEntity(ZefavError, ValueError):
    pass


class EmptyCatalog(ZefavError, ValueError):
    pass


class MismatchedInputs(ZefavError, ValueError):
    pass


class BackendUnreachable(ZefavError):
    pass


class ReplayMiss(ZefavError, KeyError):
    def __init__(self, digest: str):
        super().__init__(digest)
        self.digest = digest

    def __str__(self) -> str:
        return f"replay store has no entry for digest {self.digest}"


class ResponseMalformed(ZefavError):
    pass


class DuplicateDigestConflict(ZefavError, ValueError):
    pass


class MissingExamples(ZefavError, ValueError):
    pass


class NothingToVerify(ZefavError, ValueError):
    pass


class SchemaError(ZefavError, ValueError):
    pass


class LabelError(ZefavError, ValueError):
    """Raised after a full pass over a split, listing every bad label."""

    def __init__(self, offending: list[tuple[str, object]]):
        self.offending = offending
        shown = ", ".join(f"{rid}={label!r}" for rid, label in offending[:10])
        more = "" if len(offending) <= 10 else f" (+{len(offending) - 10} more)"
        super().__init__(f"{len(offending)} record(s) with unknown labels: {shown}{more}")


class SpanError(ZefavError, ValueError):
    pass


class AlignmentError(ZefavError, ValueError):
    pass


class DuplicateConfig(ZefavError, ValueError):
    pass


class ConfigError(ZefavError, ValueError):
    pass
