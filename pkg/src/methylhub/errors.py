"""Error type shared by every pipeline stage."""

from dataclasses import fields


class MethylhubError(ValueError):
    """Raised for any documented failure; ``code`` is the stable error token.

    ``stage`` is filled in by the orchestrator so CLI messages can say
    where a run failed (e.g. ``INGEST``).
    """

    def __init__(self, code: str, message: str = "", stage: str | None = None):
        self.code = code
        self.message = message
        self.stage = stage
        super().__init__(f"{code}: {message}" if message else code)

    def __str__(self) -> str:
        base = f"{self.code}: {self.message}" if self.message else self.code
        return f"[{self.stage}] {base}" if self.stage else base


def config_from_dict(cls, d: dict | None):
    """Build dataclass ``cls`` from ``d``, rejecting keys it does not declare."""
    d = dict(d or {})
    unknown = sorted(set(d) - {f.name for f in fields(cls)})
    if unknown:
        raise MethylhubError("CONFIG_INVALID", f"{cls.__name__}: unknown keys {unknown}")
    return cls(**d)
