"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """A run configuration failed validation.

    The message carries the offending field path, e.g. ``noise.fields[2].scale``.
    """


class NumericalError(RuntimeError):
    """An integration or estimation produced a non-finite state.

    Carries enough context (step index, time) to locate the failure.
    """

    def __init__(self, message: str, step: int | None = None, t: float | None = None):
        parts = [message]
        if step is not None:
            parts.append(f"step={step}")
        if t is not None:
            parts.append(f"t={t:.6g}")
        super().__init__("; ".join(parts))
        self.step = step
        self.t = t
