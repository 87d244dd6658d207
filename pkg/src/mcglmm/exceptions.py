"""Exception types shared across the package."""

from __future__ import annotations


class NumericalError(RuntimeError):
    """A linear-algebra or optimization step failed beyond recovery.

    Carries enough context to diagnose a failed fit: the step that
    failed, the outer iteration index, and the last parameter values
    that were still valid.
    """

    def __init__(self, message, *, step=None, iteration=None, last_params=None):
        super().__init__(message)
        self.step = step
        self.iteration = iteration
        self.last_params = last_params

    def __str__(self):
        base = super().__str__()
        parts = []
        if self.step is not None:
            parts.append(f"step={self.step}")
        if self.iteration is not None:
            parts.append(f"iteration={self.iteration}")
        if parts:
            return f"{base} [{', '.join(parts)}]"
        return base
