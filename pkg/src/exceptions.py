"""
Error types raised across the B-PL-PINN package.

Everything derives from BPLError so callers (the CLI in particular) can catch
the whole family. The second base class keeps the errors compatible with code
that expects the builtin exception kinds.
"""


class BPLError(Exception):
    """Base class for all package errors."""


class UsageError(BPLError, ValueError):
    """A precondition of an operation was violated by the caller."""


class DomainError(BPLError, ArithmeticError):
    """A mathematical operation left its domain (e.g. division by zero)."""


class DivergenceError(BPLError, RuntimeError):
    """Optimization produced a non-finite gradient or loss."""

    def __init__(self, message: str, epoch: int | None = None):
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)


class SamplerError(BPLError, RuntimeError):
    """MCMC sampling could not proceed (e.g. nothing accepted during burn-in)."""

    def __init__(self, message: str, chain: int | None = None, iteration: int | None = None):
        self.chain = chain
        self.iteration = iteration
        self.detail = message
        super().__init__(self._format())

    def _format(self) -> str:
        where = []
        if self.iteration is not None:
            where.append(f"iteration {self.iteration}")
        if self.chain is not None:
            where.append(f"chain {self.chain}")
        return f"{self.detail} ({', '.join(where)})" if where else self.detail

    def at_iteration(self, iteration: int) -> "SamplerError":
        """Returns a copy of this error tagged with the outer-loop iteration."""
        return SamplerError(self.detail, chain=self.chain, iteration=iteration)


class ConfigError(BPLError, ValueError):
    """Invalid run configuration; `key` names the offending setting."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"Invalid configuration key '{key}': {message}")
