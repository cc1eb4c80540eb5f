# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/errors.py

Exception hierarchy shared by all core modules.
- Library code raises these; only main.py and the episode loop in core/sim.py
  turn them into exit codes or episode outcomes.
- ValidationError maps to CLI exit code 1, every other SafeSetError to 2.
"""


class SafeSetError(Exception):
    """Base class for every error raised by the toolkit."""


class ValidationError(SafeSetError, ValueError):
    """
    Invalid user input or object.
    field: optional dotted path of the offending field (e.g. "train.lr").
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class ConfigError(ValidationError):
    """Run configuration rejected during validation."""


class GeomError(SafeSetError):
    """Grid construction, environment generation or augmentation failure."""


class InvalidGridError(GeomError, ValidationError):
    """Grid fields violate their invariants."""


class DynamicsError(SafeSetError):
    """Dynamics model misuse (unknown id, control outside the box)."""


class ReachError(SafeSetError):
    """Reachability solver failure (extent mismatch, numerical blow-up)."""


class NnError(SafeSetError):
    """Autodiff graph failure (shape mismatch, backward before forward)."""


class HyperError(SafeSetError):
    """Hypernetwork / main network failure (lengths, geometry, labels)."""


class MpcError(SafeSetError):
    """MPC failure (missing constraint context, NaN merit)."""


class StorageError(SafeSetError):
    """Artifact persistence failure (version, shape or blob length mismatch)."""
