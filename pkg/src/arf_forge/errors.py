"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1,
integrity failures exit 2.
"""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class InjectionError(ValueError):
    """An anomaly plan cannot be applied to the series it targets."""


class PairingError(ValueError):
    """A series pair violates the pairing preconditions."""


class SerializationError(RuntimeError):
    """A series cannot be fit into the requested text budget."""


class IntegrityError(RuntimeError):
    """Stored benchmark state is internally inconsistent."""


class HarnessError(RuntimeError):
    """The evaluation loop failed in a way that retries cannot fix."""
