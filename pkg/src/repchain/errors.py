"""Exception types shared across the package."""


class RepchainError(Exception):
    """Base class for all domain errors."""


class InvalidSignature(RepchainError):
    """A signature check failed where a valid signature is required."""


class OversizedPayload(RepchainError):
    """Transaction payload exceeds the serialization limit."""


class UnknownTransaction(RepchainError):
    """Transaction id not found in the simulation trace."""


class UnknownAddress(RepchainError):
    """An address does not correspond to a registered participant."""


class ChannelError(RepchainError):
    """Transfer-channel protocol violation (duplicate open, bad state, ...)."""


class RollupError(RepchainError):
    """Roll-up pipeline violation (empty roll-up, reconstruction mismatch)."""


class DomainError(RepchainError):
    """Invalid numeric input to a model operation."""


class ScenarioError(RepchainError):
    """Malformed scenario file or inconsistent scenario parameters."""
