"""Exception types shared across the package.

Protocol outcomes that a party is expected to handle (password failure,
channel integrity failure, abort) are exceptions here so that callers can
not silently ignore them; plain bad input is ConfigurationError.
"""


class ItstoreError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(ItstoreError):
    """Invalid parameters or scenario config; message names the field path."""


class ProtocolError(ItstoreError):
    """A party violated the protocol (bad indices, malformed request...)."""


class ImproperRequestError(ProtocolError):
    """Reconstruction request with a holder subset of the wrong size."""


class KeySupplyError(ItstoreError):
    """Key or randomness demand exceeds what the supply can deliver."""


class SingleUseError(ItstoreError):
    """A one-time seed, pad, or precomputed tuple was used twice."""


class PrecomputationExhaustedError(ItstoreError):
    """A holder has no unconsumed precomputed tuple left."""


class ChannelIntegrityError(ItstoreError):
    """Authentication tag mismatch on a received envelope."""


class ReplayError(ChannelIntegrityError):
    """Envelope sequence number did not increase."""


class TamperDetectedError(ItstoreError):
    """Persisted store bytes fail their hash-chain check."""


class PasswordFailureError(ItstoreError):
    """Reconstruction MAC check failed: wrong password or corrupt shares."""


class ReconstructionAbortError(ItstoreError):
    """Fewer live holders than the threshold; the whole scheme aborts."""
