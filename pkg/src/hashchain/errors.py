"""Exception hierarchy shared by the ledger, broker and SM layers."""


class HashchainError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(HashchainError, ValueError):
    pass


class AuthenticationFailure(HashchainError):
    """Sealed materials were opened with a secret that is not the recipient's."""


class IntegrityFailure(HashchainError):
    """Sealed materials failed their integrity tag check."""


class DecodeError(HashchainError, ValueError):
    """Bytes are not a well-formed canonical encoding."""


class InsufficientTransactions(HashchainError):
    pass


class BlockRejected(HashchainError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class AlreadyExists(HashchainError):
    pass


class NotFound(HashchainError, KeyError):
    pass


class AlreadyRegistered(HashchainError):
    pass


class Refused(HashchainError):
    """An SM declined to act on a request whose preconditions do not hold."""


class SyncHalted(HashchainError):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"sync halted at offset {offset}: {reason}")
        self.offset = offset
        self.reason = reason


class ConfigError(HashchainError, ValueError):
    pass
