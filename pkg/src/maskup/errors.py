"""Exception hierarchy shared by every maskup module."""


class MaskupError(Exception):
    """Base class for all maskup failures."""


class ContractError(MaskupError, ValueError):
    """A caller violated a documented precondition."""


class ValidationError(MaskupError, ValueError):
    """Input data is structurally invalid (bad BIO sequence, overlapping spans, ...)."""


class ParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)


class TrainingDivergenceError(MaskupError):
    def __init__(self, epoch: int, index: int):
        self.epoch = epoch
        self.index = index
        super().__init__(f"non-finite loss at epoch {epoch}, example {index}")


class ModelFormatError(MaskupError):
    """Model or state file is corrupt or truncated."""


class VersionError(ModelFormatError):
    """File carries a schema version this build does not understand."""


class CryptoError(MaskupError):
    """Base class for key and cipher failures."""


class IntegrityError(CryptoError):
    """Authentication failed: wrong key or tampered data."""

    def __init__(self, message: str, span_index: int | None = None):
        self.span_index = span_index
        super().__init__(message)


class FormatError(CryptoError):
    """A masked document is malformed (bad placeholder, bad field)."""


class UnwrapError(CryptoError):
    """RSA-OAEP unwrap failed (wrong key, wrong label, tampered blob)."""


class AuthError(CryptoError):
    """Wrong password for an existing user."""


class KeystoreError(MaskupError):
    pass


class NotFoundError(KeystoreError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class KeystoreIntegrityError(KeystoreError):
    pass
