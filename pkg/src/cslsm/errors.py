"""Exception types shared across the package."""


class CslsmError(Exception):
    pass


class ConfigError(CslsmError, ValueError):
    """Invalid configuration or parameter combination."""


class DivergenceError(CslsmError, ArithmeticError):
    """A solver iterate became non-finite."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite iterate at iteration {iteration}")


class FileFormatError(CslsmError, ValueError):
    pass


class BadMagicError(FileFormatError):
    pass


class UnsupportedVersionError(FileFormatError):
    pass


class TruncatedError(FileFormatError):
    """Payload length does not match the header dimensions."""


class InvalidMaskError(FileFormatError):
    pass


class NonFiniteError(CslsmError, ValueError):
    pass


class StorageError(CslsmError, OSError):
    """I/O failure; the message always names the path."""


class DenoiserError(CslsmError, RuntimeError):
    """A denoiser failed; ``slice`` is the 1-based slice index."""

    def __init__(self, slice_index, cause):
        self.slice = slice_index
        super().__init__(f"denoiser failed on slice {slice_index}: {cause}")
