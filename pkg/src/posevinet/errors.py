class ContractError(ValueError):
    """An operation was called with inputs violating its preconditions."""


class ConfigError(ContractError):
    """A model or patch geometry that cannot be built."""


class FormatError(ValueError):
    """Malformed binary input. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointError(ValueError):
    """Checkpoint rejected on load. ``code`` identifies the failed check."""

    BAD_MAGIC = "bad_magic"
    BAD_VERSION = "bad_version"
    BAD_CRC = "bad_crc"
    SHAPE_MISMATCH = "shape_mismatch"
    TRUNCATED = "truncated"

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code
