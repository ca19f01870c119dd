from __future__ import annotations

from pathlib import Path


class IqMetaError(Exception):
    pass


class ValidationError(IqMetaError):
    def __init__(self, message: str, *, index: int | None = None) -> None:
        if index is not None:
            message = f"study #{index + 1}: {message}"
        super().__init__(message)
        self.index = index


class InputFormatError(IqMetaError):
    def __init__(self, path: str | Path, message: str, *, row: int | None = None) -> None:
        where = f"{path}" if row is None else f"{path}, row {row}"
        super().__init__(f"{where}: {message}")
        self.path = Path(path)
        self.row = row


class ConfigError(IqMetaError):
    def __init__(self, message: str, *, key: str | None = None) -> None:
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class NumericalError(IqMetaError):
    pass
