"""Exception types shared across the package."""


class InvalidRotationError(ValueError):
    """Quaternion / rotation matrix is not a valid unit rotation."""


class ShapeError(ValueError):
    """Array shapes disagree with the operation's contract."""


class ModeError(ValueError):
    """Unknown mode / ablation tag."""


class RenderError(RuntimeError):
    """Degenerate camera or ray during rendering."""


class FormatError(ValueError):
    """Malformed on-disk artifact. Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """Invalid run configuration. Names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key
