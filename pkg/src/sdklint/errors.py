"""Exception hierarchy shared by all analysis stages."""


class SdkLintError(Exception):
    """Base class; ``stage`` names the pipeline step that failed."""

    stage = "internal"


class ApiDbError(SdkLintError):
    stage = "api_db"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ContainerError(SdkLintError):
    stage = "container"

    def __init__(self, message, entry=None):
        if entry is not None:
            message = f"{entry}: {message}"
        super().__init__(message)
        self.entry = entry


class MissingManifestError(ContainerError):
    pass


class MissingBytecodeError(ContainerError):
    pass


class ManifestParseError(SdkLintError):
    stage = "manifest"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} at offset {offset:#x}"
        super().__init__(message)
        self.offset = offset


class DexError(SdkLintError):
    stage = "dex"


class UnsupportedDexError(DexError):
    pass


class DexParseError(DexError):
    def __init__(self, message, class_descriptor=None):
        if class_descriptor is not None:
            message = f"{class_descriptor}: {message}"
        super().__init__(message)
        self.class_descriptor = class_descriptor


class DecodeError(DexError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} at code unit {offset}"
        super().__init__(message)
        self.offset = offset


class RuleFileError(SdkLintError):
    stage = "rules"
