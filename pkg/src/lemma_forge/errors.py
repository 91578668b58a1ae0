"""Exception types shared across the pipeline."""


class LemmaForgeError(Exception):
    """Base class for all pipeline errors."""


class NetworkError(LemmaForgeError):
    """Transient transport failure; safe to retry."""


class ListingParseError(LemmaForgeError):
    """The listing feed could not be parsed; carries a payload excerpt."""

    def __init__(self, message: str, payload_excerpt: str = ""):
        super().__init__(message)
        self.payload_excerpt = payload_excerpt


class ArchiveFormatError(LemmaForgeError):
    """Downloaded source is neither a gzip/tar archive nor bare TeX."""


class NoMainTexError(LemmaForgeError):
    """No candidate root TeX file found in a source archive."""


class MacroRecursionError(LemmaForgeError):
    """Macro expansion exceeded the depth bound."""


class UnbalancedEnvironmentError(LemmaForgeError):
    """A \\begin{...} without a matching \\end{...}."""

    def __init__(self, env_name: str, offset: int):
        super().__init__(f"unbalanced environment {env_name!r} at offset {offset}")
        self.env_name = env_name
        self.offset = offset


class LlmProtocolError(LemmaForgeError):
    """Model reply did not match the expected structured format."""


class EmbeddingServiceError(LemmaForgeError):
    """Embedding backend failed after retries."""


class AuthError(LemmaForgeError):
    """Missing or rejected credentials; not retryable."""


class TransientError(LemmaForgeError):
    """Retryable upstream failure (timeouts, 5xx, rate-limit rejections)."""


class ContextLengthError(LemmaForgeError):
    """Prompt exceeds the model's context window; caller must degrade."""


class MissingFixtureError(LemmaForgeError):
    """Replay mode was asked for a request that was never recorded."""

    def __init__(self, request_hash: str):
        super().__init__(f"no recorded fixture for request {request_hash}")
        self.request_hash = request_hash


class SchemaError(LemmaForgeError):
    """A record does not satisfy its stage schema."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ManifestIntegrityError(LemmaForgeError):
    """A stage file does not match its manifest hash."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage


class StageOrderError(LemmaForgeError):
    """A stage was requested before its upstream stage was produced."""

    def __init__(self, stage: str, missing: str):
        super().__init__(
            f"cannot run stage {stage!r}: upstream stage {missing!r} is missing or stale"
        )
        self.stage = stage
        self.missing = missing
