"""Exception hierarchy shared across the package."""

from __future__ import annotations


class KaleError(Exception):
    """Base class for all package-specific errors."""


class InputError(KaleError):
    """User-facing input problem (bad file, bad config, bad flag value)."""


# --- corpus ingestion ---------------------------------------------------


class MalformedRecord(InputError):
    def __init__(self, line_no: int, detail: str):
        super().__init__(f"line {line_no}: {detail}")
        self.line_no = line_no
        self.detail = detail


class DuplicateId(InputError):
    def __init__(self, record_id: str):
        super().__init__(f"duplicate record id {record_id!r}")
        self.record_id = record_id


class MissingField(InputError):
    def __init__(self, field: str, line_no: int | None = None):
        loc = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"missing field {field!r}{loc}")
        self.field = field
        self.line_no = line_no


class EmptyVocabulary(InputError):
    """No token survived tokenization and stopword filtering."""


class DegenerateInput(InputError):
    """An embedding with zero norm cannot be clustered by cosine."""


# --- graph -------------------------------------------------------------


class ProviderFailure(KaleError):
    def __init__(self, node_id: str, cause: Exception):
        super().__init__(f"embedding provider failed for node {node_id!r}: {cause}")
        self.node_id = node_id
        self.cause = cause


class UnknownCategory(KaleError):
    def __init__(self, type_name: str, label: str):
        super().__init__(f"category {label!r} was never observed for type {type_name}")
        self.type_name = type_name
        self.label = label


class TypeMismatch(KaleError):
    """Meta-path traversal started from a node of the wrong type."""


class SchemaVersionMismatch(InputError):
    """Serialized artifact carries an unknown magic/version marker."""


class ChecksumMismatch(InputError):
    """A section checksum failed; the file is corrupt."""


# --- numeric core ------------------------------------------------------


class ShapeMismatch(KaleError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")
        self.shapes = shapes


class NonFiniteOutput(KaleError):
    """A checked function produced NaN or infinity."""


# --- graph encoder -----------------------------------------------------


class MissingTypeProjection(KaleError):
    def __init__(self, type_name: str):
        super().__init__(f"no type-wise projection registered for node type {type_name}")
        self.type_name = type_name


class NoMetaPaths(KaleError):
    """Semantic attention needs at least one meta-path."""


# --- caption model -----------------------------------------------------


class UndecodableImage(InputError):
    def __init__(self, image_ref: str, detail: str):
        super().__init__(f"cannot decode image {image_ref!r}: {detail}")
        self.image_ref = image_ref


class PrefixTooLong(KaleError):
    def __init__(self, length: int, max_len: int):
        super().__init__(f"decoder prefix of length {length} exceeds max length {max_len}")
        self.max_len = max_len


# --- training ----------------------------------------------------------


class LengthMismatch(KaleError):
    """Logit rows and target tokens disagree in length."""


class NonFiniteGradient(KaleError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


# --- metrics -----------------------------------------------------------


class CorpusTooSmall(InputError):
    """Corpus-level statistics need at least two evaluated items."""


# --- configuration -----------------------------------------------------


class ConfigError(InputError):
    """Bad key, bad value, or unreadable configuration file."""
