"""Exception hierarchy.

``InputError`` subclasses describe bad user input (files, formats, manifests);
the CLI maps them to exit code 3.  ``InvariantViolation`` signals a broken
internal guarantee and maps to exit code 4.
"""


class CascadeError(Exception):
    """Base class for every error raised by this package."""


class InputError(CascadeError):
    pass


class InvariantViolation(CascadeError):
    pass


# imagecore
class UnsupportedFormat(InputError):
    pass


class CorruptHeader(InputError):
    pass


class OutOfBounds(CascadeError, ValueError):
    pass


# haar
class FeatureOutOfWindow(CascadeError, ValueError):
    pass


class WindowTooSmall(CascadeError, ValueError):
    pass


# boost / cascade
class DegenerateSamples(InputError):
    pass


class NoUsefulFeature(CascadeError):
    pass


class EmptyValidationSet(CascadeError, ValueError):
    pass


class InsufficientNegatives(InputError):
    def __init__(self, message, found=0, needed=0):
        super().__init__(message)
        self.found = found
        self.needed = needed


# detect
class ImageSmallerThanWindow(InputError):
    pass


# cascadexml
class FormatError(InputError):
    """Base for model-file parsing failures."""


class MalformedXml(FormatError):
    pass


class MalformedJson(FormatError):
    pass


class SchemaViolation(FormatError):
    pass


class UnsupportedFeatureType(FormatError):
    pass


class UnsupportedTreeShape(FormatError):
    pass


class UnsupportedModelFormat(FormatError, UnsupportedFormat):
    """Legacy haartraining documents and other unknown model roots."""


# dataset
class MalformedManifest(InputError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MissingFile(MalformedManifest, FileNotFoundError):
    pass


class RectOutOfImage(MalformedManifest):
    pass
