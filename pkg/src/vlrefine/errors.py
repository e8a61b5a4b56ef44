"""Exception hierarchy shared by every module.

Each class name doubles as the machine-readable error kind printed by the CLI.
"""


class VlrefineError(Exception):
    """Base class for all errors raised by this package."""

    @property
    def kind(self):
        return type(self).__name__


# treebank
class TreeSyntaxError(VlrefineError, ValueError):
    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} at position {position}"
        super().__init__(message)


class UnbalancedBrackets(TreeSyntaxError):
    pass


class EmptyLabel(TreeSyntaxError):
    pass


class TrailingGarbage(TreeSyntaxError):
    pass


# planner
class NoNounPhrase(VlrefineError, LookupError):
    pass


class NoVerbPhrase(VlrefineError, LookupError):
    pass


# tensor
class ShapeMismatch(VlrefineError, ValueError):
    pass


class NonScalarLoss(VlrefineError, ValueError):
    pass


class MissingGrad(VlrefineError, ValueError):
    pass


class FormatVersionMismatch(VlrefineError, ValueError):
    pass


class TensorFormatError(VlrefineError, ValueError):
    pass


# embed
class EmptyPhrase(VlrefineError, ValueError):
    pass


class UnknownPhrase(VlrefineError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DimMismatch(VlrefineError, ValueError):
    def __init__(self, row, expected, got):
        self.row, self.expected, self.got = row, expected, got
        super().__init__(f"row {row}: expected dim {expected}, got {got}")


class EmbeddingParseError(VlrefineError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


# refiner
class EmptyChain(VlrefineError, ValueError):
    pass


# heads / metrics
class EmptyCandidates(VlrefineError, ValueError):
    pass


class LengthMismatch(VlrefineError, ValueError):
    pass


class NonBinaryGroundTruth(VlrefineError, ValueError):
    pass


class EmptyQuerySet(VlrefineError, ValueError):
    pass


# synth / cli
class SampleIOError(VlrefineError, OSError):
    pass


class DatasetNotFound(VlrefineError, FileNotFoundError):
    pass


class Divergence(VlrefineError, FloatingPointError):
    pass


class ConfigError(VlrefineError, ValueError):
    pass
