"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`AttireGuardError`, so callers (and the CLI) can catch one type.
"""


class AttireGuardError(Exception):
    pass


# geometry
class BoxOutsideFrame(AttireGuardError):
    pass


# decode
class EmptyVector(AttireGuardError, ValueError):
    pass


class IndexOutOfGrid(AttireGuardError, IndexError):
    pass


class CenterOutsideCell(AttireGuardError, ValueError):
    pass


class DegenerateProbability(AttireGuardError, ValueError):
    pass


class ShapeMismatch(AttireGuardError, ValueError):
    pass


# training
class LengthMismatch(AttireGuardError, ValueError):
    pass


class DivergenceDetected(AttireGuardError, ArithmeticError):
    pass


# pipeline
class MissingFrameData(AttireGuardError):
    pass


class VocabularyViolation(AttireGuardError, ValueError):
    pass


class DegenerateCrop(AttireGuardError, ValueError):
    pass


# anomaly engine
class UnknownZone(AttireGuardError, KeyError):
    def __str__(self):  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class EmptyRuleActivation(AttireGuardError):
    pass


class InvariantViolation(AttireGuardError, ValueError):
    pass


class NonMonotoneFrameId(AttireGuardError, ValueError):
    pass


# evaluation
class NoGroundTruth(AttireGuardError):
    pass


class KTooLarge(AttireGuardError, ValueError):
    pass


# io / config
class ParseError(AttireGuardError, ValueError):
    def __init__(self, message, *, source=None, line=None, field=None):
        self.source = source
        self.line = line
        self.field = field
        where = []
        if source is not None:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


class BadImage(AttireGuardError, ValueError):
    pass
