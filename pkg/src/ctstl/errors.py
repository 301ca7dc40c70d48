"""Exception hierarchy shared by every stage of the planner."""


class CtstlError(Exception):
    """Base class; ``stage`` names the pipeline step that raised."""

    stage = "ctstl"


class InvalidSystem(CtstlError, ValueError):
    stage = "dynamics"


class ComplexModesUnsupported(CtstlError):
    stage = "dynamics"


class DecompositionUnstable(CtstlError):
    stage = "dynamics"


class OutOfWindow(CtstlError, ValueError):
    stage = "dynamics"


class STLParseError(CtstlError, ValueError):
    stage = "parse"

    def __init__(self, message, position=None, text=None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} (at position {position})"
            if text is not None:
                message += f"\n  {text}\n  {' ' * position}^"
        super().__init__(message)


class UnknownStateIndex(STLParseError):
    pass


class UnalignedInterval(CtstlError):
    """Raised when a temporal bound falls strictly between grid nodes."""

    stage = "ground"

    def __init__(self, endpoints):
        self.endpoints = sorted(set(endpoints))
        super().__init__(
            "interval endpoints not on the time grid: "
            + ", ".join(f"{t:g}" for t in self.endpoints)
        )


class HorizonExceeded(CtstlError):
    stage = "ground"


class InsufficientTrace(CtstlError):
    stage = "monitor"


class NoRelativeDegree(CtstlError):
    stage = "encode"


class BigMTooSmall(CtstlError):
    stage = "solve"


class BoundViolation(CtstlError):
    stage = "audit"

    def __init__(self, violations):
        self.violations = violations
        lines = [f"window {v['window']}: {v['reason']}" for v in violations]
        super().__init__("CBF bound audit failed:\n  " + "\n  ".join(lines))


class ScenarioError(CtstlError, ValueError):
    stage = "scenario"
