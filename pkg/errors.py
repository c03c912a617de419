from typing import Any, Dict, List, Optional, Tuple


class PatchAlignError(Exception):
    """Base class for every error raised by the alignment library."""


class FrameworkError(PatchAlignError):
    def __init__(self, message: str, defects: Optional[List[str]] = None):
        self.defects = list(defects or [])
        if self.defects:
            message = f"{message}: " + "; ".join(self.defects)
        super().__init__(message)


class FrameworkParseError(FrameworkError):
    def __init__(self, message: str, path: str = "", edge: Optional[Tuple[int, int]] = None):
        self.path = path
        self.edge = edge
        super().__init__(f"{message} (at {path})" if path else message)


class DisconnectedFrameworkError(FrameworkError):
    pass


class GenerationError(PatchAlignError):
    pass


class ContractError(PatchAlignError, ValueError):
    pass


class StepFailure(PatchAlignError):
    """Armijo backtracking ran out of steps; the gradient is below numeric noise."""

    def __init__(self, message: str, diagnostics: Dict[str, Any], trace=None, last_iterate=None):
        self.diagnostics = diagnostics
        self.trace = trace
        self.last_iterate = last_iterate
        super().__init__(message)


class DegenerateAlignmentError(PatchAlignError):
    pass


class PreconditionError(PatchAlignError):
    pass
