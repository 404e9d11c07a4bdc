"""
Exception hierarchy for the CA-LoRA testbed.

Every error carries an ``exit_code`` so the CLI can map failures without
inspecting messages.
"""

from typing import Optional, Sequence, Tuple


class CaloraError(Exception):
    """Base class for all testbed errors."""

    exit_code = 1


class ContractError(CaloraError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Raised when a primitive receives inputs with incompatible shapes."""

    def __init__(self, op: str, shapes: Sequence[Tuple[int, ...]], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        message = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class ConfigError(ContractError):
    """Invalid experiment configuration; ``field`` is the dotted path."""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class DivergenceError(CaloraError):
    """Training produced a non-finite loss."""

    def __init__(self, stage: str, iteration: int, loss: float):
        self.stage = stage
        self.iteration = iteration
        self.loss = loss
        super().__init__(
            f"{stage} diverged at iteration {iteration}: loss={loss!r}. "
            "Lower the learning rate or check the input data."
        )


class DegenerateGradientError(CaloraError):
    """Diffusion-loss gradient vanished for a unit whose concept gradient did not."""

    def __init__(self, unit: str, concept_rms: float, diffusion_rms: float):
        self.unit = unit
        super().__init__(
            f"Degenerate diffusion gradient for unit {unit}: "
            f"concept RMS {concept_rms:.3e} over diffusion RMS {diffusion_rms:.3e}"
        )


class InvariantViolation(CaloraError):
    """An internal invariant no caller can fix was broken."""


class MissingArtifactError(CaloraError):
    """Raised when an upstream stage artifact has not been produced."""

    exit_code = 2

    def __init__(self, stage: str, path: Optional[str] = None):
        self.stage = stage
        self.path = path
        where = f" (expected at {path})" if path else ""
        super().__init__(
            f"Missing artifact from stage '{stage}'{where}. "
            f"Run 'calora {stage} --config <path>' first."
        )
