"""
Stage registry.

Stages are registered with their metadata and handler functions:

    registry = StageRegistry()

    @registry.stage(
        name="pretrain",
        description="Pretrain the denoiser on the full corpus",
        inputs=[Io("corpus", "Dataset")],
        outputs=[Io("checkpoint", "Checkpoint")],
        pre=["world"],
        post=["pretrained_checkpoint"],
        sections=["model", "pretrain"],
    )
    def pretrain(ctx: StageContext) -> Dict[str, Any]:
        ...
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

from .errors import CaloraError
from .models import ArtifactType, Io, StageContext, StageHandler, StageMetadata, StageResult

logger = logging.getLogger(__name__)


@dataclass
class RegisteredStage:
    """A stage registered with its handler."""
    metadata: StageMetadata
    handler: StageHandler


class StageRegistry:
    """Registry for pipeline stages and artifact types, in registration order."""

    def __init__(self):
        self._stages: Dict[str, RegisteredStage] = {}
        self._types: Dict[str, ArtifactType] = {}

    def stage(
        self,
        name: str,
        description: str,
        inputs: List[Io] = None,
        outputs: List[Io] = None,
        pre: List[str] = None,
        post: List[str] = None,
        sections: List[str] = None,
    ):
        """Decorator for registering a stage."""
        def decorator(handler: StageHandler):
            metadata = StageMetadata(
                name=name,
                description=description,
                inputs=inputs or [],
                outputs=outputs or [],
                pre=pre or [],
                post=post or [],
                sections=sections or [],
            )
            self.register_stage(metadata, handler)
            return handler
        return decorator

    def register_stage(self, metadata: StageMetadata, handler: StageHandler) -> None:
        unknown = [p for p in metadata.pre if p not in self._stages]
        if unknown:
            raise ValueError(f"Stage {metadata.name} depends on unregistered stages: {unknown}")
        self._stages[metadata.name] = RegisteredStage(metadata=metadata, handler=handler)
        logger.debug(f"Registered stage: {metadata.name}")

    def register_type(self, artifact_type: ArtifactType) -> None:
        self._types[artifact_type.name] = artifact_type
        logger.debug(f"Registered type: {artifact_type.name}")

    def get_stage(self, name: str) -> Optional[RegisteredStage]:
        return self._stages.get(name)

    def get_type(self, name: str) -> Optional[ArtifactType]:
        return self._types.get(name)

    def list_stages(self) -> List[StageMetadata]:
        return [rs.metadata for rs in self._stages.values()]

    def list_types(self) -> List[ArtifactType]:
        return list(self._types.values())

    def execute(self, stage_name: str, ctx: StageContext) -> StageResult:
        """
        Run one stage.

        Returns a StageResult; failures carry the error message and the
        exit code of the raised error.
        """
        registered = self._stages.get(stage_name)
        if registered is None:
            return StageResult(stage_name, {}, status="error", error=f"Stage not found: {stage_name}",
                               exit_code=1)
        try:
            logger.info(f"Running stage: {stage_name}")
            result = registered.handler(ctx)
            return StageResult(stage_name, result)
        except CaloraError as e:
            logger.error(f"Stage {stage_name} failed: {e}")
            return StageResult(stage_name, {}, status="error", error=str(e), exit_code=e.exit_code)
        except Exception as e:
            logger.exception(f"Error running stage {stage_name}: {e}")
            return StageResult(stage_name, {}, status="error", error=str(e), exit_code=1)


# Global registry instance
_global_registry: Optional[StageRegistry] = None


def get_registry() -> StageRegistry:
    """Get or create the global stage registry."""
    global _global_registry
    if _global_registry is None:
        _global_registry = StageRegistry()
    return _global_registry


def reset_registry() -> None:
    """Reset the global registry (for testing)."""
    global _global_registry
    _global_registry = None
