"""Pipeline stages and their registration on the global registry."""

from typing import List

from ..models import StageContext, StageResult
from ..registry import StageRegistry, get_registry
from .pipeline_stages import STAGE_ORDER, register_stages


def load_pipeline() -> StageRegistry:
    """The global registry with every pipeline stage registered."""
    registry = get_registry()
    if not registry.list_stages():
        register_stages(registry)
    return registry


def run_all(ctx: StageContext, registry: StageRegistry = None) -> List[StageResult]:
    """Run every stage in order, stopping at the first failure."""
    registry = registry or load_pipeline()
    results = []
    for name in STAGE_ORDER:
        result = registry.execute(name, ctx)
        results.append(result)
        if result.status != "success":
            break
    return results


__all__ = ["STAGE_ORDER", "load_pipeline", "register_stages", "run_all"]
