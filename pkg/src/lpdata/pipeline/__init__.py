"""Resumable, shard-parallel runner binding the stages in their fixed order."""

from lpdata.pipeline.config import (
    CANONICAL_STAGES,
    PipelineConfig,
    from_mapping,
    load_config,
)
from lpdata.pipeline.manifest import RunManifest, StageRecord, stats
from lpdata.pipeline.runner import RunInProgress, StageFailure, final_outputs, run
from lpdata.pipeline.watch import poll_once, watch

__all__ = [
    "CANONICAL_STAGES",
    "PipelineConfig",
    "RunInProgress",
    "RunManifest",
    "StageFailure",
    "StageRecord",
    "final_outputs",
    "from_mapping",
    "load_config",
    "poll_once",
    "run",
    "stats",
    "watch",
]
