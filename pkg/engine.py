# engine.py
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

from models import StageLogEntry

logger = logging.getLogger(__name__)

Condition = Callable[[Dict[str, Any]], bool]
Stage = Callable[[Dict[str, Any]], Dict[str, Any]]


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"Error executing stage {stage}: {cause}")


@dataclass
class PipelineDefinition:
    stages: List[str]
    edges: Dict[str, List[str]]
    start_stage: str
    # keyed "a->b"; an edge without a condition is always taken
    conditions: Dict[str, Condition] = field(default_factory=dict)


class PipelineEngine:
    """Runs a stage graph over a shared context dict, timing every stage."""

    def __init__(self, stage_functions: Dict[str, Stage], max_steps: int = 100):
        self.stage_functions = stage_functions
        self.max_steps = max_steps

    def execute(
        self,
        pipeline: PipelineDefinition,
        context: Dict[str, Any],
    ) -> Tuple[Dict[str, Any], List[StageLogEntry]]:
        """Execute a pipeline and return the final context and the stage log."""
        log: List[StageLogEntry] = []
        current: Optional[str] = pipeline.start_stage
        step = 0

        while current is not None and step < self.max_steps:
            if current not in pipeline.stages:
                raise ValueError(f"Unknown stage: {current}")
            if current not in self.stage_functions:
                raise ValueError(f"Stage function not found: {current}")

            step += 1
            entry_keys = sorted(context)
            try:
                start = time.perf_counter()
                context = self.stage_functions[current](context)
                duration = time.perf_counter() - start
            except Exception as e:
                raise StageError(current, e) from e
            logger.info("stage %s finished in %.3fs", current, duration)

            decision: List[str] = []
            for nxt in pipeline.edges.get(current, []):
                key = f"{current}->{nxt}"
                cond = pipeline.conditions.get(key)
                if cond is None or cond(context):
                    decision.append(nxt)

            log.append(StageLogEntry(
                step=step,
                stage_name=current,
                entry_keys=entry_keys,
                exit_keys=sorted(context),
                decision=decision,
                duration=duration,
            ))
            # first admissible successor wins
            current = decision[0] if decision else None

        if step >= self.max_steps and current is not None:
            raise RuntimeError(f"Pipeline exceeded maximum steps ({self.max_steps})")

        return context, log
