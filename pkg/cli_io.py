# cli_io.py
from __future__ import annotations

import hashlib
import json
import logging
import uuid
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError

from engine import PipelineEngine, StageError
from model import AssumptionViolation
from models import RunConfig, RunRecord, now_utc_iso
from stages import STAGE_FUNCTIONS, basis_from, build_pipeline, profile_from
from storage import ArtifactStore
from storage_sqlite import DB_DEFAULT, RunRegistry

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_CONFIG_ERROR = 2
EXIT_BOUNDS_FAILED = 3

ERROR_NAME = "error.json"


class ConfigError(ValueError):
    """Malformed or invalid run configuration; ``key`` is the dotted path when known."""

    def __init__(self, message: str, key: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        self.key = key
        self.line = line
        self.column = column
        super().__init__(message)


# -----------------------
# Parsing and serialization
# -----------------------

def _dotted(loc) -> str:
    return ".".join(str(part) for part in loc)


def parse_config(text: str, audit: bool = True) -> RunConfig:
    """JSON text -> validated RunConfig; the profile audit runs eagerly.

    Raises ConfigError for syntax or schema problems and AssumptionViolation
    when the nonlinearity profile fails an inequality.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}",
                          line=e.lineno, column=e.colno) from e
    if not isinstance(data, dict):
        raise ConfigError("config document must be a JSON object")
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key = _dotted(first.get("loc", ()))
        raise ConfigError(f"{key}: {first.get('msg')}", key=key) from e
    if audit:
        try:
            basis = basis_from(config.basis)
        except ValueError as e:
            raise ConfigError(f"basis: {e}", key="basis") from e
        # AssumptionViolation propagates with its inequality name and witness
        profile_from(config.profile, basis)
    return config


def load_config(path: str | Path, audit: bool = True) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), audit=audit)


def serialize_config(config: RunConfig) -> str:
    """Canonical JSON form: sorted keys, floats via repr."""
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()


# -----------------------
# Error records
# -----------------------

def error_record(exc: BaseException) -> Dict[str, Any]:
    stage = None
    cause = exc
    if isinstance(exc, StageError):
        stage, cause = exc.stage, exc.cause
    details: Dict[str, Any] = {}
    if isinstance(cause, AssumptionViolation):
        details = {"inequality": cause.inequality, "name": cause.name, "witness": cause.witness, "detail": cause.detail}
    else:
        for attr in ("iters", "residual", "dt", "key", "line", "column"):
            if hasattr(cause, attr):
                details[attr] = getattr(cause, attr)
    return {
        "type": type(cause).__name__,
        "message": str(cause),
        "stage": stage,
        "details": details,
    }


# -----------------------
# Run
# -----------------------

def run(config: RunConfig, registry_path: str | Path = DB_DEFAULT,
        output_dir: Optional[str] = None, seed: Optional[int] = None) -> int:
    """Execute the configured experiment; returns the process exit status."""
    updates: Dict[str, Any] = {}
    if output_dir is not None:
        updates["output_dir"] = output_dir
    if seed is not None:
        updates["seed"] = seed
    if updates:
        config = RunConfig.model_validate({**config.model_dump(), **updates})

    digest = config_hash(config)
    store = ArtifactStore(config.output_dir)
    store.write_json("config.json", json.loads(serialize_config(config)))
    registry = RunRegistry(registry_path)
    run_id = str(uuid.uuid4())
    experiment = config.experiment.name
    registry.reserve_run(run_id, experiment, digest)
    logger.info("run %s: %s (config %s) -> %s", run_id, experiment, digest[:12], config.output_dir)

    engine = PipelineEngine(STAGE_FUNCTIONS)
    context: Dict[str, Any] = {"config": config, "store": store, "config_hash": digest}
    try:
        context, log = engine.execute(build_pipeline(), context)
    except Exception as e:
        logger.exception("run %s failed", run_id)
        record = error_record(e)
        try:
            store.write_json(ERROR_NAME, record)
            store.write_manifest()
            registry.mark_run_failed(run_id, record)
        except Exception:
            logger.exception("failed to record failure of run %s", run_id)
        return EXIT_RUN_ERROR

    registry.store_run(RunRecord(
        run_id=run_id,
        experiment=experiment,
        config_hash=digest,
        log=log,
        status="completed",
        completed_at=now_utc_iso(),
    ))
    if not context.get("passed", False):
        failed = [b.name for b in context["report"].bounds if not b.passed]
        logger.warning("run %s: bounds failed: %s", run_id, ", ".join(failed))
        return EXIT_BOUNDS_FAILED
    return EXIT_OK
