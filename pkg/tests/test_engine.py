# tests/test_engine.py
import pytest

from engine import PipelineDefinition, PipelineEngine, StageError
from models import RunConfig
from stages import STAGE_FUNCTIONS, build_pipeline


class TestPipelineEngine:
    def test_branching_conditions_pick_first_admissible_stage(self):
        def start(ctx):
            ctx["value"] = 10
            return ctx

        def low(ctx):
            ctx["branch"] = "low"
            return ctx

        def high(ctx):
            ctx["branch"] = "high"
            return ctx

        engine = PipelineEngine({"start": start, "low": low, "high": high})
        pipeline = PipelineDefinition(
            stages=["start", "low", "high"],
            edges={"start": ["low", "high"]},
            start_stage="start",
            conditions={"start->low": lambda ctx: ctx["value"] < 5},
        )

        context, log = engine.execute(pipeline, {})
        assert context["branch"] == "high"
        assert [entry.stage_name for entry in log] == ["start", "high"]
        assert log[0].decision == ["high"]
        assert log[0].entry_keys == []
        assert log[0].exit_keys == ["value"]
        assert all(entry.duration is not None and entry.duration >= 0.0 for entry in log)

    def test_stage_failure_is_wrapped(self):
        def boom(ctx):
            raise ZeroDivisionError("bad stage")

        engine = PipelineEngine({"boom": boom})
        pipeline = PipelineDefinition(stages=["boom"], edges={}, start_stage="boom")
        with pytest.raises(StageError) as excinfo:
            engine.execute(pipeline, {})
        assert excinfo.value.stage == "boom"
        assert isinstance(excinfo.value.cause, ZeroDivisionError)
        assert "Error executing stage boom" in str(excinfo.value)

    def test_unknown_stage_and_missing_function(self):
        engine = PipelineEngine({"a": lambda ctx: ctx})
        with pytest.raises(ValueError):
            engine.execute(PipelineDefinition(stages=["a"], edges={}, start_stage="b"), {})
        with pytest.raises(ValueError):
            engine.execute(PipelineDefinition(stages=["a", "c"], edges={"a": ["c"]}, start_stage="a"), {})

    def test_step_limit(self):
        engine = PipelineEngine({"loop": lambda ctx: ctx}, max_steps=5)
        pipeline = PipelineDefinition(stages=["loop"], edges={"loop": ["loop"]}, start_stage="loop")
        with pytest.raises(RuntimeError):
            engine.execute(pipeline, {})


def _route(experiment: str):
    """Walk the experiment pipeline's edges without running any stage."""
    pipeline = build_pipeline()
    ctx = {"config": RunConfig.model_validate({"experiment": {"name": experiment}})}
    path = [pipeline.start_stage]
    while True:
        current = path[-1]
        nxt = [s for s in pipeline.edges.get(current, [])
               if pipeline.conditions.get(f"{current}->{s}", lambda c: True)(ctx)]
        if not nxt:
            return path
        path.append(nxt[0])


@pytest.mark.parametrize("experiment,expected", [
    ("simulate", ["prepare", "simulate", "regularity", "finalize"]),
    ("energy-audit", ["prepare", "simulate", "energy_audit", "finalize"]),
    ("steklov", ["prepare", "simulate", "steklov", "finalize"]),
    ("holder", ["prepare", "simulate", "holder", "finalize"]),
    ("lipschitz", ["prepare", "lipschitz", "finalize"]),
    ("absorb", ["prepare", "absorb", "finalize"]),
    ("quasistab", ["prepare", "quasistab", "finalize"]),
    ("stationary", ["prepare", "stationary", "finalize"]),
    ("attractor", ["prepare", "attractor", "finalize"]),
    ("dimension", ["prepare", "attractor", "dimension", "finalize"]),
    ("selftest", ["prepare", "selftest", "finalize"]),
])
def test_experiment_routes(experiment, expected):
    assert _route(experiment) == expected


def test_every_stage_has_a_function():
    pipeline = build_pipeline()
    assert set(pipeline.stages) == set(STAGE_FUNCTIONS)
    assert "finalize" not in pipeline.edges
