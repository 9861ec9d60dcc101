# tests/test_storage.py
import json

import numpy as np
import pytest

from model import NonlinearityProfile
from models import RunRecord, SolverConfig, StageLogEntry
from spectral_domain import SpectralState, build_basis
from storage import ArtifactStore, format_float, jsonable, read_checkpoint, sha256_file
from storage_sqlite import RunRegistry


class TestArtifactStore:
    def test_csv_uses_seventeen_digits(self, tmp_path):
        store = ArtifactStore(tmp_path)
        store.write_columns("series.csv", {"time": np.array([0.1, 0.2]), "value": np.array([1.0 / 3.0, 2.0])})
        lines = (tmp_path / "series.csv").read_text().splitlines()
        assert lines[0] == "time,value"
        assert lines[1] == "0.10000000000000001,0.33333333333333331"
        assert format_float(2.0) == "2"

    def test_json_is_canonical_and_plain(self):
        data = {"b": np.float64(1.5), "a": [np.int64(2), np.nan], "c": np.array([True, False])}
        assert jsonable(data) == {"b": 1.5, "a": [2, None], "c": [True, False]}

    def test_manifest_lists_every_artifact(self, tmp_path):
        store = ArtifactStore(tmp_path)
        store.write_json("report.json", {"x": 1})
        store.write_csv("a.csv", ["x"], [[1.0]])
        manifest = json.loads(store.write_manifest().read_text())
        paths = [entry["path"] for entry in manifest["artifacts"]]
        assert paths == ["a.csv", "report.json"]
        assert manifest["artifacts"][1]["sha256"] == sha256_file(tmp_path / "report.json")

    def test_checkpoint_round_trip_is_bit_exact(self, tmp_path):
        store = ArtifactStore(tmp_path)
        basis = build_basis(2, 3)
        profile = NonlinearityProfile.from_terms(1.0, 1.0, [(1.0, 3.0), (-1.0, 1.0)])
        rng = np.random.default_rng(0)
        state = SpectralState(rng.standard_normal(basis.size), rng.standard_normal(basis.size), 1.0 / 3.0)
        config = SolverConfig(dt=0.01, t_end=2.0)
        path = store.write_checkpoint("checkpoint.json", basis, profile, config, state)

        basis2, profile2, config2, state2 = read_checkpoint(path)
        assert basis2 == basis
        assert profile2 == profile
        assert not profile2.is_audited
        assert config2 == config
        assert np.array_equal(state2.u_coeffs, state.u_coeffs)
        assert np.array_equal(state2.v_coeffs, state.v_coeffs)
        assert state2.time == state.time

    def test_checkpoint_version_checked(self, tmp_path):
        path = tmp_path / "old.json"
        path.write_text(json.dumps({"version": 99}))
        with pytest.raises(ValueError):
            read_checkpoint(path)


class TestRunRegistry:
    def test_lifecycle(self, tmp_path):
        registry = RunRegistry(tmp_path / "runs.db")
        registry.reserve_run("r1", "simulate", "abc")
        assert registry.get_run("r1")["status"] == "running"

        entry = StageLogEntry(step=1, stage_name="prepare", entry_keys=["config"],
                              exit_keys=["basis", "config"], decision=["simulate"], duration=0.5)
        registry.store_run(RunRecord(run_id="r1", experiment="simulate", config_hash="abc",
                                     log=[entry], status="completed"))
        stored = registry.get_run("r1")
        assert stored["status"] == "completed"
        assert stored["completed_at"] is not None
        assert stored["log"][0]["stage_name"] == "prepare"
        assert stored["log"][0]["duration"] == 0.5

    def test_mark_failed_and_list(self, tmp_path):
        registry = RunRegistry(tmp_path / "runs.db")
        registry.reserve_run("r1", "absorb", "h1")
        registry.reserve_run("r2", "simulate", "h2")
        registry.mark_run_failed("r1", {"type": "NewtonDivergence", "message": "no"})
        failed = registry.get_run("r1")
        assert failed["status"] == "failed"
        assert failed["error"]["type"] == "NewtonDivergence"
        assert [r["run_id"] for r in registry.list_runs("absorb")] == ["r1"]
        assert len(registry.list_runs()) == 2
        assert registry.get_run("missing") is None

    def test_record_round_trip(self):
        record = RunRecord(run_id="", experiment="stationary", config_hash="x")
        assert record.run_id
        back = RunRecord.from_pydantic(record.to_pydantic())
        assert back.run_id == record.run_id
        assert back.experiment == "stationary"
        assert back.status == "running"
