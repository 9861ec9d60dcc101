# storage.py
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import threading
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from model import NonlinearityProfile
from models import SolverConfig
from spectral_domain import SpectralBasis, SpectralState, build_basis

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MANIFEST_NAME = "manifest.json"


def jsonable(obj: Any) -> Any:
    """Plain JSON tree: numpy to builtins, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactStore:
    """Writes run artifacts under one directory and keeps track of them for the manifest.

    Thread-safe so ensemble workers may write side files.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._written: List[str] = []
        self._lock = threading.Lock()

    # -----------------------
    # Bookkeeping
    # -----------------------
    def _track(self, name: str) -> Path:
        with self._lock:
            if name not in self._written:
                self._written.append(name)
        return self.root / name

    @property
    def artifacts(self) -> List[str]:
        with self._lock:
            return sorted(self._written)

    # -----------------------
    # Writers
    # -----------------------
    def write_json(self, name: str, payload: Any) -> Path:
        path = self._track(name)
        text = json.dumps(jsonable(payload), sort_keys=True, indent=2)
        path.write_text(text + "\n", encoding="utf-8")
        return path

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[float]]) -> Path:
        path = self._track(name)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(header))
            for row in rows:
                writer.writerow([format_float(x) for x in row])
        return path

    def write_columns(self, name: str, columns: Dict[str, np.ndarray]) -> Path:
        header = list(columns)
        data = [np.asarray(columns[h], dtype=float) for h in header]
        return self.write_csv(name, header, zip(*data))

    def write_checkpoint(self, name: str, basis: SpectralBasis, profile: NonlinearityProfile,
                         config: SolverConfig, state: SpectralState) -> Path:
        # json writes floats with repr, which round-trips bit-exactly
        payload = {
            "version": CHECKPOINT_VERSION,
            "basis": basis.descriptor(),
            "profile": {
                "g_linear": profile.g_linear,
                "g_quintic": profile.g_quintic,
                "f_terms": [[t.coefficient, t.exponent] for t in profile.f_terms],
            },
            "solver": config.model_dump(),
            "state": {
                "time": state.time,
                "u": [float(x) for x in state.u_coeffs],
                "v": [float(x) for x in state.v_coeffs],
            },
        }
        path = self._track(name)
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path

    def write_manifest(self) -> Path:
        entries = [
            {"path": name, "sha256": sha256_file(self.root / name)}
            for name in self.artifacts
            if name != MANIFEST_NAME
        ]
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps({"artifacts": entries}, sort_keys=True, indent=2) + "\n",
                        encoding="utf-8")
        logger.info("manifest lists %d artifacts in %s", len(entries), self.root)
        return path


def read_checkpoint(path: str | Path) -> Tuple[SpectralBasis, NonlinearityProfile, SolverConfig,
                                                SpectralState]:
    """Load a checkpoint; the profile comes back unaudited."""
    data: Dict[str, Any] = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
    b = data["basis"]
    basis = build_basis(b["dim"], b["modes_per_axis"], b["quad_oversample"])
    p = data["profile"]
    profile = NonlinearityProfile.from_terms(p["g_linear"], p["g_quintic"], p["f_terms"])
    config = SolverConfig(**data["solver"])
    s = data["state"]
    state = SpectralState(np.array(s["u"], dtype=float), np.array(s["v"], dtype=float), s["time"])
    state.check_basis(basis)
    return basis, profile, config, state
