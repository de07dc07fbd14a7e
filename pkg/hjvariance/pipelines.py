# Artifact pipelines for hjvariance
#
# Every file a command writes goes through one ArtifactPipeline so the
# manifest can list exactly what a run produced. Output is deterministic:
# sorted JSON keys and repr-formatted floats in CSV.

import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from .env_lattice import Environment, save_snapshot
from .fpp_baseline import EdgeEnvironment, save_edge_snapshot
from .hjb_solver import ValueTable
from .items import InfluenceRecord, Manifest, SampleRow, VarianceCurve

logger = logging.getLogger(__name__)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ArtifactPipeline:
    """Writes run artifacts into one output directory and records their names."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.artifacts: List[str] = []

    def _path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.directory / name

    def process_json(self, name: str, payload: Any) -> Path:
        if isinstance(payload, BaseModel):
            payload = payload.model_dump(mode="json")
        elif isinstance(payload, list) and payload and isinstance(payload[0], BaseModel):
            payload = [item.model_dump(mode="json") for item in payload]
        path = self._path(name)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Wrote {path}")
        return path

    def process_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self._path(name)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        logger.info(f"Wrote {path}")
        return path

    def process_jsonl(self, name: str, records: Iterable[BaseModel]) -> Path:
        path = self._path(name)
        with path.open("w", encoding="utf-8") as handle:
            for record in records:
                handle.write(record.model_dump_json() + "\n")
        logger.info(f"Wrote {path}")
        return path

    def process_snapshot(self, name: str, env: Environment) -> Path:
        return save_snapshot(env, self._path(name))

    def process_edge_snapshot(self, name: str, env: EdgeEnvironment) -> Path:
        return save_edge_snapshot(env, self._path(name))

    def process_value_table(self, header_name: str, data_name: str, table: ValueTable) -> Path:
        """Flat little-endian float64 layers plus a JSON header describing them."""
        layers = np.stack(table.layers).astype("<f8")
        data_path = self._path(data_name)
        layers.tofile(data_path)
        header = {
            "dtype": "<f8",
            "shape": list(layers.shape),
            "layer_order": "remaining_steps" if table.has_layers else "final_only",
            "grid": {
                "dimension": table.grid.dimension,
                "refinement": table.grid.refinement,
                "origin": list(table.grid.origin),
                "half_width": table.grid.half_width,
                "q_max": table.grid.q_max,
            },
            "solver": table.params.model_dump(mode="json"),
            "kinetic": table.kinetic.model_dump(mode="json"),
            "payoff": table.payoff.model_dump(mode="json"),
            "value": table.value,
            "environment": {"box": [list(axis) for axis in table.env_box], "seed": table.env_seed},
            "data_file": data_name,
        }
        return self.process_json(header_name, header)

    def process_manifest(self, name: str, manifest: Manifest) -> Path:
        manifest = manifest.model_copy(update={"artifacts": list(self.artifacts)})
        path = self.directory / name
        path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        return path


SAMPLE_HEADER = ("t", "index", "seed", "u", "shifted_u", "shift")
FIT_MODELS = ("linear", "t_over_log_t", "power")
PLOT_HEADER = (
    "t", "samples", "mean", "variance", "ci_low", "ci_high", "variance_over_t",
    *(f"fit_{model}" for model in FIT_MODELS),
)


def sample_rows(rows: Sequence[SampleRow]) -> List[List[Any]]:
    return [
        [r.t, r.index, r.seed, r.u, r.shifted_u, " ".join(str(c) for c in r.shift) if r.shift else None]
        for r in rows
    ]


def plot_rows(curve: VarianceCurve) -> List[List[Any]]:
    """One row per horizon; fitted columns stay empty when the curve has no growth fits."""
    rows = []
    for p in curve.points:
        fitted = [curve.growth.fit(model).predict(p.t) if curve.growth else None for model in FIT_MODELS]
        rows.append([p.t, p.samples, p.mean, p.variance, p.ci_low, p.ci_high, p.variance / p.t, *fitted])
    return rows


def survey_header(dimension: int) -> List[str]:
    return (
        ["env_seed"]
        + [f"j{i}" for i in range(dimension)]
        + ["omega_j", "u", "sigma_u", "rho", "delta_weighted", "important", "very_important", "far_field", "g_event"]
    )


def survey_rows(records: Sequence[InfluenceRecord], env_seed: int, g_event: Optional[bool]) -> List[List[Any]]:
    return [
        [env_seed, *r.site, r.omega, r.u, r.sigma_u, r.rho, r.delta_weighted,
         r.important, r.very_important, r.far_field, g_event]
        for r in records
    ]
