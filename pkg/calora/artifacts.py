"""
Run directories.

A run lives at ``<run_root>/<config_hash>/``. Each stage writes its files to
``<stage>/`` and finishes by writing ``<stage>/stage.json`` (artifact id,
upstream ids, seed, package versions); ``manifest.json`` at the run root
indexes the stages that completed.
"""

import json
import logging
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config import ExperimentConfig, config_hash, dump_config, load_config, section_hash
from .errors import MissingArtifactError

logger = logging.getLogger(__name__)

TRACKED_PACKAGES = ["calora-testbed", "numpy", "scipy", "opencv-python-headless", "pydantic"]


def package_versions() -> Dict[str, Optional[str]]:
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


class RunStore:
    def __init__(self, config: ExperimentConfig, root=None):
        self.config = config
        self.config_hash = config_hash(config)
        self.run_dir = Path(root or config.run_root) / self.config_hash

    def stage_dir(self, stage: str) -> Path:
        path = self.run_dir / stage
        path.mkdir(parents=True, exist_ok=True)
        return path

    def path(self, stage: str, name: str) -> Path:
        return self.run_dir / stage / name

    def has_stage(self, stage: str) -> bool:
        return (self.run_dir / stage / "stage.json").exists()

    def require(self, stage: str, name: Optional[str] = None) -> Path:
        """Path of a completed stage's artifact; raises if the stage has not run."""
        record = self.run_dir / stage / "stage.json"
        if not record.exists():
            raise MissingArtifactError(stage, str(record))
        path = self.run_dir / stage / name if name else record.parent
        if not path.exists():
            raise MissingArtifactError(stage, str(path))
        return path

    def record(self, stage: str) -> Dict[str, Any]:
        return json.loads(self.require(stage, "stage.json").read_text())

    def artifact_id(self, sections: List[str], upstream: List[str]) -> str:
        upstream_ids = {u: self.record(u)["artifact_id"] for u in upstream}
        return section_hash(self.config, sections, upstream_ids)

    def write_stage(
        self,
        stage: str,
        sections: List[str],
        upstream: List[str],
        files: List[str],
        summary: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        record = {
            "stage": stage,
            "artifact_id": self.artifact_id(sections, upstream),
            "upstream": {u: self.record(u)["artifact_id"] for u in upstream},
            "seed": self.config.seed,
            "files": files,
            "summary": summary or {},
            "versions": package_versions(),
        }
        (self.stage_dir(stage) / "stage.json").write_text(json.dumps(record, indent=2, sort_keys=True))
        self._update_manifest(stage, record["artifact_id"])
        logger.info(f"Stage {stage} complete: artifact {record['artifact_id']}")
        return record

    def _update_manifest(self, stage: str, artifact_id: str) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        config_path = self.run_dir / "config.yaml"
        if not config_path.exists():
            config_path.write_text(dump_config(self.config))
        manifest_path = self.run_dir / "manifest.json"
        manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
        manifest.update({
            "name": self.config.name,
            "config_hash": self.config_hash,
            "seed": self.config.seed,
            "versions": package_versions(),
        })
        manifest.setdefault("stages", {})[stage] = artifact_id
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_run(run_dir) -> ExperimentConfig:
    """Config of a finished run directory, for ``calora compare``."""
    run_dir = Path(run_dir)
    if not (run_dir / "manifest.json").exists():
        raise MissingArtifactError("all", str(run_dir / "manifest.json"))
    return load_config(run_dir / "config.yaml")
