# core/output_writer.py
import hashlib
import json
from pathlib import Path
from typing import Dict, Optional, Union

import geopandas as gpd
import pandas as pd
from loguru import logger

MANIFEST_NAME = "manifest.json"
_CHUNK = 1 << 20


def file_digest(path: Union[str, Path]) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(_CHUNK), b""):
            sha.update(block)
    return sha.hexdigest()


class OutputWriter:
    """Écrit les artefacts d'une exécution et tient le manifeste (empreintes, nombres de lignes)"""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs: Dict[str, Dict] = {}
        self.outputs: Dict[str, Dict] = {}

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def record_input(self, role: str, path: Optional[Union[str, Path]]):
        if path is None or not Path(path).exists():
            return
        path = Path(path)
        self.inputs[role] = {"path": str(path), "bytes": path.stat().st_size, "sha256": file_digest(path)}

    def _record_output(self, name: str, rows: int):
        self.outputs[name] = {"rows": int(rows), "sha256": file_digest(self.path(name))}
        logger.info(f"Artefact écrit: {name} ({rows} lignes)")

    def record_file(self, name: str, path: Optional[Union[str, Path]], rows: Optional[int] = None):
        """Inscrit au manifeste un fichier produit hors du répertoire de sortie"""
        if path is None or not Path(path).exists():
            return
        self.outputs[name] = {"path": str(path), "rows": rows, "sha256": file_digest(path)}

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        target = self.path(name)
        frame.to_csv(target, index=False, lineterminator="\n", na_rep="")
        self._record_output(name, len(frame))
        return target

    def write_geojson(self, name: str, gdf: gpd.GeoDataFrame) -> Path:
        target = self.path(name)
        if target.exists():
            target.unlink()
        gdf.to_file(target, driver="GeoJSON")
        self._record_output(name, len(gdf))
        return target

    def write_manifest(self, command: str, config_hash: str, counters: Optional[Dict] = None) -> Path:
        """Manifeste sans horodatage: deux exécutions identiques donnent le même fichier"""
        manifest = {
            "command": command,
            "config_hash": config_hash,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "counters": counters or {},
        }
        target = self.path(MANIFEST_NAME)
        with open(target, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
        logger.info(f"Manifeste écrit: {target}")
        return target
