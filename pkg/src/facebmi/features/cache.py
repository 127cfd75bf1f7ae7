"""On-disk feature cache.

Per backbone: ``<backbone_id>.feat`` is an append-only file of little-endian
float32 vectors, ``<backbone_id>.idx.json`` maps sample ids to
``{offset, dim, checksum}`` (offset in bytes, checksum = sha256 of the bytes).
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from pathlib import Path

import numpy as np

from ..exceptions import FaceBMIError
from .extractor import FeatureVector

log = logging.getLogger(__name__)
_DTYPE = np.dtype("<f4")


class CacheError(FaceBMIError):
    pass


class FeatureCache:
    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CacheError(f"cache dir {self.cache_dir} is not writable: {exc}") from exc
        if not os.access(self.cache_dir, os.W_OK):
            raise CacheError(f"cache dir {self.cache_dir} is not writable")
        self._lock = threading.Lock()
        self._index: dict[str, dict[str, dict]] = {}

    def _paths(self, backbone_id: str) -> tuple[Path, Path]:
        return self.cache_dir / f"{backbone_id}.feat", self.cache_dir / f"{backbone_id}.idx.json"

    def _load_index(self, backbone_id: str) -> dict[str, dict]:
        if backbone_id not in self._index:
            _, idx_path = self._paths(backbone_id)
            self._index[backbone_id] = json.loads(idx_path.read_text()) if idx_path.is_file() else {}
        return self._index[backbone_id]

    def put(self, sample_id: str, vector: FeatureVector) -> None:
        data = np.ascontiguousarray(vector.values, dtype=_DTYPE).tobytes()
        feat_path, idx_path = self._paths(vector.backbone_id)
        with self._lock:
            index = self._load_index(vector.backbone_id)
            with open(feat_path, "ab") as fh:
                offset = fh.seek(0, os.SEEK_END)
                fh.write(data)
            index[sample_id] = {
                "offset": offset,
                "dim": vector.dim,
                "checksum": hashlib.sha256(data).hexdigest(),
            }
            tmp = idx_path.with_suffix(".tmp")
            tmp.write_text(json.dumps(index))
            os.replace(tmp, idx_path)

    def put_many(self, items: list[tuple[str, FeatureVector]]) -> None:
        """Append several vectors with a single index rewrite."""
        if not items:
            return
        by_backbone: dict[str, list] = {}
        for sid, vec in items:
            by_backbone.setdefault(vec.backbone_id, []).append((sid, vec))
        with self._lock:
            for bid, group in by_backbone.items():
                feat_path, idx_path = self._paths(bid)
                index = self._load_index(bid)
                with open(feat_path, "ab") as fh:
                    offset = fh.seek(0, os.SEEK_END)
                    for sid, vec in group:
                        data = np.ascontiguousarray(vec.values, dtype=_DTYPE).tobytes()
                        fh.write(data)
                        index[sid] = {"offset": offset, "dim": vec.dim, "checksum": hashlib.sha256(data).hexdigest()}
                        offset += len(data)
                tmp = idx_path.with_suffix(".tmp")
                tmp.write_text(json.dumps(index))
                os.replace(tmp, idx_path)

    def get(self, sample_id: str, backbone_id: str) -> FeatureVector | None:
        index = self._load_index(backbone_id)
        entry = index.get(sample_id)
        if entry is None:
            return None
        feat_path, _ = self._paths(backbone_id)
        nbytes = entry["dim"] * _DTYPE.itemsize
        try:
            with open(feat_path, "rb") as fh:
                fh.seek(entry["offset"])
                data = fh.read(nbytes)
        except OSError:
            log.warning("feature cache file %s unreadable; treating %s as a miss", feat_path, sample_id)
            return None
        if len(data) != nbytes or hashlib.sha256(data).hexdigest() != entry["checksum"]:
            log.warning("checksum mismatch for %s/%s in feature cache; treating as a miss", backbone_id, sample_id)
            return None
        return FeatureVector(backbone_id, np.frombuffer(data, dtype=_DTYPE).astype(np.float32))

    def __contains__(self, key: tuple[str, str]) -> bool:
        sample_id, backbone_id = key
        return sample_id in self._load_index(backbone_id)


def cache_put(cache: FeatureCache, sample_id: str, vector: FeatureVector) -> None:
    cache.put(sample_id, vector)


def cache_get(cache: FeatureCache, sample_id: str, backbone_id: str) -> FeatureVector | None:
    return cache.get(sample_id, backbone_id)
