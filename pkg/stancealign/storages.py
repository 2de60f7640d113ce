import json
import os
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple, Union

RECORD_TYPES = ("score", "position", "inversion", "failure", "train")


def _check_record(record: Dict[str, Any]) -> None:
    if record.get("record") not in RECORD_TYPES:
        raise ValueError(f"Result record type must be one of {', '.join(RECORD_TYPES)}, got {record.get('record')!r}")


def _encode(records: Sequence[Dict[str, Any]]) -> str:
    for record in records:
        _check_record(record)
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in records)


class ResultStore(ABC):
    """Append-only collection of typed result records."""

    @abstractmethod
    def append_many(self, records: Sequence[Dict[str, Any]]) -> None:
        """Append ``records`` in one write; a reader sees all of them or none."""
        pass

    def append(self, record: Dict[str, Any]) -> None:
        self.append_many([record])

    @abstractmethod
    def load_records(self) -> List[Dict[str, Any]]:
        pass

    def records(self, record_type: Optional[str] = None) -> List[Dict[str, Any]]:
        rows = self.load_records()
        if record_type is None:
            return rows
        return [r for r in rows if r.get("record") == record_type]

    def completed_cells(self) -> Set[Tuple[str, str]]:
        """(config hash, unit id) of matrix cells that finished with scores."""
        return {(r["config_hash"], r["unit_id"]) for r in self.records("score") if "config_hash" in r}


class LocalFileStorage(ResultStore):
    def __init__(self, storage_path: Optional[Union[str, Path]] = None):
        self.storage_path = Path(storage_path or os.getenv("STANCEALIGN_RESULTS_ROOT") or "results")
        self.results_file = self.storage_path / "results.jsonl"
        self._lock = threading.Lock()

    def append_many(self, records: Sequence[Dict[str, Any]]) -> None:
        text = _encode(records)
        if not text:
            return
        with self._lock:
            self.storage_path.mkdir(parents=True, exist_ok=True)
            with open(self.results_file, "a", encoding="utf-8") as f:
                f.write(text)

    def load_records(self) -> List[Dict[str, Any]]:
        if not self.results_file.exists():
            return []
        with open(self.results_file, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]


class GcsStorage(ResultStore):
    def __init__(self, bucket: Optional[str] = None, prefix: Optional[str] = None):
        self.bucket = bucket or os.getenv("STANCEALIGN_GCS_BUCKET")
        self.prefix = prefix or os.getenv("STANCEALIGN_GCS_PREFIX", "stancealign")

        if not self.bucket:
            raise ValueError("GCS bucket must be provided either as argument or STANCEALIGN_GCS_BUCKET environment variable")

        self.prefix = self.prefix.strip("/") + "/"
        self.results_blob_name = f"{self.prefix}results.jsonl"
        self.client = self._import_gcs_client()
        self._lock = threading.Lock()

    def _import_gcs_client(self):
        """Import Google Cloud Storage client"""
        try:
            from google.cloud import storage
            return storage.Client()
        except ImportError:
            raise ImportError("google-cloud-storage package is required for GcsStorage. Install with: pip install stancealign[gcs]")

    def _blob(self):
        return self.client.bucket(self.bucket).blob(self.results_blob_name)

    def _read_text(self) -> str:
        blob = self._blob()
        return blob.download_as_text() if blob.exists() else ""

    def append_many(self, records: Sequence[Dict[str, Any]]) -> None:
        text = _encode(records)
        if not text:
            return
        with self._lock:
            try:
                self._blob().upload_from_string(self._read_text() + text, content_type="application/x-ndjson")
            except Exception as e:
                raise RuntimeError(f"Failed to append results to GCS: {e}")

    def load_records(self) -> List[Dict[str, Any]]:
        try:
            text = self._read_text()
        except Exception as e:
            raise RuntimeError(f"Failed to read results from GCS: {e}")
        return [json.loads(line) for line in text.splitlines() if line.strip()]


def make_store(location: Optional[Union[str, Path]] = None) -> ResultStore:
    """``gs://bucket/prefix`` selects GCS; anything else is a local directory."""
    if location is not None and str(location).startswith("gs://"):
        bucket, _, prefix = str(location)[5:].partition("/")
        return GcsStorage(bucket=bucket, prefix=prefix or None)
    return LocalFileStorage(location)
