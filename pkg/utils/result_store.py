"""
Result Store Module
Flat-file run directories: an immutable manifest plus append-only JSONL result records
"""

import hashlib
import json
import logging
import os
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

from pydantic import ValidationError

from assets.prompt_templates import template_hash
from utils.errors import ConfigError, MissingRunError
from utils.metrics import PolicyRanking
from utils.schemas import OracleRecord, ResultRecord, RunManifest
from utils.trajectory_core import dumps_record

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
RESULTS_FILE = "results.jsonl"
REQUESTS_FILE = "requests.jsonl"
ROUND_TRAJECTORIES_FILE = "round_trajectories.jsonl"
SUMMARY_JSON = "summary.json"
SUMMARY_TEXT = "summary.txt"


def utc_timestamp() -> str:
    """ISO-8601 UTC time, pinned by SOURCE_DATE_EPOCH when it is set"""

    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch else datetime.now(timezone.utc)
    return moment.replace(microsecond=0).isoformat().replace("+00:00", "Z")


def file_digest(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def compute_run_id(command: str, inputs: Dict[str, str], parameters: Dict[str, Any]) -> str:
    """Content hash of everything that determines a run's outputs"""

    doc = {"command": command, "inputs": inputs, "parameters": parameters, "templates": template_hash()}
    blob = json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class ResultStore:
    """Run directory helper for writing and reading one run's artifacts"""

    def __init__(self, run_dir: Union[str, Path]):
        self.run_dir = Path(run_dir)
        self._write_lock = threading.Lock()
        self._seen = set()

    @property
    def manifest_path(self) -> Path:
        return self.run_dir / MANIFEST_FILE

    @property
    def results_path(self) -> Path:
        return self.run_dir / RESULTS_FILE

    @property
    def requests_path(self) -> Path:
        return self.run_dir / REQUESTS_FILE

    # ===== Run Lifecycle =====

    def create(self):
        """
        Prepare a fresh run directory

        Raises:
            FileExistsError: the directory already holds a finished run
        """

        if self.manifest_path.exists():
            raise FileExistsError(f"{self.run_dir} already holds a run; choose another --out")
        self.run_dir.mkdir(parents=True, exist_ok=True)
        for name in (RESULTS_FILE, REQUESTS_FILE, ROUND_TRAJECTORIES_FILE):
            path = self.run_dir / name
            if path.exists():
                path.unlink()
        self.results_path.touch()

    def write_manifest(self, manifest: RunManifest) -> Path:
        """Write the manifest once; it is never rewritten"""

        with self._write_lock:
            if self.manifest_path.exists():
                raise FileExistsError(f"manifest of {self.run_dir} is already written")
            record = manifest.model_dump(mode="json")
            self.manifest_path.write_text(json.dumps(record, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
                                          encoding="utf-8")
        logger.info(f"✅ Run {manifest.run_id} recorded in {self.manifest_path}")
        return self.manifest_path

    def load_manifest(self) -> RunManifest:
        if not self.manifest_path.exists():
            raise MissingRunError(f"no run found at {self.run_dir} (missing {MANIFEST_FILE})")
        with self.manifest_path.open("r", encoding="utf-8") as fh:
            return RunManifest.model_validate(json.load(fh))

    # ===== Result Operations =====

    def append(self, run_id: str, task_id: str, kind: str, payload: Dict[str, Any]) -> ResultRecord:
        """
        Validate and append one result record

        Raises:
            ValueError: a record of this (task, kind) was already written in this run
        """

        record = ResultRecord(run_id=run_id, task_id=task_id, kind=kind, payload=payload)
        key = (task_id, kind)
        with self._write_lock:
            if key in self._seen:
                raise ValueError(f"duplicate {kind} record for {task_id}")
            self._seen.add(key)
            with self.results_path.open("a", encoding="utf-8") as fh:
                fh.write(dumps_record(record.model_dump(mode="json")) + "\n")
        return record

    def iter_results(self, kind: Optional[str] = None) -> Iterator[ResultRecord]:
        if not self.results_path.exists():
            raise MissingRunError(f"no results found at {self.run_dir}")
        with self.results_path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = ResultRecord.model_validate_json(line)
                except ValidationError as e:
                    raise ValueError(f"{self.results_path}:{line_no}: {e.errors()[0]['msg']}") from e
                if kind is None or record.kind == kind:
                    yield record

    def results(self, kind: Optional[str] = None) -> List[ResultRecord]:
        return list(self.iter_results(kind))

    def error_count(self) -> int:
        return sum(1 for _ in self.iter_results("error"))

    # ===== Side Files =====

    def write_jsonl(self, name: str, records: Sequence[Dict[str, Any]]) -> Path:
        path = self.run_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for record in records:
                fh.write(dumps_record(record) + "\n")
        return path

    def write_json(self, name: str, doc: Any) -> Path:
        path = self.run_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.run_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
        return path


def open_run(run_dir: Union[str, Path]) -> ResultStore:
    """ResultStore of an existing, finished run"""

    store = ResultStore(run_dir)
    store.load_manifest()
    return store


# ===== Rankings and Oracle Labels =====

def write_ranking(path: Union[str, Path], ranking: PolicyRanking) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"ranking": [[policy_id, score] for policy_id, score in ranking.entries]}
    path.write_text(json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return path


def load_ranking(path: Union[str, Path]) -> PolicyRanking:
    """
    Read a `{"ranking": [[policy_id, score], ...]}` document

    Raises:
        ConfigError: unreadable or malformed file
    """

    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read ranking: {e.strerror}", str(path))
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", str(path), e.lineno)
    entries = doc.get("ranking") if isinstance(doc, dict) else None
    if not isinstance(entries, list) or not all(isinstance(e, list) and len(e) == 2 for e in entries):
        raise ConfigError('expected {"ranking": [[policy_id, score], ...]}', str(path))
    try:
        return PolicyRanking(tuple((e[0], e[1]) for e in entries))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), str(path))


def load_oracle(path: Union[str, Path]) -> Dict[str, OracleRecord]:
    """task_id -> oracle record from an oracle JSONL file"""

    path = Path(path)
    if not path.exists():
        raise ConfigError("oracle file does not exist", str(path))
    records: Dict[str, OracleRecord] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = OracleRecord.model_validate_json(line)
            except ValidationError as e:
                raise ConfigError(e.errors()[0]["msg"], str(path), line_no)
            if record.task_id in records:
                raise ConfigError(f"duplicate task {record.task_id}", str(path), line_no)
            records[record.task_id] = record
    return records
