# Standard library
import json
import logging
from pathlib import Path
from dataclasses import dataclass, field, fields, asdict

# Third party
import numpy as np
import pandas as pd
import json_repair

# Local
try:
    from causalpima.errors import ContractViolation
    from causalpima.constants import TENSOR_MAGIC, TENSOR_VERSION
except ImportError:
    from errors import ContractViolation
    from constants import TENSOR_MAGIC, TENSOR_VERSION

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


#########
# HELPERS
#########


def _ensure_parent(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


######
# MAIN
######


def write_tensor(path: str | Path, array: np.ndarray):
    """One text header line `CPTENSOR 1 float64 <dims>`, then row-major
    little-endian float64 values."""

    array = np.ascontiguousarray(array, dtype="<f8")
    dims = " ".join(str(d) for d in array.shape)
    header = f"{TENSOR_MAGIC} {TENSOR_VERSION} float64 {dims}".rstrip() + "\n"
    with _ensure_parent(path).open("wb") as file:
        file.write(header.encode("ascii"))
        file.write(array.tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ContractViolation(f"{path}: missing tensor header")

    parts = raw[:newline].decode("ascii").split()
    if len(parts) < 3 or parts[0] != TENSOR_MAGIC:
        raise ContractViolation(f"{path}: not a {TENSOR_MAGIC} file")

    if int(parts[1]) != TENSOR_VERSION or parts[2] != "float64":
        raise ContractViolation(f"{path}: unsupported version {parts[1]} / dtype {parts[2]}")

    shape = tuple(int(d) for d in parts[3:])
    body = raw[newline + 1 :]
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(body) != expected:
        raise ContractViolation(f"{path}: {len(body)} payload bytes, header implies {expected}")

    return np.frombuffer(body, dtype="<f8").reshape(shape).astype(np.float64)


def write_json(path: str | Path, payload: dict):
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    _ensure_parent(path).write_text(text + "\n")


def read_json(path: str | Path) -> dict:
    return json_repair.loads(Path(path).read_text())


def append_jsonl(path: str | Path, record: dict):
    with _ensure_parent(path).open("a") as file:
        file.write(json.dumps(_jsonable(record), sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    """Metric records, tolerating a truncated final line from an aborted run."""

    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue

        record = json_repair.loads(line)
        if isinstance(record, dict) and record:
            records.append(record)
        else:
            logger.warning("Skipping unreadable metrics line in %s", path)

    return records


def truncate_jsonl(path: str | Path, keep: int):
    """Keeps the first `keep` records; used when a run resumes mid-stream."""

    path = Path(path)
    if not path.exists():
        return

    records = read_jsonl(path)[:keep]
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def write_csv(path: str | Path, frame: pd.DataFrame):
    frame.to_csv(_ensure_parent(path), index=False)


def write_text(path: str | Path, text: str):
    _ensure_parent(path).write_text(text)


@dataclass
class RunManifest:
    config_digest: str
    seed: int
    dataset_fingerprint: str
    factors: list[str]
    outputs: list[str]  # Paths relative to the run directory
    timings: dict[str, float] = field(default_factory=dict)
    final_metrics: dict = field(default_factory=dict)

    def missing(self, run_dir: str | Path) -> list[str]:
        """Listed outputs that are absent or empty."""

        run_dir = Path(run_dir)
        return [
            rel for rel in self.outputs
            if not (run_dir / rel).is_file() or (run_dir / rel).stat().st_size == 0
        ]

    def write(self, run_dir: str | Path):
        write_json(Path(run_dir) / MANIFEST_NAME, asdict(self))

    @classmethod
    def read(cls, run_dir: str | Path) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_NAME
        if not path.is_file():
            raise ContractViolation(f"{run_dir} has no {MANIFEST_NAME}; is it a finished run?")

        values = read_json(path)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})
