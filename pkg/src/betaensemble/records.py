from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import ujson as json

from betaensemble.config import ExperimentConfig
from betaensemble.exceptions import MissingInputException
from betaensemble.helpers import jsonable

VERSION = "0.1.0a0"

HASH_PREFIX = "config_hash="


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical configuration with sorted keys."""
    canonical = json.dumps(jsonable(config.canonical()), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def dumps(payload: Dict[str, Any]) -> str:
    return json.dumps(
        jsonable(payload), sort_keys=True, indent=2, escape_forward_slashes=False
    )


def write_json(path: Union[str, Path], payload: Dict[str, Any], digest: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps({**payload, "config_hash": digest}) + "\n", encoding="utf-8")
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputException(f"Missing artifact {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def write_csv(
    path: Union[str, Path],
    columns: Sequence[str],
    rows: Union[np.ndarray, Sequence[Sequence[float]]],
    digest: str,
) -> Path:
    """
    Write a table with 17 significant digits. The first header line carries the
    configuration hash, the second the column names.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(rows, dtype=float).reshape(-1, len(columns))
    np.savetxt(
        path,
        data,
        delimiter=",",
        fmt="%.17g",
        header=f"{HASH_PREFIX}{digest}\n" + ",".join(columns),
    )
    return path


def csv_hash(path: Union[str, Path]) -> str:
    path = Path(path)
    if not path.is_file():
        raise MissingInputException(f"Missing artifact {path}")
    with path.open(encoding="utf-8") as f:
        first = f.readline().lstrip("#").strip()
    if not first.startswith(HASH_PREFIX):
        raise MissingInputException(
            f"Artifact {path} does not carry a configuration hash"
        )
    return first[len(HASH_PREFIX) :]


def read_csv(path: Union[str, Path]) -> Tuple[str, List[str], np.ndarray]:
    """
    :return: Tuple ``(config_hash, columns, data)``; ``data`` has one row per
        table row, possibly none.
    """
    path = Path(path)
    digest = csv_hash(path)
    with path.open(encoding="utf-8") as f:
        f.readline()
        columns = f.readline().lstrip("#").strip().split(",")
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return digest, columns, data.reshape(-1, len(columns))


def require_single_hash(
    digests: Iterable[Tuple[Path, str]], expected: Optional[str] = None
) -> str:
    """
    :raises: :class:`MissingInputException` when artifacts were produced by
        different configurations.
    """
    digests = list(digests)
    if not digests:
        raise MissingInputException("No input artifacts found")
    found = {digest for _, digest in digests}
    if expected is not None:
        found.add(expected)
    if len(found) > 1:
        reference = expected or digests[0][1]
        offending = sorted(str(path) for path, digest in digests if digest != reference)
        raise MissingInputException(
            f"Artifacts come from different configurations: {', '.join(offending)}"
        )
    return found.pop()


@dataclasses.dataclass(frozen=True)
class RunRecord:
    """
    Result of one command: one entry per task (degree, inverse temperature and
    chain where applicable) and a summary. Wall-clock timings are logged, never
    recorded, so records of identical runs are byte identical.
    """

    command: str
    config_hash: str
    seed: int
    entries: Tuple[Dict[str, Any], ...] = ()
    summary: Dict[str, Any] = dataclasses.field(default_factory=dict)
    version: str = VERSION

    def payload(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "seed": self.seed,
            "version": self.version,
            "entries": list(self.entries),
            "summary": self.summary,
        }

    def write(self, path: Union[str, Path]) -> Path:
        return write_json(path, self.payload(), self.config_hash)

    @classmethod
    def read(cls, path: Union[str, Path]) -> RunRecord:
        data = read_json(path)
        return cls(
            command=data["command"],
            config_hash=data["config_hash"],
            seed=data["seed"],
            entries=tuple(data.get("entries", [])),
            summary=data.get("summary", {}),
            version=data.get("version", VERSION),
        )
