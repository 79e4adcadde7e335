import dataclasses
import hashlib
import json
import logging
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Tuple, Union

import numpy as np
import pandas as pd
from rich.logging import RichHandler


def setup_logging(verbose: bool = False):
    """Route the package's log records through rich."""
    logger = logging.getLogger("ricsim")
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(show_path=False, markup=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
    logger.propagate = False


def parse_value(text: str) -> Any:
    """JSON value of `text`, or the text itself when it is not JSON."""
    try:
        return json.loads(text)
    except ValueError:
        return text


def parse_override(item: str) -> Tuple[str, Any]:
    """Split `key=value` into (dotted key, parsed value)."""
    key, sep, value = item.partition("=")
    if not sep or not key.strip():
        raise ValueError(f"override {item!r} is not key=value")
    return key.strip(), parse_value(value)


def _step(container: Any, part: str) -> Any:
    if isinstance(container, list):
        return int(part)
    return part


def get_dotted(doc: Any, key: str) -> Any:
    node = doc
    for part in key.split("."):
        node = node[_step(node, part)]
    return node


def set_dotted(doc: Any, key: str, value: Any):
    """
    Assign `value` at a dotted path such as `cells.0.prb_count`.

    Missing object keys along the way are created; list indices must exist.
    """
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        step = _step(node, part)
        if isinstance(node, dict) and step not in node:
            node[step] = {}
        node = node[step]
        if not isinstance(node, (dict, list)):
            raise TypeError(f"{part} is not an object or a list")
    node[_step(node, parts[-1])] = value


def to_jsonable(value: Any) -> Any:
    """Plain JSON structure for message payloads (dataclasses, arrays, fractions...)."""
    if hasattr(value, "to_dict"):
        return to_jsonable(value.to_dict())
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value


def write_frames(frames: Mapping[str, pd.DataFrame], out_dir: Union[str, Path]) -> List[Path]:
    """Write every table as `<name>.csv`; returns the paths in name order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in sorted(frames):
        path = out_dir / f"{name}.csv"
        frames[name].to_csv(path, index=False, lineterminator="\n")
        paths.append(path)
    return paths


def write_ndjson(records: Iterable[Dict[str, Any]], path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(to_jsonable(record), sort_keys=True) + "\n")
    return path


def sha256_files(paths: Iterable[Union[str, Path]]) -> str:
    """One digest over the names and contents of several files."""
    digest = hashlib.sha256()
    for path in sorted(Path(p) for p in paths):
        digest.update(path.name.encode("utf-8"))
        digest.update(path.read_bytes())
    return digest.hexdigest()
