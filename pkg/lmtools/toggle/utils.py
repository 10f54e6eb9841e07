import os
import json
import tempfile
import numpy as np
import pandas as pd
from typing import Any, Dict, Iterator, List, Tuple


def format_real(value: float) -> str:
    """
    Format a float with 17 significant digits, enough to reproduce any 64-bit float exactly.

    Args:
        value (float): The value to format.

    Returns:
        str: The decimal representation.
    """
    return format(float(value), '.17g')


def atomic_write_text(path: str, text: str) -> None:
    """
    Write text to a file by writing a temporary file in the same directory and renaming it.

    Readers either see the previous content or the complete new content, never a partial file.

    Args:
        path (str): Destination path.
        text (str): Content to write.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.' + os.path.basename(path) + '.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_json(path: str, payload: Any) -> None:
    """Write a JSON document atomically with stable key order and indentation."""
    atomic_write_text(path, json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + '\n')


def atomic_write_csv(path: str, df: pd.DataFrame) -> None:
    """Write a data frame as CSV atomically, floats at full precision."""
    atomic_write_text(path, df.to_csv(index=False, float_format='%.17g', lineterminator='\n'))


def to_jsonable(obj: Any) -> Any:
    """
    Convert numpy scalars and arrays nested in dictionaries and lists into plain Python objects.

    Args:
        obj (Any): The object to convert.

    Returns:
        Any: An object accepted by json.dumps.
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def append_json_line(path: str, payload: Dict[str, Any]) -> None:
    """
    Append one JSON object as a single line and force it to disk.

    Args:
        path (str): The JSON-lines file.
        payload (Dict[str, Any]): The object to append.
    """
    line = json.dumps(to_jsonable(payload), sort_keys=True, separators=(',', ':'))
    with open(path, 'a', encoding='utf-8', newline='\n') as f:
        f.write(line + '\n')
        f.flush()
        os.fsync(f.fileno())


def read_json_lines(path: str) -> Tuple[List[Dict[str, Any]], int]:
    """
    Read a JSON-lines file, tolerating a truncated final line.

    A final line without a terminating newline is the result of an interrupted append and is
    dropped. Corrupt lines before the end raise a ValueError.

    Args:
        path (str): The JSON-lines file.

    Returns:
        Tuple[List[Dict[str, Any]], int]: The parsed objects and the byte length of the valid prefix.
    """
    with open(path, 'rb') as f:
        raw = f.read()
    records = []
    valid_bytes = 0
    for lineno, chunk in enumerate(_split_complete_lines(raw), start=1):
        text = chunk.decode('utf-8').strip()
        valid_bytes += len(chunk)
        if not text:
            continue
        try:
            records.append(json.loads(text))
        except json.JSONDecodeError as e:
            raise ValueError(f"Corrupt JSON record on line {lineno} of {path}: {e}") from e
    return records, valid_bytes


def _split_complete_lines(raw: bytes) -> Iterator[bytes]:
    start = 0
    while True:
        end = raw.find(b'\n', start)
        if end < 0:
            return
        yield raw[start:end + 1]
        start = end + 1


def format_aligned(rows: List[Tuple[str, Any]], width: int = 25) -> str:
    """Render label/value pairs as left-aligned text lines."""
    return "\n".join(f"{label + ':':<{width}} {value}" for label, value in rows)
