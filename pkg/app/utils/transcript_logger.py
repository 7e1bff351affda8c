import json
import os
from threading import Lock
from typing import Any, Dict

_log_lock = Lock()


def log_transcript(path: str, run_index: int, transcript: Dict[str, Any]) -> None:
    """
    Append one run transcript as a JSON object
    (one per line) to the given JSONL file.
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    record = {"run": run_index, **transcript}
    with _log_lock, open(path, 'a', encoding='utf-8') as f:
        f.write(json.dumps(record, sort_keys=False) + "\n")


def truncate_transcript_log(path: str) -> None:
    """Start a fresh log for a new command."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with _log_lock, open(path, 'w', encoding='utf-8'):
        pass
