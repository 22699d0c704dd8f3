"""Atomic storage of run outputs: CSV tables, JSON documents, figures and the manifest."""

import json
import os
import tempfile
from typing import Any, Dict, List, Optional

import pandas as pd

from .config import FLOAT_FORMAT, MANIFEST_NAME
from .logger import get_logger


class RunStore:
    """Owns one run directory and writes every file via temp-then-rename."""

    def __init__(self, run_dir: str, logger: Optional[Any] = None) -> None:
        """
        Initializes the RunStore.

        Args:
            run_dir: The directory of the run; created on first write.
            logger: An optional logger instance.
        """
        assert isinstance(run_dir, str) and run_dir, "run_dir must be a non-empty string."
        self.run_dir = run_dir
        self.logger = logger if logger else get_logger()
        self.written: List[str] = []

    def path(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    def _write_atomic(self, name: str, mode: str, writer: Any) -> str:
        """
        Writes through `writer(handle)` into a temp file and renames it into place.

        Raises:
            IOError: If the file cannot be written or renamed.
        """
        assert name and os.sep not in name, "name must be a plain file name."
        target = self.path(name)
        try:
            os.makedirs(self.run_dir, exist_ok=True)
            fd, tmp_path = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=self.run_dir)
            try:
                with os.fdopen(fd, mode, encoding=None if "b" in mode else "utf-8", newline=None if "b" in mode else "") as handle:
                    writer(handle)
                os.replace(tmp_path, target)
            except BaseException:
                if os.path.exists(tmp_path):
                    os.remove(tmp_path)
                raise
        except (IOError, OSError) as e:
            self.logger.error(f"Error writing to {target}: {e}", exc_info=True)
            raise IOError(f"Failed to write to {target}.") from e
        if name not in self.written:
            self.written.append(name)
        self.logger.debug(f"Wrote {target}")
        return target

    def write_frame(self, name: str, frame: pd.DataFrame) -> str:
        """Writes a DataFrame as CSV with 17 significant digits per float."""
        assert isinstance(frame, pd.DataFrame), "frame must be a DataFrame."
        return self._write_atomic(
            name, "w", lambda handle: frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        )

    def write_json(self, name: str, payload: Dict[str, Any]) -> str:
        assert isinstance(payload, dict), "payload must be a dictionary."
        try:
            text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
        except TypeError as e:
            self.logger.error(f"TypeError during JSON serialization of {name}: {e}", exc_info=True)
            raise TypeError(f"{name} contains non-serializable content.") from e
        return self._write_atomic(name, "w", lambda handle: handle.write(text + "\n"))

    def write_text(self, name: str, text: str) -> str:
        return self._write_atomic(name, "w", lambda handle: handle.write(text))

    def write_figure(self, name: str, figure: Any) -> str:
        """Saves a matplotlib figure (format taken from the file extension)."""
        fmt = os.path.splitext(name)[1].lstrip(".") or "svg"
        return self._write_atomic(name, "wb", lambda handle: figure.savefig(handle, format=fmt))

    def write_manifest(self, manifest: Dict[str, Any]) -> str:
        """Writes manifest.json; callers write it after every other output."""
        payload = dict(manifest)
        payload["outputs"] = sorted(n for n in self.written if n != MANIFEST_NAME)
        return self.write_json(MANIFEST_NAME, payload)

    def load_manifest(self) -> Dict[str, Any]:
        """
        Loads manifest.json.

        Returns:
            The manifest, or an empty dict if it is missing or invalid.
        """
        file_path = self.path(MANIFEST_NAME)
        if not os.path.exists(file_path):
            return {}
        try:
            with open(file_path, "r", encoding="utf-8") as f:
                manifest = json.load(f)
        except json.JSONDecodeError as e:
            self.logger.error(f"Error decoding JSON from {file_path}: {e}", exc_info=True)
            return {}
        except IOError as e:
            self.logger.error(f"Error reading file {file_path}: {e}", exc_info=True)
            return {}
        if not isinstance(manifest, dict):
            self.logger.error(f"Corrupted manifest {file_path}: content is not a dict.")
            return {}
        return manifest

    def read_frame(self, name: str) -> pd.DataFrame:
        """
        Reads a CSV written by this store.

        Raises:
            FileNotFoundError: If the table does not exist.
        """
        file_path = self.path(name)
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"{file_path} does not exist.")
        return pd.read_csv(file_path, float_precision="round_trip")

    def has(self, name: str) -> bool:
        return os.path.exists(self.path(name))


def _json_default(value: Any) -> Any:
    if hasattr(value, "item"):
        return value.item()
    if isinstance(value, (set, tuple)):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
