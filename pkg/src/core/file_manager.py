"""Run-artifact storage with atomic write guarantees.

Every artifact is written to a temporary sibling first and then renamed over
the target, so an interrupted run never leaves a half-written file behind.
CSV output goes through Polars.
"""

from pathlib import Path

import polars as pl
from loguru import logger

# Shortest round-trip repr is not stable across writers; fix the precision
CSV_FLOAT_PRECISION = 17


def _replace_atomically(target_path: Path, payload: bytes) -> None:
    tmp_path = target_path.with_name(f"{target_path.name}.tmp")
    try:
        tmp_path.write_bytes(payload)
        tmp_path.replace(target_path)
    except Exception as e:
        if tmp_path.exists():
            tmp_path.unlink()
        logger.error(f"Failed to write {target_path}: {e}")
        raise


def write_bytes_atomic(path: Path, payload: bytes) -> None:
    """Write bytes via a temporary sibling and a rename.

    Args:
        path: Target file; missing parent directories are created
        payload: Full file contents
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _replace_atomically(path, payload)
    logger.debug(f"Atomically wrote {len(payload)} bytes to {path}")


def write_text_atomic(path: Path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def _format_float(value: float) -> str:
    return f"{value:.{CSV_FLOAT_PRECISION}g}"


def format_csv(df: pl.DataFrame) -> str:
    """Render a frame as CSV, floats at 17 significant digits and NaN spelled ``nan``."""
    float_cols = [name for name, dtype in df.schema.items() if dtype.is_float()]
    if float_cols:
        df = df.with_columns(
            [
                pl.col(col).map_elements(_format_float, return_dtype=pl.String)
                for col in float_cols
            ]
        )
    return df.write_csv(null_value="nan")


class RunStorage:
    """Atomic reads and writes below one run directory."""

    def __init__(self, base_path: Path, subdirectories: list[str] | None = None) -> None:
        """Initialize storage with a base directory.

        Args:
            base_path: Root directory for all artifacts, created if missing
            subdirectories: Optional list of subdirectories within the base path
        """
        self.base_path = Path(base_path)
        self.base_path.mkdir(parents=True, exist_ok=True)
        for subdirectory in subdirectories or []:
            (self.base_path / subdirectory).mkdir(parents=True, exist_ok=True)
        logger.debug(f"RunStorage initialized at {self.base_path}")

    def write_csv(self, df: pl.DataFrame, filename: str) -> Path:
        """Write a DataFrame as CSV via a temporary file and rename.

        Args:
            df: Frame to write; floats keep 17 significant digits
            filename: Target name below the base path; ``.csv`` is appended if missing

        Returns:
            Path of the written file
        """
        if not filename.endswith(".csv"):
            filename += ".csv"
        target_path = self.base_path / filename
        write_text_atomic(target_path, format_csv(df))
        logger.info(f"Atomically wrote {len(df)} rows to {target_path}")
        return target_path

    def write_text(self, text: str, filename: str) -> Path:
        """Write UTF-8 text atomically.

        Args:
            text: Full file contents
            filename: Target name below the base path

        Returns:
            Path of the written file
        """
        target_path = self.base_path / filename
        write_text_atomic(target_path, text)
        return target_path

    def read_csv(self, filename: str) -> pl.DataFrame:
        """Read a CSV written by ``write_csv``.

        Args:
            filename: Source name below the base path; ``.csv`` is appended if missing

        Returns:
            The frame, with ``nan`` cells read as nulls

        Raises:
            FileNotFoundError: If the file does not exist
        """
        if not filename.endswith(".csv"):
            filename += ".csv"
        target_path = self.base_path / filename
        if not target_path.exists():
            logger.warning(f"File not found: {target_path}")
            raise FileNotFoundError(f"No CSV file found: {filename}")
        data = pl.read_csv(target_path, null_values=["nan"])
        logger.debug(f"Read {len(data)} rows from {filename}")
        return data
