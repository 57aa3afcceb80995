"""Table writers for sweep grids, exposure tables and simulation reports."""

import logging
from pathlib import Path

import pandas as pd

from robustvol.errors import ConfigurationError

logger = logging.getLogger(__name__)

# Extension per format name; "excel" is accepted as a synonym of "xlsx"
FORMAT_EXTENSIONS = {
    "csv": ".csv",
    "json": ".json",
    "parquet": ".parquet",
    "xlsx": ".xlsx",
    "excel": ".xlsx",
}
SUPPORTED_FORMATS = list(FORMAT_EXTENSIONS)


def adjust_file_extension(output_file: str, format: str) -> str:
    """
    Give ``output_file`` the extension of ``format``.

    Examples:
        >>> adjust_file_extension("grid.csv", "json")
        "grid.json"
        >>> adjust_file_extension("grid", "excel")
        "grid.xlsx"
    """
    suffix = FORMAT_EXTENSIONS[format]
    path = Path(output_file)
    return str(output_file) if path.suffix == suffix else str(path.with_suffix(suffix))


def provenance_line(metadata: dict[str, str]) -> str:
    """Comment line carried at the top of CSV outputs, e.g. ``# scenario=ab12 version=0.1.0``."""
    return "# " + " ".join(f"{key}={value}" for key, value in metadata.items())


def _write_csv(df: pd.DataFrame, path: Path, metadata: dict[str, str] | None):
    with path.open("w", newline="") as handle:
        if metadata:
            handle.write(provenance_line(metadata) + "\n")
        df.to_csv(handle, index=False, float_format="%.12g")


def _write_json(df: pd.DataFrame, path: Path, metadata):
    df.to_json(path, orient="records", indent=2, double_precision=12)


def _write_parquet(df: pd.DataFrame, path: Path, metadata):
    df.to_parquet(path, index=False, engine="pyarrow")


def _write_xlsx(df: pd.DataFrame, path: Path, metadata):
    df.to_excel(path, index=False, engine="openpyxl")


_WRITERS = {
    "csv": _write_csv,
    "json": _write_json,
    "parquet": _write_parquet,
    "xlsx": _write_xlsx,
    "excel": _write_xlsx,
}


def write_dataframe(
    df: pd.DataFrame,
    output_file: str | Path,
    format: str = "csv",
    *,
    metadata: dict[str, str] | None = None,
) -> Path:
    """
    Write a result table in the given format.

    Args:
        df: Table to write
        output_file: Destination; its extension is replaced to match the format
        format: csv, json, parquet, xlsx or excel
        metadata: Key-value provenance written as a leading ``#`` line (CSV only)

    Returns:
        Absolute Path to the written file

    Raises:
        ConfigurationError: Unknown format, or the writer failed
    """
    writer = _WRITERS.get(format)
    if writer is None:
        raise ConfigurationError(
            f"Unsupported format: {format}. Supported formats: {', '.join(SUPPORTED_FORMATS)}"
        )

    output_path = Path(adjust_file_extension(str(output_file), format)).absolute()
    try:
        writer(df, output_path, metadata)
    except Exception as e:
        raise ConfigurationError(f"Error writing {format} file: {e}") from e
    logger.info(f"Wrote {len(df)} rows ({format}) to {output_path}")
    return output_path


def read_table(path: str | Path) -> pd.DataFrame:
    """Read a table written by write_dataframe, skipping the provenance line."""
    fmt = detect_format_from_filename(str(path))
    if fmt == "csv":
        return pd.read_csv(path, comment="#")
    if fmt == "json":
        return pd.read_json(path, orient="records")
    if fmt == "parquet":
        return pd.read_parquet(path, engine="pyarrow")
    if fmt == "xlsx":
        return pd.read_excel(path, engine="openpyxl")
    raise ConfigurationError(f"Cannot infer table format of {path}")


def detect_format_from_filename(filename: str) -> str | None:
    """
    Format name for the extension of ``filename``, or None.

    Examples:
        >>> detect_format_from_filename("grid.parquet")
        "parquet"
        >>> detect_format_from_filename("grid.txt")
        None
    """
    suffix = Path(filename).suffix.lower()
    return next((fmt for fmt, ext in FORMAT_EXTENSIONS.items() if ext == suffix), None)
