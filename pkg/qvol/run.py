import csv
import hashlib
import logging
import shutil
from pathlib import Path
from typing import Any, Iterable, Sequence

import yaml

from qvol.config import CONFIG_FILE_NAME, FLOAT_FORMAT, RUNS_DIR

logger = logging.getLogger(__name__)

DIGEST_LENGTH = 10


def config_digest(config: dict) -> str:
    """Stable short digest of a config mapping (key order does not matter)."""
    text = yaml.safe_dump(config, sort_keys=True, default_flow_style=True)
    return hashlib.sha256(text.encode()).hexdigest()[:DIGEST_LENGTH]


def get_run_dir(config: dict, out: str | Path | None = None) -> Path:
    """Get the directory for a run: `out` if given, else RUNS_DIR/<command>-<digest>."""
    if out is not None:
        return Path(out)
    command = config.get("command") or "run"
    return RUNS_DIR / f"{command}-{config_digest(config)}"


def get_run_config_file(run_dir: Path) -> Path:
    """Get the config file path for a run."""
    return run_dir / CONFIG_FILE_NAME


def persist_run(config: dict, out: str | Path | None = None) -> Path:
    """Ensure the run directory and its config file exist. Call before writing any data."""
    run_dir = get_run_dir(config, out)
    run_dir.mkdir(parents=True, exist_ok=True)

    with open(get_run_config_file(run_dir), "w") as f:
        f.write(header_line(config) + "\n")
        yaml.safe_dump(config, f, sort_keys=True)

    logger.info(f"Run directory: {run_dir}")
    return run_dir


def load_run_config(run_dir: Path) -> dict:
    """Read a persisted run config. Returns an empty dict if it cannot be read."""
    config_file = get_run_config_file(run_dir)
    if not config_file.exists():
        return {}

    try:
        with open(config_file, "r") as f:
            return yaml.safe_load(f) or {}
    except Exception as e:
        logger.warning(f"Failed to read run config {config_file}: {e}")
        return {}


def header_line(config: dict) -> str:
    """`# config: {...}` line that heads every output file."""
    flow = yaml.safe_dump(config, sort_keys=True, default_flow_style=True, width=10**6)
    return f"# config: {flow.strip()}"


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return FLOAT_FORMAT.format(value)
    if isinstance(value, (list, tuple)):
        return " ".join(format_value(v) for v in value)
    if hasattr(value, "item"):
        return format_value(value.item())
    return str(value)


def write_csv(
    path: Path, config: dict, columns: Sequence[str], rows: Iterable[Sequence[Any]]
) -> Path:
    """Write a CSV file with the config header line and 17-digit floats."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(header_line(config) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows([format_value(v) for v in row] for row in rows)
    logger.debug(f"Wrote {path}")
    return path


def write_lines(path: Path, config: dict, lines: Iterable[str]) -> Path:
    """Write a plain text file (sample streams, verdicts) with the config header."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(header_line(config) + "\n")
        for line in lines:
            f.write(line + "\n")
    logger.debug(f"Wrote {path}")
    return path


def read_lines(path: Path) -> list[str]:
    """Read the data lines of a file written by `write_lines` (header dropped)."""
    with open(path, "r") as f:
        return [line.rstrip("\n") for line in f if line.strip() and not line.startswith("#")]


def clear_run_dir(run_dir: Path) -> bool:
    """Delete a run directory and all its files. Returns True if it existed."""
    if not run_dir.exists():
        return False
    try:
        shutil.rmtree(run_dir)
    except Exception as e:
        logger.warning(f"Failed to remove run directory {run_dir}: {e}")
    return True
