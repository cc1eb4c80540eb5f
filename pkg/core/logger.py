# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/logger.py

Centralized singleton logger for the safe-set planner toolkit.
- main.py calls setup_logger() once per CLI invocation, naming the subcommand.
- All other modules use get_logger() to obtain the shared logger instance.
- shutdown_logger() flushes and closes the session file before exit.
- Log files are written to <project>/log/session_YYYYMMDD_HHMMSS.log

Buffering strategy:
  The session file is line-buffered (buffering=1) so every line reaches disk
  as soon as it is written. Long label/train/monte-carlo runs are often
  interrupted, and the tail of the log is what tells where they stopped.

Log retention:
  setup_logger() keeps the newest MAX_SESSION_LOGS session files and deletes
  older ones before writing the new session. The deletion message is returned
  to the caller for printing.

Library use (tests, notebooks) never calls setup_logger(): the logger then has
no handlers and stays silent.
"""

import logging
import platform
from datetime import datetime
from pathlib import Path

import numpy as np
import scipy

from core.version import VERSION

# Shared logger name used across all modules
_LOGGER_NAME = "safeset"

# Tracks whether setup_logger() has already been called
_initialized = False

# Maximum number of session log files to keep on disk
MAX_SESSION_LOGS = 20


def _resolve_project_folder() -> Path:
    """Project root: one level above the core/ package."""
    return Path(__file__).resolve().parent.parent


def _build_session_header(log_path: Path, mode: str) -> str:
    """
    Build the header block written at the top of each session file.
    Records the numeric stack because results depend on BLAS/numpy versions.
    """
    now = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    lines = [
        "=" * 56,
        "  Safe-Set Planner — Session Start",
        f"  Time    : {now}",
        f"  OS      : {platform.system()} {platform.release()}",
        f"  Python  : {platform.python_version()}",
        f"  numpy   : {np.__version__}  scipy: {scipy.__version__}",
        f"  Tool    : {VERSION}",
        f"  Command : {mode}",
        f"  Log     : {log_path}",
        "=" * 56,
    ]
    return "\n".join(lines)


def _cleanup_old_logs(log_folder: Path, logger: logging.Logger) -> str | None:
    """
    Delete the oldest session files beyond MAX_SESSION_LOGS.

    Returns a message naming the deleted files, or None when nothing was deleted.
    """
    session_files = sorted(log_folder.glob("session_*.log"))
    total = len(session_files)

    logger.info(f"Log retention: {total} session file(s) found (max {MAX_SESSION_LOGS})")

    if total <= MAX_SESSION_LOGS:
        return None

    deleted_names = []
    for f in session_files[:total - MAX_SESSION_LOGS]:
        try:
            f.unlink()
            deleted_names.append(f.name)
        except OSError as e:
            logger.warning(f"Log retention: failed to delete {f.name} — {e}")

    if not deleted_names:
        return None

    names_str = ", ".join(deleted_names)
    logger.info(f"Log retention: deleted {len(deleted_names)} old session file(s): {names_str}")
    return f"[log] Deleted {len(deleted_names)} old session log file(s): {names_str}"


def setup_logger(mode: str = "cli", log_folder: Path | None = None) -> tuple[Path, str | None]:
    """
    Initialize the singleton file logger. Call once per process.

    Args:
        mode:       subcommand name, recorded in the session header.
        log_folder: override for the log directory (default <project>/log).

    Returns:
        (log_path, cleanup_msg). cleanup_msg is None unless old files were deleted.
        Subsequent calls are no-ops returning the existing path and None.
    """
    global _initialized

    logger = logging.getLogger(_LOGGER_NAME)

    if _initialized:
        return _get_existing_log_path(logger), None

    logger.setLevel(logging.DEBUG)
    # Worker processes inherit no handlers; keep records away from the root logger
    logger.propagate = False

    log_folder = log_folder or (_resolve_project_folder() / "log")
    log_folder.mkdir(parents=True, exist_ok=True)

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    log_path = log_folder / f"session_{timestamp}.log"

    log_file = open(log_path, "a", encoding="utf-8", buffering=1)
    file_handler = logging.StreamHandler(log_file)
    file_handler.setLevel(logging.DEBUG)
    file_handler._log_file = log_file
    file_handler._log_path = str(log_path)

    formatter = logging.Formatter(
        fmt="%(asctime)s [%(levelname)-5s] [%(module)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    logger.info("\n" + _build_session_header(log_path, mode))

    cleanup_msg = _cleanup_old_logs(log_folder, logger)

    _initialized = True
    return log_path, cleanup_msg


def shutdown_logger(reason: str = "normal") -> None:
    """
    Flush and close the session file. Last call before the process exits.

    Args:
        reason: "normal", "validation_error", "runtime_error", "interrupted" or "exception".
    """
    global _initialized

    logger = logging.getLogger(_LOGGER_NAME)
    logger.info(f"--- Session ended ({reason}) ---")

    for handler in logger.handlers[:]:
        try:
            handler.flush()
            if hasattr(handler, "_log_file"):
                handler._log_file.close()
            handler.close()
        except Exception:
            pass
        logger.removeHandler(handler)

    _initialized = False


def get_logger() -> logging.Logger:
    """
    Return the shared logger instance.
    Modules call this instead of logging.getLogger() so the name stays consistent.
    """
    return logging.getLogger(_LOGGER_NAME)


def _get_existing_log_path(logger: logging.Logger) -> Path:
    """Log path of an already-initialized logger, or a placeholder."""
    for handler in logger.handlers:
        if hasattr(handler, "_log_path"):
            return Path(handler._log_path)
    return Path("log/unknown.log")

