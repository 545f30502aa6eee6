"""
Logger Setup Script
File: utils/utils_logger.py

This script provides the loguru logger used by every module of the solver.

Features:
- Logs to standard error at the level named by SOLVER_LOG (error|warn|info|debug).
- Adds a per-run log file inside a run's output directory on request.
- Sanitizes logs so shared run logs carry no user names or home paths.
"""

#####################################
# Import Modules
#####################################

# Imports from Python Standard Library
import getpass
import os
import pathlib
import sys
from typing import Any, Mapping

# Imports from external packages
from dotenv import load_dotenv
from loguru import logger

#####################################
# Default Configurations
#####################################

load_dotenv()

# Get this file name without the extension
CURRENT_SCRIPT = pathlib.Path(__file__).stem

# SOLVER_LOG values mapped onto loguru level names
LEVELS: dict[str, str] = {
    "error": "ERROR",
    "warn": "WARNING",
    "warning": "WARNING",
    "info": "INFO",
    "debug": "DEBUG",
}

RUN_LOG_NAME = "run.log"

#####################################
# Helper Functions
#####################################


def resolve_level(raw: str | None) -> str:
    """Map a SOLVER_LOG value onto a loguru level name, defaulting to INFO."""
    if not raw:
        return "INFO"
    return LEVELS.get(raw.strip().lower(), "INFO")


def sanitize_message(record: Mapping[str, Any]) -> str:
    """Remove personal/identifying information from log messages and escape braces."""
    message = record["message"]

    # Replace absolute working directory first, it usually sits below home
    try:
        cwd = str(pathlib.Path.cwd())
        message = message.replace(cwd, "PROJECT_ROOT")
    except Exception:
        pass

    try:
        home_path = str(pathlib.Path.home())
        message = message.replace(home_path, "~")
    except Exception:
        pass

    try:
        current_user = getpass.getuser()
        if len(current_user) > 2:
            message = message.replace(current_user, "USER")
    except Exception:
        pass

    message = message.replace("\\", "/")

    # Escape braces so loguru's formatter does not read them as fields
    return message.replace("{", "{{").replace("}", "}}")


def format_sanitized(record: Mapping[str, Any]) -> str:
    """Custom formatter that sanitizes messages and returns a plain string."""
    message = sanitize_message(record)
    time_str = record["time"].strftime("%Y-%m-%d %H:%M:%S")
    level_name = record["level"].name
    return f"{time_str} | {level_name} | {message}\n"


def configure_stderr(level: str | None = None) -> int:
    """(Re)install the standard error sink and return its handler id."""
    logger.remove()
    return logger.add(
        sys.stderr,
        level=resolve_level(level if level is not None else os.getenv("SOLVER_LOG")),
        format=format_sanitized,
    )


def add_run_log(out_dir: pathlib.Path) -> int:
    """Add a file sink inside a run directory. Returns the handler id for removal."""
    out_dir.mkdir(parents=True, exist_ok=True)
    log_file = out_dir / RUN_LOG_NAME
    handler_id = logger.add(
        log_file,
        level="DEBUG",
        rotation="5 MB",
        retention=1,
        compression=None,
        format=format_sanitized,
    )
    logger.info(f"Logging run to file: {log_file}")
    return handler_id


def remove_run_log(handler_id: int) -> None:
    """Detach a file sink added by add_run_log."""
    try:
        logger.remove(handler_id)
    except ValueError:
        logger.warning(f"Run log handler {handler_id} was already removed.")


try:
    configure_stderr()
except Exception as e:
    print(f"Error configuring logger: {e}", file=sys.stderr)


#####################################
# Main Function for Testing
#####################################


def main() -> None:
    """Show which level is active and emit one line per level."""
    logger.info(f"STARTING {CURRENT_SCRIPT}.py")
    logger.info(f"Active level from SOLVER_LOG: {resolve_level(os.getenv('SOLVER_LOG'))}")
    logger.debug("debug line")
    logger.warning("warning line")
    logger.error("error line")
    logger.info(f"EXITING {CURRENT_SCRIPT}.py.")


#####################################
# Conditional Execution
#####################################

if __name__ == "__main__":
    main()
