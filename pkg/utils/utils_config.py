"""
utils_config.py - environment getters shared by the solver entry points.

Values come from the process environment or a .env file in the project
root. Every getter logs the value it settles on.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import os
import pathlib

# Import external packages
from dotenv import load_dotenv

# Import functions from local modules
from utils.utils_logger import logger

#####################################
# Load Environment Variables
#####################################

load_dotenv()

#####################################
# Default Configurations
#####################################

PROJECT_ROOT = pathlib.Path(__file__).parent.parent
DATA_FOLDER = PROJECT_ROOT / "data"

DEFAULT_CONFIG = DATA_FOLDER / "magnet.toml"
DEFAULT_OUTPUT_DIR = "runs"
DEFAULT_COMPARE_THRESHOLD = 2e-3

#####################################
# Getter Functions for .env Variables
#####################################


def get_output_dir() -> pathlib.Path:
    """Fetch the default parent folder for run outputs."""
    folder = pathlib.Path(os.getenv("SOLVER_OUTPUT_DIR", DEFAULT_OUTPUT_DIR))
    logger.info(f"Output folder: {folder}")
    return folder


def get_default_config_path() -> pathlib.Path:
    """Fetch the problem configuration used when --config is omitted."""
    path = pathlib.Path(os.getenv("SOLVER_CONFIG", str(DEFAULT_CONFIG)))
    logger.info(f"Default config: {path}")
    return path


def get_compare_threshold() -> float:
    """Fetch the relative error threshold used by compare."""
    raw = os.getenv("SOLVER_COMPARE_THRESHOLD", str(DEFAULT_COMPARE_THRESHOLD))
    try:
        threshold = float(raw)
    except ValueError:
        logger.warning(
            f"SOLVER_COMPARE_THRESHOLD={raw!r} is not a number, using {DEFAULT_COMPARE_THRESHOLD}"
        )
        threshold = DEFAULT_COMPARE_THRESHOLD
    logger.info(f"Compare threshold: {threshold}")
    return threshold


def get_material_presets_path() -> pathlib.Path:
    """Fetch the preset table file."""
    path = pathlib.Path(
        os.getenv("SOLVER_MATERIAL_PRESETS", str(DATA_FOLDER / "material_presets.csv"))
    )
    logger.debug(f"Material presets: {path}")
    return path
