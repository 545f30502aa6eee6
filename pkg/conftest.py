"""
Shared pytest fixtures.

The repository root goes on sys.path so tests import fem, cli and utils the
same way `python -m cli.solver_cli` does.
"""

import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from fem.geometry import GeometrySpec, generate_magnet_geometry, generate_rectangle  # noqa: E402
from utils.utils_logger import logger  # noqa: E402

# Two conductors joined by one layer, no collar or gap
TWO_BLOCK_SPEC = GeometrySpec(
    cable_width=1.0e-3, cable_height=4.0e-3, insulation=0.3e-3, gap=0.0, collar=0.0
)


@pytest.fixture
def data_dir() -> pathlib.Path:
    return ROOT / "data"


@pytest.fixture
def unit_square_mesh():
    return generate_rectangle(1.0, 1.0, 0.1)


@pytest.fixture
def two_block_spec() -> GeometrySpec:
    return TWO_BLOCK_SPEC


@pytest.fixture
def two_block_mesh():
    """Conforming traces: equal mesh sizes on both sides."""
    return generate_magnet_geometry(TWO_BLOCK_SPEC, "mortar_tsa", 2.5e-4, 2.5e-4)


@pytest.fixture
def two_block_mesh_nonconforming():
    """Mesh ratio 2.5 between the left and right block."""
    return generate_magnet_geometry(TWO_BLOCK_SPEC, "mortar_tsa", 2.5e-4, 1.0e-4)


@pytest.fixture
def out_dir(tmp_path) -> pathlib.Path:
    path = tmp_path / "run"
    path.mkdir()
    return path


@pytest.fixture
def log_messages():
    """Messages logged through loguru while the test runs."""
    messages: list[str] = []
    handler_id = logger.add(lambda m: messages.append(m.record["message"]), level="DEBUG")
    yield messages
    logger.remove(handler_id)
