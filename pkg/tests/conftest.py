import numpy as np
import pytest

from ddhf.core import GridSpec, SparseVoxelSet


def random_voxel_set(rng, grid: GridSpec, n: int, channels: int) -> SparseVoxelSet:
    """Random occupancy (unique cells) with standard-normal features."""
    total = grid.nx * grid.ny * grid.nz
    n = min(n, total)
    flat = rng.choice(total, size=n, replace=False)
    coords = np.stack(np.unravel_index(flat, grid.extents), axis=1).astype(np.int64)
    feats = rng.normal(size=(n, channels)).astype(np.float32)
    return SparseVoxelSet(coords, feats, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(20240816)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = str(getattr(rep, "nodeid", ""))
            if "test_acceptance.py" in nodeid and getattr(rep, "when", "call") == "call":
                rows.append((nodeid.split("::")[-1], status == "passed"))
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, ok in sorted(rows):
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
