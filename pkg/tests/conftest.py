import numpy as np
import pytest

from progs.octree import build_from_points
from progs.scene import OctreeConfig


def small_config(base_depth=2, num_lods=4, dims=(4, 6, 2), q0=(1.0, 0.001, 0.2)):
    return OctreeConfig(base_depth, num_lods, (0.0, 0.0, 0.0), 1.0, *dims, *q0)


def random_store(rng, cfg, n_points, attr_scale=0.0):
    """Store built from uniform points; attributes drawn N(0, attr_scale) when nonzero."""
    pts = cfg.bbox_min + rng.random((n_points, 3)) * cfg.bbox_side
    store = build_from_points(cfg, pts)
    if attr_scale:
        for level in range(1, cfg.num_lods + 1):
            n = store.count(level)
            store.set_level_attributes(level, rng.normal(0, attr_scale, (n, cfg.num_channels)))
    return store


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
