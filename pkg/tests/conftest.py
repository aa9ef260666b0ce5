import functools
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from stochcg import blending  # noqa: E402
from stochcg.engine import EngineConfig, Engine  # noqa: E402

TINY_SEEDS = (0, 1, 2, 3, 4)


@functools.lru_cache(maxsize=None)
def tiny_instance(seed, dims=(2, 2, 2)):
    return blending.sample_instance(*dims, seed=seed)


def run_method(inst, sharing, mode="exact", hook=None, **cfg):
    oracle = blending.BlendingOracle(inst)
    bm = blending.build_master(inst, oracle)
    eng = Engine(inst.tree, bm.master, oracle, oracle if sharing else None,
                 EngineConfig(sharing=sharing, pricing_mode=mode, **cfg))
    eng.on_iteration = hook
    return eng.run(), bm


@pytest.fixture(scope="session")
def tiny():
    return [tiny_instance(s) for s in TINY_SEEDS]


ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
