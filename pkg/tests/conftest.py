import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tlqg.cli import cmd_plan  # noqa: E402
from tlqg.config import bundled_scenario, parse_config  # noqa: E402
from tlqg.lqr import plan_gains  # noqa: E402
from tlqg.models import Landmark, Obstacle, WorldModel  # noqa: E402
from tlqg.planner import OptimizerParams, PlanProblem  # noqa: E402


FIG1_TIMING = {}
ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fig1_config():
    return parse_config(bundled_scenario("fig1"))


@pytest.fixture(scope="session")
def fig1_run(fig1_config, tmp_path_factory):
    """The bundled scenario planned once through the CLI entry point."""
    out = tmp_path_factory.mktemp("fig1_plan")
    t0 = time.perf_counter()
    code, plan = cmd_plan(fig1_config, out)
    FIG1_TIMING["plan_seconds"] = time.perf_counter() - t0
    return code, plan, out


@pytest.fixture(scope="session")
def fig1_plan(fig1_run):
    return fig1_run[1]


@pytest.fixture(scope="session")
def fig1_gains(fig1_plan, fig1_config):
    return plan_gains(fig1_plan, fig1_config.problem, fig1_config.feedback)


@pytest.fixture
def simple_world():
    return WorldModel(
        landmarks=[Landmark("a", 1.0, 1.0), Landmark("b", 3.0, -1.0)],
        obstacles=[Obstacle(2.0, 0.5, 0.2, 0.1)],
        epsilon=1.0,
    )


def small_problem(world, horizon=5, **kw):
    opts = dict(max_outer_iters=3, max_inner_iters=40)
    opts.update(kw.pop("optimizer", {}))
    return PlanProblem(start=[0.0, 0.0, 0.0], goal=[1.0, 0.5, 0.0], world=world, horizon=horizon,
                       optimizer=OptimizerParams(**opts), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
