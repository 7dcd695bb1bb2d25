import numpy as np
import pytest

from safedrive.config import Config
from safedrive.sim import TrafficVehicle, VehicleState, WorldState

# lane-change proposals need a draw below p_lc * dt, so 0.999 never proposes
QUIET = 0.999


@pytest.fixture
def cfg() -> Config:
    return Config()


def make_world(
    cfg: Config,
    ego: VehicleState | None = None,
    traffic: list[tuple[float, int, float]] | None = None,
    desired: float | None = None,
    noise: float = QUIET,
    t: int = 0,
) -> WorldState:
    """World with the ego and traffic given as ``(x, lane, vx)`` triples."""
    sim = cfg.sim
    if ego is None:
        ego = VehicleState(x=0.0, y=sim.lane_width, vx=25.0)
    vehicles = tuple(
        TrafficVehicle(VehicleState(x=x, y=lane * sim.lane_width, vx=v), desired if desired is not None else v)
        for x, lane, v in (traffic or [])
    )
    table = np.full((sim.episode_length, len(vehicles), 2), noise)
    return WorldState(ego=ego, traffic=vehicles, t=t, noise=table)


_CRITERIA_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; ``criterion(n, ok, detail)`` returns ``ok``."""
    lines = request.config.stash.setdefault(_CRITERIA_KEY, {})

    def record(n: int, ok: bool, detail: str) -> bool:
        lines[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
