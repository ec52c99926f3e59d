from __future__ import annotations

import functools
import socket
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gridstorm.harness import (  # noqa: E402
    ATTACK_CASES, AttackerMode, RunConfig, run_case, summarize, write_summary,
)
from gridstorm.model import load_bundled_case  # noqa: E402
from gridstorm.steady import init_dynamics, solve_power_flow  # noqa: E402


@functools.lru_cache(maxsize=None)
def bundled(system: str | None = None):
    return load_bundled_case(system)


@functools.lru_cache(maxsize=None)
def equilibrium(system: str | None):
    model = bundled(system)
    pf = solve_power_flow(model)
    return model, pf, init_dynamics(model, pf)


@functools.lru_cache(maxsize=None)
def attack_case(system: str, scenario: int, dt: float = 1e-3):
    """Lockstep run with the in-process attacker; cached across tests."""
    return run_case(RunConfig(system=system, scenario=scenario, dt=dt, publish_every=round(1e-2 / dt),
                              attacker=AttackerMode.EMBEDDED))


@functools.lru_cache(maxsize=None)
def attack_suite(label: str):
    """The four attack cases in lockstep with traces and summary on disk.

    Returns (results, wall seconds per case, output directory). ``label`` only
    keys the cache so independent repetitions can be requested.
    """
    out = Path(tempfile.mkdtemp(prefix=f"gridstorm-{label}-"))
    base = RunConfig(output_dir=out, attacker=AttackerMode.EMBEDDED)
    results, elapsed = {}, {}
    for system, scenario in ATTACK_CASES:
        t0 = time.perf_counter()
        results[(system, scenario)] = run_case(replace(base, system=system, scenario=scenario))
        elapsed[(system, scenario)] = time.perf_counter() - t0
    write_summary(summarize({c: r.metrics for c, r in results.items()}), out)
    return results, elapsed, out


def free_udp_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="session")
def model_i():
    return bundled("I")


@pytest.fixture(scope="session")
def base_model():
    return bundled(None)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(mod.report_line(n))
