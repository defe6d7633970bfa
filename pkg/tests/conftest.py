"""Shared fixtures.

Training a case takes tens of seconds, so the default-pipeline Case I model
is built once per session and shared by every test that needs it.
"""

from __future__ import annotations

import time

import pytest

from nscgrid.scenario.dataset import generate_dataset
from nscgrid.scenario.pipeline import train_case
from nscgrid.scenario.presets import case_preset
from nscgrid.scenario.runner import simulate, write_run

_CRITERIA: dict[int, tuple[bool, str]] = {}
TIMINGS: dict[str, float] = {}


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, ok, detail)`` prints the verdict line now and in the summary."""

    def record(n: int, ok: bool, detail: str) -> None:
        _CRITERIA[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


@pytest.fixture(scope="session")
def timings():
    return TIMINGS


@pytest.fixture(scope="session")
def case_i_data():
    t0 = time.perf_counter()
    data = generate_dataset(case_preset("I"))
    TIMINGS["dataset"] = time.perf_counter() - t0
    return data


@pytest.fixture(scope="session")
def case_i_trained(case_i_data):
    cfg = case_preset("I")
    t0 = time.perf_counter()
    trained = train_case(case_i_data, cfg.snn, cfg.neuron, seed=cfg.seed)
    TIMINGS["train"] = time.perf_counter() - t0
    return trained


@pytest.fixture(scope="session")
def case_i_models(case_i_trained):
    return case_i_trained.models


@pytest.fixture(scope="session")
def case_i_nsc_run(case_i_models, tmp_path_factory):
    cfg = case_preset("I").with_changes(mode="nsc")
    t0 = time.perf_counter()
    res = simulate(cfg, case_i_models)
    TIMINGS["nsc_run"] = time.perf_counter() - t0
    return res, write_run(res, tmp_path_factory.mktemp("case_i_nsc"))


@pytest.fixture(scope="session")
def case_i_clc_run(case_i_models, tmp_path_factory):
    """Case I in CLC mode with the trained networks running in shadow."""
    res = simulate(case_preset("I"), case_i_models)
    return res, write_run(res, tmp_path_factory.mktemp("case_i_clc"))
