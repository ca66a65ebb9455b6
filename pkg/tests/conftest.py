from __future__ import annotations

import os

import pytest

from heact.ckks import scheme
from heact.ckks.params import preset


def pytest_addoption(parser):
    parser.addoption(
        "--extended", action="store_true", default=False,
        help="also run the slow paper-preset checks",
    )


def _extended(config) -> bool:
    return config.getoption("--extended") or os.environ.get("HEACT_EXTENDED", "") not in ("", "0")


def pytest_collection_modifyitems(config, items):
    if _extended(config):
        return
    skip = pytest.mark.skip(reason="paper-preset check; run with --extended or HEACT_EXTENDED=1")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def small_params():
    return preset("ci-small")


@pytest.fixture(scope="session")
def small_keys(small_params):
    return scheme.keygen(small_params, 7)


@pytest.fixture(scope="session")
def paper_params():
    return preset("cifar10-paper")


@pytest.fixture(scope="session")
def paper_keys(paper_params):
    return scheme.keygen(paper_params, 11)


# ---------------------------------------------------------------- acceptance lines

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Collects one status line per acceptance criterion."""

    def record(number, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE:
        terminalreporter.write_line(line)
