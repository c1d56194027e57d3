import os

import pytest


def pytest_addoption(parser):
    parser.addoption("--run-extended", action="store_true", default=False,
                     help="run checks marked extended (hours of simulation)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-extended") or os.environ.get("SPHERECRITS_EXTENDED") == "1":
        return
    skip = pytest.mark.skip(reason="extended; enable with --run-extended or SPHERECRITS_EXTENDED=1")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)
