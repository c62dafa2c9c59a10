import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

DEFAULT_DATA_DIR = "/root/data/mnist"


@pytest.fixture(scope="session")
def mnist_dir():
    path = os.environ.get("GLSTM_DATA_DIR", DEFAULT_DATA_DIR)
    if not os.path.exists(os.path.join(path, "train-images-idx3-ubyte")):
        pytest.skip(f"MNIST IDX files not found in {path} (set GLSTM_DATA_DIR)")
    return path


# acceptance criteria report: one line per criterion at the end of the run
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
