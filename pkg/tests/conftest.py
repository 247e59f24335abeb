import os
from pathlib import Path

import numpy as np
import pytest

from qahm_lab.data import write_idx

IMAGES = "train-images-idx3-ubyte"
LABELS = "train-labels-idx1-ubyte"


def _find(directory: Path, stem: str):
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    return None


@pytest.fixture(scope="session")
def mnist_files(tmp_path_factory):
    """Paths to MNIST training IDX files.

    Real files are used when ``QAHM_MNIST_DIR`` points at a directory holding
    them. Otherwise the 5000-digit subset bundled with mlxtend is written out
    as IDX files after a fixed shuffle (the subset is sorted by class).
    """
    env = os.environ.get("QAHM_MNIST_DIR")
    if env:
        d = Path(env)
        img, lab = _find(d, IMAGES), _find(d, LABELS)
        if img and lab:
            return img, lab
    mlxtend_data = pytest.importorskip("mlxtend.data")
    X, y = mlxtend_data.mnist_data()
    order = np.random.default_rng(20180101).permutation(len(y))
    out = tmp_path_factory.mktemp("mnist")
    img = write_idx(out / (IMAGES + ".gz"), X[order].reshape(-1, 28, 28).astype(np.uint8))
    lab = write_idx(out / (LABELS + ".gz"), y[order].astype(np.uint8))
    return img, lab


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance line; returns a callable ``(number, ok, detail)``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number: int, ok: bool, detail: str):
        lines.append((number, f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"))
        assert ok, detail

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
