import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fpcrf.config import CrfParams  # noqa: E402
from fpcrf.fields import unary_from_probabilities  # noqa: E402

KINDS = ("a", "s", "fd", "fs", "fc")

ACCEPTANCE = []


def random_instance(rng, max_side=10, max_classes=4, max_kernels=2, max_radius=4,
                    max_iterations=5):
    """A random small CRF problem: ``(features, rgb, unary, params)``."""
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    c = int(rng.integers(2, max_classes + 1))
    m = int(rng.integers(0, max_kernels + 1))
    kinds = tuple(rng.choice(KINDS, size=m, replace=False))
    d = int(rng.integers(1, 5))
    features = rng.normal(size=(h, w, d))
    rgb = rng.random((h, w, 3))
    unary = unary_from_probabilities(rng.dirichlet(np.ones(c), size=(h, w)))
    bandwidths = {
        "alpha": rng.uniform(0.5, 4), "beta": rng.uniform(0.1, 1),
        "gamma": rng.uniform(0.5, 4), "delta": rng.uniform(0.5, 2),
        "zeta": rng.uniform(0.5, 2), "eta": rng.uniform(0.5, 4),
    }
    params = CrfParams(
        kinds=kinds,
        weights=rng.uniform(0.1, 2.0, size=m),
        bandwidths=bandwidths,
        compatibility=rng.uniform(-1, 2, size=(c, c)),
        filter_radius=int(rng.integers(2, max_radius + 1)),
        iterations=int(rng.integers(1, max_iterations + 1)),
        tolerance=0.0,
    )
    return features, rgb, unary, params


@pytest.fixture
def acceptance_report():
    def report(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
