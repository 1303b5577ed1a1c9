"""Shared test helpers."""

from __future__ import annotations

import numpy as np
import pytest

from mlbvp.model import as_points


class ExactProbe:
    """Stands in for a composite: its bundle is the problem's exact solution."""

    mu_product = 1.0

    def __init__(self, problem):
        self.problem = problem

    def bundle(self, points):
        return self.problem.exact_bundle(as_points(points, self.problem.dim))

    def value(self, points):
        return self.bundle(points).value


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
