import math

import numpy as np
import pytest

from betaensemble.domain import BaseMeasure, Density, WeightedDomain
from betaensemble.exceptions import DomainException
from betaensemble.quadrature import (
    QuadratureKind,
    QuadratureSpec,
    measure_batches,
    measure_rule,
    uniform_rule,
)


@pytest.mark.parametrize(
    "domain",
    [
        WeightedDomain.interval(),
        WeightedDomain.interval(2.0, 5.0),
        WeightedDomain.sphere(1),
        WeightedDomain.sphere(1, angle=1.0),
        WeightedDomain.sphere(2),
        WeightedDomain.sphere(2, angle=0.5),
    ],
)
def test_weights_sum_to_one(domain):
    _, weights = uniform_rule(domain, 6)
    assert weights.sum() == pytest.approx(1.0, abs=1e-13)
    assert np.all(weights > 0.0)


def test_interval_exactness(interval):
    nodes, weights = uniform_rule(interval, 4)
    assert weights @ nodes[:, 0] ** 4 == pytest.approx(1.0 / 5.0, abs=1e-14)


def test_circle_exactness(circle):
    nodes, weights = uniform_rule(circle, 2)
    assert weights @ nodes[:, 0] ** 2 == pytest.approx(0.5, abs=1e-14)


def test_sphere_exactness(sphere):
    nodes, weights = uniform_rule(sphere, 2)
    assert weights @ nodes[:, 2] ** 2 == pytest.approx(1.0 / 3.0, abs=1e-14)
    assert weights @ (nodes[:, 0] * nodes[:, 1]) == pytest.approx(0.0, abs=1e-14)


def test_hemisphere_height():
    nodes, weights = uniform_rule(WeightedDomain.sphere(2, angle=math.pi / 2), 1)
    assert weights @ nodes[:, 2] == pytest.approx(0.5, abs=1e-14)


def test_arc_mean():
    nodes, weights = uniform_rule(WeightedDomain.sphere(1, angle=math.pi / 2), 20)
    assert weights @ nodes[:, 1] == pytest.approx(2.0 / math.pi, abs=1e-12)


def test_negative_degree(interval):
    with pytest.raises(DomainException):
        uniform_rule(interval, -1)


def test_spec_describe():
    assert QuadratureSpec().describe() == "exact(degree=None, oversample=32)"
    spec = QuadratureSpec.monte_carlo(1000, seed=3)
    assert spec.kind == QuadratureKind.MONTE_CARLO
    assert not spec.exact
    assert spec.describe() == "monte_carlo(samples=1000, batches=8, seed=3)"
    assert QuadratureSpec(kind="monte_carlo").kind == QuadratureKind.MONTE_CARLO


def test_exact_measure_rule(interval):
    measure = BaseMeasure(domain=interval, density=Density.parse("bump 1"))
    nodes, weights = measure_rule(measure, QuadratureSpec(), 2)
    assert weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert weights @ nodes[:, 0] ** 2 == pytest.approx(1.0 / 5.0, abs=1e-12)
    assert len(list(measure_batches(measure, QuadratureSpec(), 2))) == 1


def test_monte_carlo_rule(interval):
    measure = BaseMeasure.uniform(interval)
    spec = QuadratureSpec.monte_carlo(40_001, seed=11)
    batches = list(measure_batches(measure, spec, 2))
    assert len(batches) == 8
    assert sum(len(weights) for _, weights in batches) == 40_001

    nodes, weights = measure_rule(measure, spec, 2)
    assert weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert weights @ nodes[:, 0] ** 2 == pytest.approx(1.0 / 3.0, abs=0.01)

    again, _ = measure_rule(measure, spec, 2)
    assert np.array_equal(nodes, again)
