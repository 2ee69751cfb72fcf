from __future__ import annotations

import dataclasses
import math
from enum import Enum
from typing import Iterator, Optional, Tuple

import numpy as np

from betaensemble.domain import BaseMeasure, Box, WeightedDomain, sample_base
from betaensemble.exceptions import DomainException
from betaensemble.helpers import random_stream

Rule = Tuple[np.ndarray, np.ndarray]


class QuadratureKind(Enum):
    EXACT = "exact"
    MONTE_CARLO = "monte_carlo"


@dataclasses.dataclass(frozen=True)
class QuadratureSpec:
    """
    Quadrature used to integrate against a base measure.

    :param kind: ``EXACT`` product rules or ``MONTE_CARLO`` draws from the measure.
    :param degree: Polynomial degree integrated exactly. When omitted, callers
        supply the degree they need (``2p`` plus the density degree for Gram
        matrices).
    :param oversample: Extra nodes per axis on top of the exactness requirement;
        these make the rational metric weights of euclidean models converge to
        double precision.
    :param samples: Number of Monte-Carlo draws.
    :param batches: Monte-Carlo draws are generated in this many independently
        seeded batches.
    :param seed: Seed of the Monte-Carlo batches.
    """

    kind: QuadratureKind = QuadratureKind.EXACT
    degree: Optional[int] = None
    oversample: int = 32
    samples: int = 100_000
    batches: int = 8
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", QuadratureKind(self.kind))

    @classmethod
    def monte_carlo(
        cls, samples: int, seed: int = 0, batches: int = 8
    ) -> QuadratureSpec:
        return cls(
            kind=QuadratureKind.MONTE_CARLO, samples=samples, seed=seed, batches=batches
        )

    @property
    def exact(self) -> bool:
        return self.kind == QuadratureKind.EXACT

    def describe(self) -> str:
        if self.exact:
            return f"exact(degree={self.degree}, oversample={self.oversample})"
        return (
            f"monte_carlo(samples={self.samples}, batches={self.batches}, "
            f"seed={self.seed})"
        )


def _gauss_legendre(count: int, lower: float, upper: float) -> Rule:
    x, w = np.polynomial.legendre.leggauss(count)
    return lower + (x + 1.0) * (upper - lower) / 2.0, w / 2.0


def uniform_rule(domain: WeightedDomain, degree: int, oversample: int = 0) -> Rule:
    """
    Product rule for the normalized uniform measure on ``K``: Gauss-Legendre on
    each box axis; the trapezoid rule on the full circle; Gauss-Legendre in the
    angle on circular arcs; Gauss-Legendre in height times trapezoid in azimuth
    on :math:`S^2` caps.

    :param domain: Weighted compact set.
    :param degree: Polynomial degree integrated exactly.
    :param oversample: Extra nodes per axis.
    :return: Nodes of shape ``(m, d)`` and weights summing to one.
    """
    if degree < 0:
        raise DomainException(f"Quadrature degree must be nonnegative, got {degree}")
    region = domain.region
    if isinstance(region, Box):
        count = math.ceil((degree + 1) / 2) + oversample
        bounds = zip(region.lower, region.upper)
        rules = [_gauss_legendre(count, a, b) for a, b in bounds]
        nodes = np.meshgrid(*[r[0] for r in rules], indexing="ij")
        weights = np.meshgrid(*[r[1] for r in rules], indexing="ij")
        return (
            np.stack([n.ravel() for n in nodes], axis=-1),
            np.prod(np.stack([w.ravel() for w in weights], axis=-1), axis=-1),
        )
    count = degree + 1 + oversample
    if domain.model.n == 1:
        if region.full:
            t = -np.pi + 2.0 * np.pi * np.arange(count) / count
            weights = np.full(count, 1.0 / count)
        else:
            t, weights = _gauss_legendre(count, -region.angle, region.angle)
        return np.stack([np.sin(t), np.cos(t)], axis=-1), weights
    rings = math.ceil((degree + 1) / 2) + oversample
    z, wz = _gauss_legendre(rings, region.height, 1.0)
    azimuth = 2.0 * np.pi * np.arange(count) / count
    z, azimuth = np.meshgrid(z, azimuth, indexing="ij")
    r = np.sqrt(np.clip(1.0 - z**2, 0.0, None))
    nodes = np.stack([r * np.cos(azimuth), r * np.sin(azimuth), z], axis=-1)
    weights = np.repeat(wz, count) / count
    return nodes.reshape(-1, 3), weights


def measure_batches(
    measure: BaseMeasure, spec: QuadratureSpec, degree: int
) -> Iterator[Rule]:
    """
    Quadrature for :math:`\\int f \\, d\\mu` as a sequence of partial rules whose
    weights add up to one. Exact rules come as a single batch; Monte-Carlo rules
    come in ``spec.batches`` batches, each drawn from its own seeded stream so the
    sum does not depend on how batches are scheduled.
    """
    if spec.exact:
        degree = spec.degree if spec.degree is not None else degree
        nodes, weights = uniform_rule(
            measure.domain,
            degree + measure.density.degree,
            oversample=spec.oversample,
        )
        yield nodes, weights * measure.pdf(nodes)
        return
    sizes = np.full(spec.batches, spec.samples // spec.batches)
    sizes[: spec.samples % spec.batches] += 1
    for index, size in enumerate(sizes):
        if size == 0:
            continue
        rng = random_stream(spec.seed, index)
        nodes = sample_base(measure, rng, size=int(size))
        yield nodes, np.full(size, 1.0 / spec.samples)


def measure_rule(measure: BaseMeasure, spec: QuadratureSpec, degree: int) -> Rule:
    """All batches of :func:`measure_batches` concatenated into one rule."""
    batches = list(measure_batches(measure, spec, degree))
    return (
        np.concatenate([nodes for nodes, _ in batches]),
        np.concatenate([weights for _, weights in batches]),
    )
