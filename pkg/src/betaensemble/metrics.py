from __future__ import annotations

import dataclasses
import logging
import math
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import ot
import scipy.optimize
import scipy.stats

from betaensemble.basis import Realization, basis_for, build_basis
from betaensemble.detcore import FeketeBudget, candidate_pool, fekete_search
from betaensemble.domain import AmbientModel, BaseMeasure, Box, WeightedDomain, chart
from betaensemble.exceptions import MetricsException
from betaensemble.quadrature import uniform_rule

logger = logging.getLogger(__name__)

#: Number of Fourier modes per axis in dictionaries of 1-dimensional models.
FOURIER_MODES = 32

#: Largest harmonic degree in dictionaries on the 2-sphere.
HARMONIC_DEGREE = 8

#: Entropic regularization used for approximate transport distances.
SINKHORN_REGULARIZATION = 0.05


@dataclasses.dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """
    Weighted sum of Dirac masses, uniform :math:`\\mu^x = \\frac{1}{N}\\sum_k
    \\delta_{x_k}` unless weights are given.
    """

    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = self.weights
        if weights is None:
            weights = np.full(points.shape[0], 1.0 / points.shape[0])
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (points.shape[0],) or abs(weights.sum() - 1.0) > 1e-12:
            raise MetricsException(
                "Empirical weights must be one per point and sum to 1"
            )
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.points.shape[0]


class RefKind(Enum):
    CLOSED_FORM = "closed_form"
    FEKETE_HISTOGRAM = "fekete_histogram"


@dataclasses.dataclass(frozen=True, eq=False)
class EquilibriumRef:
    """
    Reference for the equilibrium measure :math:`\\mu_{eq}(K, \\phi)`.

    ``CLOSED_FORM`` references are the Haar measure with constant ``density``
    with respect to surface measure. ``FEKETE_HISTOGRAM`` references are the
    empirical measure of a near-Fekete configuration of degree ``p_ref``,
    summarized by a chart histogram with ``bins`` bins on 1-dimensional models.
    """

    kind: RefKind
    domain: WeightedDomain
    density: Optional[float] = None
    p_ref: Optional[int] = None
    points: Optional[np.ndarray] = None
    bins: Optional[int] = None
    edges: Optional[np.ndarray] = None
    histogram: Optional[np.ndarray] = None

    def rule(self, degree: int = 2 * FOURIER_MODES) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes and probability weights representing the reference."""
        if self.kind == RefKind.CLOSED_FORM:
            return uniform_rule(self.domain, degree, oversample=8)
        return self.points, np.full(self.points.shape[0], 1.0 / self.points.shape[0])

    def as_empirical(self) -> EmpiricalMeasure:
        nodes, weights = self.rule()
        return EmpiricalMeasure(points=nodes, weights=weights / weights.sum())

    def summary(self) -> dict:
        return {
            "kind": self.kind.value,
            "density": self.density,
            "p_ref": self.p_ref,
            "bins": self.bins,
            "edges": self.edges,
            "histogram": self.histogram,
        }


Measure = Union[EmpiricalMeasure, EquilibriumRef]


class TestDictionary:
    """
    Finite family of test functions in the unit ball of :math:`C^\\gamma(K)`.

    Members are Fourier modes :math:`\\cos(k\\theta), \\sin(k\\theta)` on the circle,
    cosine modes :math:`\\cos(k\\pi u)` along each axis of a box, and real
    spherical harmonics of degree :math:`1 \\le l \\le 8` on :math:`S^2`. A member of
    frequency :math:`\\omega` is scaled by :math:`1/(3(1 + \\max(\\omega, 1)^\\gamma))`;
    the scales decrease in :math:`\\gamma`, so dictionaries for :math:`\\gamma \\le
    \\gamma'` hold the same functions and the estimator is monotone.

    :param domain: Weighted compact set.
    :param gamma: Hölder exponent :math:`\\gamma \\in (0, 2]`.
    :param modes: Fourier modes per axis of 1-dimensional charts.
    :param harmonic_degree: Largest harmonic degree on :math:`S^2`.
    """

    __test__ = False

    def __init__(
        self,
        domain: WeightedDomain,
        gamma: float,
        modes: int = FOURIER_MODES,
        harmonic_degree: int = HARMONIC_DEGREE,
    ) -> None:
        if not 0.0 < gamma <= 2.0:
            raise MetricsException(f"gamma must lie in (0, 2], got {gamma}")
        self.domain = domain
        self.gamma = gamma
        self.modes = modes
        self.harmonic_degree = harmonic_degree
        model = domain.model
        if model.is_sphere and model.n == 2:
            self._harmonics = build_basis(
                AmbientModel.sphere(2), harmonic_degree, Realization.ORTHOGONAL
            )
            degrees = self._harmonics.indices[1:, 0].astype(float)
            # sup norm of a real harmonic of degree l is at most sqrt(2(2l+1))
            sup = np.sqrt(2.0 * (2.0 * degrees + 1.0))
            self.frequencies = degrees
            self.scales = 1.0 / (3.0 * sup * (1.0 + degrees**gamma))
        elif model.is_sphere:
            k = np.repeat(np.arange(1, modes + 1, dtype=float), 2)
            self.frequencies = k
            self.scales = 1.0 / (3.0 * (1.0 + k**gamma))
        else:
            region: Box = domain.region
            k = np.arange(1, modes + 1, dtype=float)
            self.frequencies = np.concatenate([k * np.pi / w for w in region.widths])
            bound = 1.0 + np.maximum(self.frequencies, 1.0) ** gamma
            self.scales = 1.0 / (3.0 * bound)
        self.verify()

    def __len__(self) -> int:
        return self.scales.size

    def spec(self) -> dict:
        return {
            "gamma": self.gamma,
            "modes": self.modes,
            "harmonic_degree": self.harmonic_degree,
            "members": len(self),
        }

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Scaled members at ``points``, an array of shape ``(m, len(self))``."""
        points = np.atleast_2d(points)
        model = self.domain.model
        if model.is_sphere and model.n == 2:
            return self._harmonics.eval(points)[:, 1:] * self.scales
        if model.is_sphere:
            theta = chart(self.domain, points)[:, 0]
            k = np.arange(1, self.modes + 1)
            angles = np.outer(theta, k)
            values = np.empty((points.shape[0], 2 * self.modes))
            values[:, 0::2] = np.cos(angles)
            values[:, 1::2] = np.sin(angles)
            return values * self.scales
        region: Box = self.domain.region
        u = (points - np.asarray(region.lower)) / region.widths
        k = np.arange(1, self.modes + 1)
        values = np.hstack(
            [np.cos(np.pi * np.outer(u[:, axis], k)) for axis in range(region.dim)]
        )
        return values * self.scales

    def verify(self, resolution: int = 4096) -> None:
        """
        Check the sup-norm and the Hölder quotient of every member along a fine
        chart grid.

        :raises: :class:`MetricsException` when a member leaves the unit ball.
        """
        model = self.domain.model
        if model.is_sphere and model.n == 2:
            theta = np.linspace(0.0, np.pi, resolution)
            line = np.stack(
                [np.sin(theta), np.zeros_like(theta), np.cos(theta)], axis=-1
            )
            step = np.pi / (resolution - 1)
        elif model.is_sphere:
            theta = np.linspace(0.0, 2.0 * np.pi, resolution)
            line = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
            step = 2.0 * np.pi / (resolution - 1)
        else:
            region: Box = self.domain.region
            t = np.linspace(0.0, 1.0, resolution)[:, None]
            line = np.asarray(region.lower) + t * region.widths
            step = float(np.linalg.norm(region.widths)) / (resolution - 1)
        values = self.evaluate(line)
        sup = float(np.max(np.abs(values)))
        increment = float(np.max(np.abs(np.diff(values, axis=0))))
        quotient = increment / step ** min(self.gamma, 1.0)
        if sup > 1.0 or quotient > 1.0:
            raise MetricsException(
                f"Dictionary member outside the C^{self.gamma} unit ball "
                f"(sup {sup:.3g}, Hölder quotient {quotient:.3g})"
            )

    def integrate(self, measure: Measure) -> np.ndarray:
        """Integrals of all members against a measure."""
        if isinstance(measure, EquilibriumRef):
            degree = 2 * max(self.modes, self.harmonic_degree) + 2
            nodes, weights = measure.rule(degree=degree)
        else:
            nodes, weights = measure.points, measure.weights
        return weights @ self.evaluate(nodes)


def dist_gamma(dictionary: TestDictionary, mu1: Measure, mu2: Measure) -> float:
    """
    Estimate :math:`\\mathrm{dist}_\\gamma(\\mu_1, \\mu_2) =
    \\sup_{\\|v\\|_{C^\\gamma} \\le 1}
    |\\langle \\mu_1 - \\mu_2, v\\rangle|` by the maximum over the dictionary, a lower
    bound exact on the dictionary span.
    """
    difference = dictionary.integrate(mu1) - dictionary.integrate(mu2)
    return float(np.max(np.abs(difference))) if difference.size else 0.0


def _segment_integral(alpha: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # integral of |alpha - s| over [a, b]
    below = 0.5 * ((b - alpha) ** 2 - (a - alpha) ** 2)
    above = 0.5 * ((alpha - a) ** 2 - (alpha - b) ** 2)
    inside = 0.5 * ((alpha - a) ** 2 + (b - alpha) ** 2)
    return np.where(alpha <= a, below, np.where(alpha >= b, above, inside))


def _circle_to_haar(positions: np.ndarray, weights: np.ndarray) -> float:
    """
    Exact :math:`W_1` on the unit circle between atoms at ``positions`` in
    :math:`[0, 1)` and the uniform measure, in units of the circumference. The
    cumulative difference :math:`D(s) = F(s) - s` is shifted by its median.
    """
    order = np.argsort(positions)
    positions, weights = positions[order], weights[order]
    starts = np.concatenate([[0.0], positions])
    ends = np.concatenate([positions, [1.0]])
    levels = np.concatenate([[0.0], np.cumsum(weights)])

    def below_median(c: float) -> float:
        # Lebesgue measure of {s : D(s) < c} minus one half
        lengths = np.clip(ends - np.maximum(starts, levels - c), 0.0, None)
        return float(np.sum(lengths)) - 0.5

    low = float(np.min(levels - ends)) - 1.0
    high = float(np.max(levels - starts)) + 1.0
    shift = scipy.optimize.brentq(below_median, low, high, xtol=1e-15)
    return float(np.sum(_segment_integral(levels - shift, starts, ends)))


def wasserstein1(
    mu1: EmpiricalMeasure,
    ref: Measure,
    domain: WeightedDomain,
    exact: bool = True,
    regularization: float = SINKHORN_REGULARIZATION,
) -> float:
    """
    Kantorovich-Wasserstein distance :math:`W_1` for the geodesic distance of the
    model. Intervals use the quantile coupling and the circle the median shift
    of the cumulative difference, both exact. Transport on :math:`S^2` and on
    boxes of dimension two or more is entropic and approximate; the latter
    requires ``exact=False``.

    :raises: :class:`MetricsException` for unsupported geometry in exact mode.
    """
    model = domain.model
    if model.n == 1 and model.is_sphere:
        u = chart(domain, mu1.points)[:, 0] / (2.0 * np.pi)
        if isinstance(ref, EquilibriumRef) and ref.kind == RefKind.CLOSED_FORM:
            return 2.0 * np.pi * _circle_to_haar(u, mu1.weights)
        other = ref.as_empirical() if isinstance(ref, EquilibriumRef) else ref
        v = chart(domain, other.points)[:, 0] / (2.0 * np.pi)
        distance = ot.wasserstein_circle(
            u, v, u_weights=mu1.weights, v_weights=other.weights, p=1
        )
        return 2.0 * np.pi * float(np.ravel(distance)[0])

    other = ref.as_empirical() if isinstance(ref, EquilibriumRef) else ref
    if model.n == 1:
        return float(
            ot.wasserstein_1d(
                mu1.points[:, 0], other.points[:, 0], mu1.weights, other.weights, p=1
            )
        )
    if not model.is_sphere and exact:
        raise MetricsException(f"Exact W1 is not supported on {model}; use exact=False")
    if model.is_sphere:
        cost = np.arccos(np.clip(mu1.points @ other.points.T, -1.0, 1.0))
    else:
        cost = ot.dist(mu1.points, other.points, metric="euclidean")
    logger.debug("approximate W1 on %s with regularization %g", model, regularization)
    return float(ot.sinkhorn2(mu1.weights, other.weights, cost, regularization))


def equilibrium_ref(
    domain: WeightedDomain,
    rng: Optional[np.random.Generator] = None,
    p_ref: int = 32,
    measure: Optional[BaseMeasure] = None,
    budget: Optional[FeketeBudget] = None,
) -> EquilibriumRef:
    """
    Reference for :math:`\\mu_{eq}(K, \\phi)`: the Haar measure on full spheres
    with zero weight, otherwise the empirical measure of a near-Fekete
    configuration of degree ``p_ref`` with a chart histogram of about
    :math:`\\sqrt{N_{p_{ref}}}` bins.

    :param domain: Weighted compact set.
    :param rng: Random stream for the Fekete candidate pool.
    :param p_ref: Reference degree, at least twice the largest experiment degree.
    :param measure: Base measure of the candidate pool, uniform by default.
    :param budget: Budget of the Fekete search.
    """
    if domain.is_full_sphere and domain.phi.is_zero:
        area = 2.0 * np.pi if domain.model.n == 1 else 4.0 * np.pi
        return EquilibriumRef(
            kind=RefKind.CLOSED_FORM, domain=domain, density=1.0 / area
        )

    if rng is None:
        raise MetricsException("A random stream is required for Fekete references")
    measure = measure or BaseMeasure.uniform(domain)
    basis = basis_for(domain, p_ref, Realization.ORTHOGONAL)
    result = fekete_search(
        basis,
        domain,
        candidate_pool(basis, domain, measure, rng),
        budget or FeketeBudget(),
        rng,
    )
    points = result.configuration.points
    bins = max(2, round(math.sqrt(points.shape[0])))
    edges = histogram = None
    if domain.model.n == 1:
        coordinate = chart(domain, points)[:, 0]
        histogram, edges = np.histogram(coordinate, bins=bins, density=True)
    return EquilibriumRef(
        kind=RefKind.FEKETE_HISTOGRAM,
        domain=domain,
        p_ref=p_ref,
        points=points,
        bins=bins,
        edges=edges,
        histogram=histogram,
    )


def holder_exponent(alpha: float, smooth_boundary: bool = True) -> float:
    """
    Exponent :math:`\\alpha''` of the equidistribution rate for a weight of
    Hölder regularity :math:`\\alpha`: :math:`\\alpha/(24 + 12\\alpha)` when ``K`` has
    smooth or empty boundary, :math:`\\alpha/(48 + 24\\alpha)` for piecewise smooth
    boundary.
    """
    if not 0.0 < alpha <= 2.0:
        raise MetricsException(f"Hölder exponent must lie in (0, 2], got {alpha}")
    if smooth_boundary:
        return alpha / (24.0 + 12.0 * alpha)
    return alpha / (48.0 + 24.0 * alpha)


def predicted_exponent(
    gamma: float, delta: float, alpha: float, smooth_boundary: bool
) -> float:
    """
    Predicted decay exponent :math:`-\\gamma \\min(\\delta/4, \\alpha'')`
    of the distances.
    """
    return -gamma * min(delta / 4.0, holder_exponent(alpha, smooth_boundary))


def tail_exponent(ps: Sequence[float], fractions: Sequence[float]) -> float:
    """
    Slope of :math:`\\log(-\\log f_p)` against :math:`\\log p` over the degrees with
    exceedance fraction :math:`0 < f_p < 1`; ``nan`` with fewer than two such
    degrees.
    """
    ps = np.asarray(ps, dtype=float)
    fractions = np.asarray(fractions, dtype=float)
    usable = (fractions > 0.0) & (fractions < 1.0)
    if np.count_nonzero(usable) < 2:
        return math.nan
    fit = scipy.stats.linregress(np.log(ps[usable]), np.log(-np.log(fractions[usable])))
    return float(fit.slope)


@dataclasses.dataclass(frozen=True)
class TailPoint:
    p: int
    samples: int
    median: float
    q25: float
    q75: float
    mean: float
    threshold: float
    exceedance: float

    def row(self) -> Tuple[float, ...]:
        return (
            self.p,
            self.median,
            self.q25,
            self.q75,
            self.mean,
            self.threshold,
            self.exceedance,
        )


TAIL_COLUMNS = (
    "p",
    "median_dist",
    "q25",
    "q75",
    "mean_dist",
    "threshold",
    "exceedance_fraction",
)


@dataclasses.dataclass(frozen=True)
class LdpFit:
    """
    :param exponent: Slope of the log median distance against :math:`\\log p`.
    :param stderr: Standard error of the slope.
    :param anchor: Constant ``c`` of the threshold :math:`c q^\\gamma`.
    :param tail_curve: Per-degree distance quantiles and exceedance fractions.
    :param tail_exponent: See :func:`tail_exponent`.
    """

    exponent: float
    stderr: float
    intercept: float
    anchor: float
    gamma: float
    delta: float
    tail_curve: Tuple[TailPoint, ...]
    tail_exponent: float

    @property
    def exceedance_non_increasing(self) -> bool:
        fractions = [point.exceedance for point in self.tail_curve]
        return all(b <= a for a, b in zip(fractions, fractions[1:]))

    def summary(self) -> dict:
        return {
            "exponent": self.exponent,
            "stderr": self.stderr,
            "intercept": self.intercept,
            "anchor": self.anchor,
            "gamma": self.gamma,
            "delta": self.delta,
            "tail_exponent": self.tail_exponent,
            "exceedance_non_increasing": self.exceedance_non_increasing,
        }


def ldp_fit(
    records: Sequence[Tuple[int, Sequence[float]]],
    gamma: float = 1.0,
    delta: float = 0.5,
    min_degrees: int = 4,
    min_samples: int = 50,
) -> LdpFit:
    """
    Fit the decay of sample distances to equilibrium across degrees.

    The distance exponent is the regression slope of the log median distance
    on :math:`\\log p`. Exceedances are counted above :math:`c q^\\gamma` with
    :math:`q = p^{-\\delta/4}` and ``c`` anchored so that the threshold equals the
    median distance of the largest degree.

    :param records: Pairs ``(p, distances)``.
    :raises: :class:`MetricsException` for too few degrees or samples.
    """
    data = sorted((int(p), np.asarray(d, dtype=float)) for p, d in records)
    if len(data) < min_degrees:
        raise MetricsException(f"LDP fit needs {min_degrees} degrees, got {len(data)}")
    short = [p for p, d in data if d.size < min_samples]
    if short:
        raise MetricsException(f"Degrees {short} have fewer than {min_samples} samples")

    ps = np.asarray([p for p, _ in data], dtype=float)
    medians = np.asarray([np.median(d) for _, d in data])
    if np.any(medians <= 0.0):
        raise MetricsException("Median distances must be positive")
    regression = scipy.stats.linregress(np.log(ps), np.log(medians))

    q = ps ** (-delta / 4.0)
    anchor = float(medians[-1] / q[-1] ** gamma)
    curve = []
    for (p, distances), q_p in zip(data, q):
        threshold = anchor * q_p**gamma
        q25, median, q75 = np.quantile(distances, [0.25, 0.5, 0.75])
        curve.append(
            TailPoint(
                p=p,
                samples=distances.size,
                median=float(median),
                q25=float(q25),
                q75=float(q75),
                mean=float(np.mean(distances)),
                threshold=float(threshold),
                exceedance=float(np.mean(distances > threshold)),
            )
        )
    return LdpFit(
        exponent=float(regression.slope),
        stderr=float(regression.stderr),
        intercept=float(regression.intercept),
        anchor=anchor,
        gamma=gamma,
        delta=delta,
        tail_curve=tuple(curve),
        tail_exponent=tail_exponent(ps, [point.exceedance for point in curve]),
    )
