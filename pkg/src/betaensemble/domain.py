from __future__ import annotations

import dataclasses
import logging
import math
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

from betaensemble.exceptions import DomainException, SamplingException

logger = logging.getLogger(__name__)

#: Tolerance used when testing that a point lies on the unit sphere.
SPHERE_TOLERANCE = 1e-9


class ModelKind(Enum):
    """
    Ambient models supported for weighted compact sets.
    """

    EUCLIDEAN = "euclidean"
    SPHERE = "sphere"


@dataclasses.dataclass(frozen=True)
class AmbientModel:
    """
    Ambient model of a weighted compact set. ``EUCLIDEAN`` models ``K`` inside
    :math:`\\mathbb{R}^n \\subset \\mathbb{P}^n` with :math:`L = O(1)`, ``SPHERE``
    models ``K`` inside :math:`S^n`, sitting in the quadric of
    :math:`\\mathbb{P}^{n+1}`.

    :param kind: Model kind.
    :param n: Real dimension of the model manifold. Spheres are limited to
        :math:`n \\leq 2` so that exact product quadrature exists.
    """

    kind: ModelKind
    n: int

    def __post_init__(self):
        if isinstance(self.kind, str):
            try:
                object.__setattr__(self, "kind", ModelKind(self.kind))
            except ValueError:
                raise DomainException(f"Unknown ambient model {self.kind!r}") from None
        if self.n < 1:
            raise DomainException(f"Model dimension must be positive, got {self.n}")
        if self.kind == ModelKind.SPHERE and self.n > 2:
            raise DomainException(
                f"Spheres of dimension {self.n} are not supported (n <= 2)"
            )

    @classmethod
    def euclidean(cls, n: int) -> AmbientModel:
        return cls(kind=ModelKind.EUCLIDEAN, n=n)

    @classmethod
    def sphere(cls, n: int) -> AmbientModel:
        return cls(kind=ModelKind.SPHERE, n=n)

    @property
    def coordinate_dim(self) -> int:
        """Number of ambient coordinates of a point of the model."""
        return self.n if self.kind == ModelKind.EUCLIDEAN else self.n + 1

    @property
    def is_sphere(self) -> bool:
        return self.kind == ModelKind.SPHERE

    def __str__(self) -> str:
        return f"{self.kind.value}({self.n})"


@dataclasses.dataclass(frozen=True)
class Box:
    """
    Axis aligned box :math:`\\prod_i [a_i, b_i]` in :math:`\\mathbb{R}^n`.
    """

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(value) for value in np.atleast_1d(self.lower))
        upper = tuple(float(value) for value in np.atleast_1d(self.upper))
        if len(lower) != len(upper):
            raise DomainException("Box bounds have mismatched dimensions")
        if any(a >= b for a, b in zip(lower, upper)):
            raise DomainException(f"Box {lower} x {upper} has empty interior")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, n: int, half_width: float = 1.0) -> Box:
        return cls(lower=(-half_width,) * n, upper=(half_width,) * n)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.all(
            (points >= np.asarray(self.lower)) & (points <= np.asarray(self.upper)),
            axis=-1,
        )

    def project(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.lower, self.upper)


@dataclasses.dataclass(frozen=True)
class Cap:
    """
    Polar cap :math:`\\{x \\in S^n : x_{n+1} \\geq \\cos \\theta\\}` around the
    last coordinate axis. An angle of :math:`\\pi` is the full sphere.

    :param angle: Polar angle :math:`\\theta \\in (0, \\pi]` of the cap.
    """

    angle: float = math.pi

    def __post_init__(self):
        if not 0.0 < self.angle <= math.pi:
            raise DomainException(f"Cap angle must lie in (0, pi], got {self.angle}")

    @property
    def full(self) -> bool:
        return self.angle >= math.pi

    @property
    def height(self) -> float:
        return -1.0 if self.full else math.cos(self.angle)

    @property
    def diameter(self) -> float:
        return 2.0 * math.sin(min(self.angle, math.pi / 2))

    def contains(self, points: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(points, axis=-1)
        on_sphere = np.abs(norms - 1.0) <= SPHERE_TOLERANCE
        if self.full:
            return on_sphere
        return on_sphere & (points[..., -1] >= self.height - SPHERE_TOLERANCE)


Region = Union[Box, Cap]


class WeightKind(Enum):
    ZERO = "zero"
    CONSTANT = "constant"
    FLAT = "flat"
    QUADRATIC = "quadratic"
    LINEAR = "linear"


@dataclasses.dataclass(frozen=True)
class Weight:
    """
    Continuous weight :math:`\\phi` on ``K``, given declaratively so that it can
    be hashed, pickled and written back into configuration files.

    * ``zero``: :math:`\\phi = 0`
    * ``constant t``: :math:`\\phi = t`
    * ``flat``: :math:`\\phi = -\\frac{1}{2}\\log(1 + \\|x\\|^2)`, which cancels the
      metric of :math:`O(1)` on euclidean models
    * ``quadratic a``: :math:`\\phi = a \\|x\\|^2`
    * ``linear c_1 ... c_d``: :math:`\\phi = \\langle c, x \\rangle`
    """

    kind: WeightKind = WeightKind.ZERO
    params: Tuple[float, ...] = ()

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", WeightKind(self.kind))
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        expected = {
            WeightKind.ZERO: 0,
            WeightKind.FLAT: 0,
            WeightKind.CONSTANT: 1,
            WeightKind.QUADRATIC: 1,
        }.get(self.kind)
        if expected is not None and len(self.params) != expected:
            raise DomainException(
                f"Weight {self.kind.value!r} takes {expected} parameter(s), "
                f"got {len(self.params)}"
            )
        if self.kind == WeightKind.LINEAR and not self.params:
            raise DomainException("Linear weight requires coefficients")

    @classmethod
    def parse(cls, text: str) -> Weight:
        tokens = text.split()
        if not tokens:
            raise DomainException("Empty weight specification")
        try:
            kind = WeightKind(tokens[0].lower())
        except ValueError:
            raise DomainException(f"Unknown weight {tokens[0]!r}") from None
        try:
            params = tuple(float(token) for token in tokens[1:])
        except ValueError:
            raise DomainException(f"Invalid weight parameters in {text!r}") from None
        return cls(kind=kind, params=params)

    @property
    def is_zero(self) -> bool:
        return self.kind == WeightKind.ZERO or (
            self.kind == WeightKind.CONSTANT and self.params[0] == 0.0
        )

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.kind == WeightKind.ZERO:
            return np.zeros(points.shape[:-1])
        if self.kind == WeightKind.CONSTANT:
            return np.full(points.shape[:-1], self.params[0])
        squared = np.sum(points**2, axis=-1)
        if self.kind == WeightKind.FLAT:
            return -0.5 * np.log1p(squared)
        if self.kind == WeightKind.QUADRATIC:
            return self.params[0] * squared
        if len(self.params) != points.shape[-1]:
            raise DomainException(
                f"Linear weight has {len(self.params)} coefficients for "
                f"{points.shape[-1]} coordinates"
            )
        return points @ np.asarray(self.params)

    def shifted(self, t: float) -> Weight:
        """Weight plus the constant ``t``, where expressible."""
        if self.kind == WeightKind.ZERO:
            return Weight(WeightKind.CONSTANT, (t,))
        if self.kind == WeightKind.CONSTANT:
            return Weight(WeightKind.CONSTANT, (self.params[0] + t,))
        raise DomainException(f"Cannot shift a {self.kind.value!r} weight")

    def __str__(self) -> str:
        return " ".join([self.kind.value, *(repr(v) for v in self.params)])


class DensityKind(Enum):
    UNIFORM = "uniform"
    BUMP = "bump"
    ZONAL = "zonal"


@dataclasses.dataclass(frozen=True)
class Density:
    """
    Unnormalized density of a base measure with respect to the normalized
    uniform (Lebesgue or surface) measure of the region.

    * ``uniform``: constant 1
    * ``bump k``: :math:`\\prod_i (1 - u_i^2)^k` on boxes, :math:`u` the box
      coordinates rescaled to :math:`[-1, 1]`
    * ``zonal k``: :math:`((1 + x_{n+1}) / 2)^k` on spheres
    """

    kind: DensityKind = DensityKind.UNIFORM
    power: int = 0

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", DensityKind(self.kind))
        if self.power < 0:
            raise DomainException("Density power must be nonnegative")

    @classmethod
    def parse(cls, text: str) -> Density:
        tokens = text.split()
        if not tokens:
            raise DomainException("Empty density specification")
        try:
            kind = DensityKind(tokens[0].lower())
            power = int(tokens[1]) if len(tokens) > 1 else 0
        except ValueError:
            raise DomainException(f"Invalid density specification {text!r}") from None
        return cls(kind=kind, power=power)

    @property
    def is_uniform(self) -> bool:
        return self.kind == DensityKind.UNIFORM or self.power == 0

    @property
    def degree(self) -> int:
        """Polynomial degree of the density along one coordinate."""
        if self.kind == DensityKind.BUMP:
            return 2 * self.power
        if self.kind == DensityKind.ZONAL:
            return self.power
        return 0

    def __call__(self, points: np.ndarray, region: Region) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.is_uniform:
            return np.ones(points.shape[:-1])
        if self.kind == DensityKind.BUMP:
            if not isinstance(region, Box):
                raise DomainException("Bump densities are defined on boxes only")
            lower, upper = np.asarray(region.lower), np.asarray(region.upper)
            u = (2.0 * points - (lower + upper)) / (upper - lower)
            return np.prod(np.clip(1.0 - u**2, 0.0, None) ** self.power, axis=-1)
        if not isinstance(region, Cap):
            raise DomainException("Zonal densities are defined on spheres only")
        return ((1.0 + points[..., -1]) / 2.0) ** self.power

    def __str__(self) -> str:
        if self.kind == DensityKind.UNIFORM:
            return self.kind.value
        return f"{self.kind.value} {self.power}"


@dataclasses.dataclass(frozen=True)
class WeightedDomain:
    """
    Weighted compact set :math:`(K, \\phi)` inside an ambient model.

    :param model: Ambient model.
    :param region: :class:`Box` for euclidean models, :class:`Cap` for spheres.
    :param phi: Continuous weight on the region.
    :param phi_hoelder_alpha: Declared Hölder regularity :math:`\\alpha \\in (0, 2]`
        of the weight.
    """

    model: AmbientModel
    region: Region
    phi: Weight = dataclasses.field(default_factory=Weight)
    phi_hoelder_alpha: float = 2.0

    def __post_init__(self):
        if self.model.is_sphere:
            if not isinstance(self.region, Cap):
                raise DomainException("Sphere models require a polar cap region")
        else:
            if not isinstance(self.region, Box):
                raise DomainException("Euclidean models require a box region")
            if self.region.dim != self.model.n:
                raise DomainException(
                    f"Box of dimension {self.region.dim} in model {self.model}"
                )
        if not 0.0 < self.phi_hoelder_alpha <= 2.0:
            raise DomainException(
                f"Hölder exponent must lie in (0, 2], got {self.phi_hoelder_alpha}"
            )

    @classmethod
    def interval(
        cls, lower: float = -1.0, upper: float = 1.0, phi: Optional[Weight] = None
    ) -> WeightedDomain:
        return cls(
            model=AmbientModel.euclidean(1),
            region=Box(lower=(lower,), upper=(upper,)),
            phi=phi or Weight(),
        )

    @classmethod
    def sphere(
        cls, n: int = 1, angle: float = math.pi, phi: Optional[Weight] = None
    ) -> WeightedDomain:
        return cls(
            model=AmbientModel.sphere(n), region=Cap(angle=angle), phi=phi or Weight()
        )

    @property
    def diameter(self) -> float:
        return self.region.diameter

    @property
    def is_full_sphere(self) -> bool:
        return self.model.is_sphere and self.region.full

    @property
    def smooth_boundary(self) -> bool:
        """Boxes have piecewise smooth boundary; caps and full spheres do not."""
        return self.model.is_sphere

    def contains(self, x: np.ndarray) -> Union[bool, np.ndarray]:
        return contains(self, x)

    def project(self, points: np.ndarray) -> np.ndarray:
        """
        Map ambient points back onto the model manifold: clip to the box for
        euclidean models, normalize onto the sphere otherwise. Cap membership is
        not enforced.
        """
        if self.model.is_sphere:
            return points / np.linalg.norm(points, axis=-1, keepdims=True)
        return self.region.project(points)


def _check_dimension(model: AmbientModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != model.coordinate_dim:
        raise DomainException(
            f"Point of shape {x.shape} does not match the {model.coordinate_dim} "
            f"coordinates of model {model}"
        )
    return x


def contains(domain: WeightedDomain, x: np.ndarray) -> Union[bool, np.ndarray]:
    """
    Test membership of a point (or a stack of points) in ``K``, boundary
    inclusive.

    :param domain: Weighted compact set.
    :param x: Point of shape ``(d,)`` or points of shape ``(m, d)``.
    :raises: :class:`DomainException` on dimension mismatch.
    :return: A boolean, or a boolean array for stacked points.
    """
    x = _check_dimension(domain.model, x)
    inside = domain.region.contains(x) & np.all(np.isfinite(x), axis=-1)
    return bool(inside) if x.ndim == 1 else inside


def metric_log_weight(model: AmbientModel, p: int, x: np.ndarray) -> np.ndarray:
    """
    Logarithm of the pointwise factor that the standard Hermitian metric of
    :math:`O(p)` contributes to a weighted section: :math:`-\\frac{p}{2}\\log(1 +
    \\|x\\|^2)` on euclidean models and zero on spheres, where the factor is
    constant and absorbed into normalization.
    """
    x = _check_dimension(model, x)
    if model.is_sphere:
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
    value = -0.5 * p * np.log1p(np.sum(x**2, axis=-1))
    return value if x.ndim > 1 else float(value)


def uniform_draws(
    domain: WeightedDomain, rng: np.random.Generator, size: int
) -> np.ndarray:
    """Points uniformly distributed on ``K`` w.r.t. Lebesgue or surface measure."""
    region = domain.region
    if isinstance(region, Box):
        return rng.uniform(region.lower, region.upper, size=(size, region.dim))
    if domain.model.n == 1:
        t = rng.uniform(-region.angle, region.angle, size=size)
        return np.stack([np.sin(t), np.cos(t)], axis=-1)
    # Archimedes: the height is uniform on caps of S^2
    z = rng.uniform(region.height, 1.0, size=size)
    azimuth = rng.uniform(0.0, 2.0 * np.pi, size=size)
    r = np.sqrt(np.clip(1.0 - z**2, 0.0, None))
    return np.stack([r * np.cos(azimuth), r * np.sin(azimuth), z], axis=-1)


def evaluation_grid(domain: WeightedDomain, resolution: int = 64) -> np.ndarray:
    """
    Deterministic grid covering ``K``, used for sup-norm estimates.

    :param domain: Weighted compact set.
    :param resolution: Points per chart coordinate.
    :return: Array of shape ``(m, d)`` of points in ``K``.
    """
    if resolution < 2:
        raise DomainException("Grid resolution must be at least 2")
    region = domain.region
    if isinstance(region, Box):
        bounds = zip(region.lower, region.upper)
        axes = [np.linspace(a, b, resolution) for a, b in bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)
    if domain.model.n == 1:
        if region.full:
            t = np.linspace(-np.pi, np.pi, resolution, endpoint=False)
        else:
            t = np.linspace(-region.angle, region.angle, resolution)
        return np.stack([np.sin(t), np.cos(t)], axis=-1)
    polar = np.linspace(0.0, region.angle, resolution)[1:]
    azimuth = np.linspace(0.0, 2.0 * np.pi, 2 * resolution, endpoint=False)
    polar, azimuth = np.meshgrid(polar, azimuth, indexing="ij")
    points = np.stack(
        [
            np.sin(polar) * np.cos(azimuth),
            np.sin(polar) * np.sin(azimuth),
            np.cos(polar),
        ],
        axis=-1,
    ).reshape(-1, 3)
    return np.vstack([[0.0, 0.0, 1.0], points])


def chart(domain: WeightedDomain, points: np.ndarray) -> np.ndarray:
    """
    Chart coordinates used for histograms and 1-dimensional transport: the
    coordinates themselves on boxes, the angle in :math:`[0, 2\\pi)` on
    :math:`S^1` and (height, azimuth) on :math:`S^2`.
    """
    points = np.atleast_2d(points)
    if not domain.model.is_sphere:
        return points
    azimuth = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2.0 * np.pi)
    if domain.model.n == 1:
        return azimuth[:, None]
    return np.stack([points[:, 2], azimuth], axis=-1)


@dataclasses.dataclass(frozen=True)
class BaseMeasure:
    """
    Probability measure :math:`\\mu` on ``K``, given by a density with respect to
    the normalized uniform measure of the region. The density is normalized at
    construction using exact quadrature.

    :param domain: Weighted compact set carrying the measure.
    :param density: Unnormalized density.
    :param mass_density_params: Optional constants :math:`(c, \\rho)` of the
        mass-density condition :math:`\\mu(B(x, r)) \\geq c r^\\rho`.
    :param density_bound: Optional declared upper bound of the normalized
        density, used for rejection sampling. Estimated from a grid otherwise.
    :param name: Identifier recorded in Gram provenance.
    """

    domain: WeightedDomain
    density: Density = dataclasses.field(default_factory=Density)
    mass_density_params: Optional[Tuple[float, float]] = None
    density_bound: Optional[float] = None
    name: str = "mu"
    normalizer: float = dataclasses.field(default=1.0, init=False, compare=False)

    def __post_init__(self):
        if self.mass_density_params is not None:
            c, rho = self.mass_density_params
            if c <= 0 or rho <= 0:
                raise DomainException("Mass-density constants must be positive")
        if not self.density.is_uniform:
            # imported here, quadrature depends on this module
            from betaensemble.quadrature import uniform_rule

            nodes, weights = uniform_rule(
                self.domain, degree=self.density.degree + 2, oversample=16
            )
            mass = float(weights @ self.density(nodes, self.domain.region))
            if not mass > 0.0:
                raise DomainException(f"Density {self.density} has zero mass on K")
            object.__setattr__(self, "normalizer", mass)

    @classmethod
    def uniform(cls, domain: WeightedDomain, name: str = "uniform") -> BaseMeasure:
        return cls(domain=domain, name=name)

    def pdf(self, points: np.ndarray) -> np.ndarray:
        """Normalized density w.r.t. the uniform probability measure on ``K``."""
        return self.density(points, self.domain.region) / self.normalizer

    def bound(self) -> float:
        if self.density_bound is not None:
            return self.density_bound
        if self.density.is_uniform:
            return 1.0
        resolution = 128 if self.domain.model.n == 1 else 32
        grid = evaluation_grid(self.domain, resolution=resolution)
        return 1.1 * float(np.max(self.pdf(grid)))


def sample_base(
    measure: BaseMeasure,
    rng: np.random.Generator,
    size: Optional[int] = None,
    max_proposals: int = 10_000_000,
) -> np.ndarray:
    """
    Draw from :math:`\\mu` by rejection against the uniform measure of the region.

    :param measure: Base measure to sample from.
    :param rng: Random stream.
    :param size: Number of draws; a single point is returned when omitted.
    :param max_proposals: Rejection budget.
    :raises: :class:`SamplingException` when the budget is exhausted.
    :return: Array of shape ``(d,)`` or ``(size, d)``.
    """
    count = 1 if size is None else size
    domain = measure.domain
    if measure.density.is_uniform:
        draws = uniform_draws(domain, rng, count)
        return draws[0] if size is None else draws

    bound = measure.bound()
    accepted = []
    total, proposed = 0, 0
    while total < count:
        if proposed >= max_proposals:
            raise SamplingException(
                f"Rejection budget of {max_proposals} proposals exhausted with "
                f"{total}/{count} draws accepted (density bound {bound:.3g})"
            )
        batch = max(64, 2 * (count - total))
        candidates = uniform_draws(domain, rng, batch)
        keep = rng.uniform(0.0, bound, size=batch) < measure.pdf(candidates)
        accepted.append(candidates[keep])
        total += int(np.count_nonzero(keep))
        proposed += batch
    draws = np.concatenate(accepted)[:count]
    return draws[0] if size is None else draws


@dataclasses.dataclass(frozen=True)
class MassDensityReport:
    holds: bool
    worst_ratio: float
    radii: Tuple[float, ...]


def verify_mass_density(
    measure: BaseMeasure,
    rng: np.random.Generator,
    resolution: int = 16,
    samples: int = 200_000,
) -> MassDensityReport:
    """
    Check the mass-density condition :math:`\\mu(B(x, r)) \\geq c r^\\rho` on a grid
    of centers and dyadic radii :math:`2^{-k}` down to the grid resolution. Ball
    masses are Monte-Carlo estimates; the check allows three standard errors.

    :return: Report with the smallest observed ratio :math:`\\mu(B)/(c r^\\rho)`.
    """
    if measure.mass_density_params is None:
        raise DomainException("Measure does not declare mass-density constants")
    c, rho = measure.mass_density_params
    domain = measure.domain
    centers = evaluation_grid(domain, resolution)
    draws = sample_base(measure, rng, size=samples)
    spacing = domain.diameter / resolution
    radii = []
    k = 1
    while 2.0**-k >= spacing and k < 30:
        radii.append(2.0**-k)
        k += 1
    worst = np.inf
    for center in centers:
        distances = np.linalg.norm(draws - center, axis=-1)
        for r in radii:
            mass = np.count_nonzero(distances < r) / samples
            slack = 3.0 * math.sqrt(max(mass * (1.0 - mass), 1.0 / samples) / samples)
            worst = min(worst, (mass + slack) / (c * r**rho))
    logger.debug(
        "mass-density check: worst ratio %.4g over %d radii", worst, len(radii)
    )
    return MassDensityReport(
        holds=bool(worst >= 1.0), worst_ratio=float(worst), radii=tuple(radii)
    )
