from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.stats

from betaensemble.basis import (
    GramMatrix,
    Realization,
    SectionBasis,
    bergman_values,
    legendre_companion,
    weighted_row,
    weighted_rows,
)
from betaensemble.domain import (
    BaseMeasure,
    Box,
    WeightedDomain,
    contains,
    evaluation_grid,
    sample_base,
)
from betaensemble.exceptions import DetCoreException, DomainException

if TYPE_CHECKING:
    from betaensemble.metrics import EmpiricalMeasure

logger = logging.getLogger(__name__)

#: Rank-1 updates between forced refactorizations.
REFRESH_PERIOD = 64

#: Determinant ratios below this magnitude are re-evaluated by a full factorization.
SINGULAR_RATIO = 1e-12

#: LU pivots below this multiple of N_p times the largest pivot mark a singular matrix.
SINGULAR_PIVOT = float(np.finfo(float).eps)


@dataclasses.dataclass(frozen=True, eq=False)
class Configuration:
    """
    Ordered configuration :math:`x = (x_1, \\ldots, x_{N_p}) \\in K^{N_p}`.

    :param points: Array of shape ``(N_p, d)``.
    :param p: Degree of the section space the configuration belongs to.
    """

    points: np.ndarray
    p: int

    def __post_init__(self):
        points = np.array(np.atleast_2d(self.points), dtype=float)
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return self.points.shape[0]

    def empirical(self) -> EmpiricalMeasure:
        """Empirical measure :math:`\\mu^x`."""
        from betaensemble.metrics import EmpiricalMeasure

        return EmpiricalMeasure(points=self.points)

    def validate(self, basis: SectionBasis, domain: WeightedDomain) -> None:
        if len(self) != basis.n_p or self.p != basis.p:
            raise DetCoreException(
                f"Configuration of {len(self)} points and degree {self.p} does not "
                f"match basis of dimension {basis.n_p} and degree {basis.p}"
            )
        inside = contains(domain, self.points)
        if not np.all(inside):
            raise DomainException(
                f"{int(np.sum(~inside))} configuration point(s) outside K"
            )

    def permuted(self, order: Sequence[int]) -> Configuration:
        return Configuration(points=self.points[np.asarray(order)], p=self.p)

    def to_csv(self, path: Union[str, Path], header: str = "") -> Path:
        """Write one point per row with 17 significant digits."""
        path = Path(path)
        np.savetxt(path, self.points, delimiter=",", fmt="%.17g", header=header)
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path], p: int) -> Configuration:
        return cls(points=np.loadtxt(path, delimiter=",", ndmin=2), p=p)


def _conditioned_rows(
    basis: SectionBasis, domain: WeightedDomain, points: np.ndarray
) -> Tuple[np.ndarray, float]:
    # plain euclidean monomials are evaluated through their Legendre companion
    if (
        basis.realization == Realization.MONOMIAL
        and basis.transform is None
        and not basis.model.is_sphere
    ):
        box = domain.region if isinstance(domain.region, Box) else None
        companion, offset = legendre_companion(basis, box)
        return weighted_rows(companion, domain, points), offset
    return weighted_rows(basis, domain, points), 0.0


def logdet(
    basis: SectionBasis, domain: WeightedDomain, config: Configuration
) -> Tuple[float, float]:
    """
    :math:`\\log |\\det|` of the weighted evaluation matrix of a configuration,
    via LU with partial pivoting of the row equilibrated matrix. For another raw
    realization of the same section space the value changes by a configuration
    independent constant.

    :return: Tuple ``(logabsdet, sign)``, ``(-inf, 0)`` when numerically
        singular.
    """
    config.validate(basis, domain)
    rows, offset = _conditioned_rows(basis, domain, config.points)
    logabsdet, sign, _ = _factorize(rows, inverse=False)
    return logabsdet + offset, sign


def _factorize(
    matrix: np.ndarray, inverse: bool = True
) -> Tuple[float, float, Optional[np.ndarray]]:
    norms = np.linalg.norm(matrix, axis=1)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0.0):
        return -math.inf, 0.0, None
    scaled = matrix / norms[:, None]
    with warnings.catch_warnings():
        # exactly singular matrices are expected and handled below
        warnings.simplefilter("ignore", category=scipy.linalg.LinAlgWarning)
        lu, pivots = scipy.linalg.lu_factor(scaled, check_finite=False)
    diagonal = np.abs(np.diag(lu))
    if not np.all(np.isfinite(diagonal)) or np.min(diagonal) <= (
        SINGULAR_PIVOT * matrix.shape[0] * np.max(diagonal)
    ):
        return -math.inf, 0.0, None
    swaps = np.count_nonzero(pivots != np.arange(pivots.size))
    sign = float(np.prod(np.sign(np.diag(lu)))) * (-1.0) ** swaps
    logabsdet = float(np.sum(np.log(diagonal)) + np.sum(np.log(norms)))
    if not inverse:
        return logabsdet, sign, None
    # M = D S, so M^-1 = S^-1 D^-1
    solved = scipy.linalg.lu_solve((lu, pivots), np.eye(matrix.shape[0]))
    return logabsdet, sign, solved / norms[None, :]


class DetState:
    """
    Weighted evaluation matrix of a configuration together with its log
    determinant and inverse, maintained under single-row replacements with the
    matrix determinant lemma and Sherman-Morrison updates. The state is forced
    through a fresh factorization every ``refresh_period`` updates.

    A state is owned by a single worker; it is not safe to share.

    :param matrix: Square matrix, row ``i`` being the weighted row at ``x_i``.
    :param points: Points behind the rows, when known.
    :param basis: Basis used to evaluate rows of new points.
    :param domain: Weighted compact set used to evaluate rows of new points.
    :param refresh_period: Updates between forced refactorizations.
    """

    def __init__(
        self,
        matrix: np.ndarray,
        points: Optional[np.ndarray] = None,
        basis: Optional[SectionBasis] = None,
        domain: Optional[WeightedDomain] = None,
        refresh_period: int = REFRESH_PERIOD,
    ) -> None:
        self.matrix = np.array(matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise DetCoreException(f"Expected a square matrix, got {self.matrix.shape}")
        self.points = None if points is None else np.array(points, dtype=float)
        self.basis = basis
        self.domain = domain
        self.refresh_period = refresh_period
        self.refresh_counter = 0
        self.logabsdet = -math.inf
        self.sign = 0.0
        self.inverse: Optional[np.ndarray] = None
        self.refactorize()

    @classmethod
    def build(
        cls,
        basis: SectionBasis,
        domain: WeightedDomain,
        config: Configuration,
        refresh_period: int = REFRESH_PERIOD,
    ) -> DetState:
        config.validate(basis, domain)
        return cls(
            matrix=weighted_rows(basis, domain, config.points),
            points=config.points,
            basis=basis,
            domain=domain,
            refresh_period=refresh_period,
        )

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def singular(self) -> bool:
        return self.inverse is None

    @property
    def config(self) -> Configuration:
        if self.points is None or self.basis is None:
            raise DetCoreException("State does not track configuration points")
        return Configuration(points=self.points.copy(), p=self.basis.p)

    def refactorize(self) -> None:
        self.logabsdet, self.sign, self.inverse = _factorize(self.matrix)
        self.refresh_counter = 0

    def fresh_logabsdet(self) -> float:
        return _factorize(self.matrix, inverse=False)[0]

    def row_of(self, x: np.ndarray) -> np.ndarray:
        if self.basis is None or self.domain is None:
            raise DetCoreException("State has no basis to evaluate points with")
        return weighted_row(self.basis, self.domain, x)

    def ratios(self, i: int, rows: np.ndarray) -> np.ndarray:
        """Determinant ratios for replacing row ``i`` by each of ``rows``."""
        if self.inverse is None:
            raise DetCoreException(
                "Determinant ratios of a singular state are undefined"
            )
        return rows @ self.inverse[:, i]

    def replace_row(
        self, i: int, row: np.ndarray, point: Optional[np.ndarray] = None
    ) -> float:
        """
        Replace row ``i`` and return :math:`\\log|\\det M'| - \\log|\\det M|`.
        """
        row = np.asarray(row, dtype=float)
        previous = self.logabsdet
        old = self.matrix[i].copy()
        self.matrix[i] = row
        if point is not None and self.points is not None:
            self.points[i] = point

        ratio = 0.0 if self.inverse is None else float(row @ self.inverse[:, i])
        if self.inverse is None or abs(ratio) < SINGULAR_RATIO:
            self.refactorize()
            if self.logabsdet == -math.inf:
                return -math.inf if previous > -math.inf else 0.0
            return self.logabsdet - previous if previous > -math.inf else math.inf

        column = self.inverse[:, i].copy()
        self.inverse -= np.outer(column, (row - old) @ self.inverse) / ratio
        delta = math.log(abs(ratio))
        self.logabsdet += delta
        self.sign *= math.copysign(1.0, ratio)
        self.refresh_counter += 1
        if self.refresh_counter >= self.refresh_period:
            self.refactorize()
        return delta


def update_row(state: DetState, i: int, x_new: np.ndarray) -> Tuple[float, DetState]:
    """
    Replace the ``i``-th point of the state by ``x_new`` in :math:`O(N_p^2)`.
    States without a basis treat ``x_new`` as the new row itself.

    :return: Tuple ``(delta_log, state)``; ``delta_log`` is ``-inf`` when the new
        matrix is singular.
    """
    if state.basis is None:
        return state.replace_row(i, x_new), state
    return state.replace_row(i, state.row_of(x_new), point=x_new), state


@dataclasses.dataclass(frozen=True)
class FeketeBudget:
    """
    Iteration limits of :func:`fekete_search`.

    :param max_sweeps: Maximum number of sweeps over all slots.
    :param local_samples: Local proposals per slot and sweep.
    :param initial_radius: Initial local proposal radius, defaults to
        :math:`\\mathrm{diam}(K)/(4p)`.
    :param min_radius: Local refinement stops below this radius.
    :param tolerance: Smallest log-determinant gain accepted as an improvement.
    """

    max_sweeps: int = 500
    local_samples: int = 16
    initial_radius: Optional[float] = None
    min_radius: float = 1e-9
    tolerance: float = 1e-10


@dataclasses.dataclass(frozen=True)
class FeketeResult:
    configuration: Configuration
    logabsdet: float
    initial: Configuration
    initial_logabsdet: float
    iterations: int
    pool_size: int
    converged: bool

    def summary(self) -> dict:
        return {
            "p": self.configuration.p,
            "n_p": len(self.configuration),
            "logdet": self.logabsdet,
            "initial_logdet": self.initial_logabsdet,
            "iterations": self.iterations,
            "pool_size": self.pool_size,
            "converged": self.converged,
        }


def candidate_pool(
    basis: SectionBasis,
    domain: WeightedDomain,
    measure: BaseMeasure,
    rng: np.random.Generator,
    resolution: Optional[int] = None,
) -> np.ndarray:
    """
    Candidate pool for :func:`fekete_search`: a deterministic grid of ``K``
    together with :math:`4 N_p` draws from :math:`\\mu`.
    """
    n_p = basis.n_p
    if resolution is None:
        per_axis = math.ceil(n_p ** (1.0 / domain.model.n))
        resolution = max(16, 4 * per_axis)
    grid = evaluation_grid(domain, resolution)
    return np.vstack([grid, sample_base(measure, rng, size=4 * n_p)])


def _greedy_selection(rows: np.ndarray, n_p: int) -> np.ndarray:
    # column pivoted QR picks the lowest index among equal pivots
    _, _, pivots = scipy.linalg.qr(rows.T, mode="economic", pivoting=True)
    return pivots[:n_p]


def greedy_configuration(
    basis: SectionBasis, domain: WeightedDomain, candidates: np.ndarray
) -> Configuration:
    """
    Select :math:`N_p` candidates of approximately maximal volume by column
    pivoted QR of the weighted evaluation matrix.

    :raises: :class:`DetCoreException` when the selection is singular.
    """
    pool = np.atleast_2d(np.asarray(candidates, dtype=float))
    if pool.shape[0] < basis.n_p:
        raise DetCoreException(f"{pool.shape[0]} candidates for {basis.n_p} points")
    selected = _greedy_selection(weighted_rows(basis, domain, pool), basis.n_p)
    config = Configuration(points=pool[selected], p=basis.p)
    if logdet(basis, domain, config)[0] == -math.inf:
        raise DetCoreException(
            "Greedy selection is singular; the pool does not cover K"
        )
    return config


def _local_proposals(
    domain: WeightedDomain,
    x: np.ndarray,
    radius: float,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    proposals = domain.project(x + radius * rng.standard_normal((count, x.size)))
    return proposals[contains(domain, proposals)]


def fekete_search(
    basis: SectionBasis,
    domain: WeightedDomain,
    candidates: np.ndarray,
    budget: FeketeBudget,
    rng: np.random.Generator,
) -> FeketeResult:
    """
    Search for a near-Fekete configuration, a maximizer of
    :math:`\\|\\det S_p(x)\\|_{p\\phi}` over :math:`K^{N_p}`. The greedy start selects
    :math:`N_p` pool rows by column pivoted QR (ties go to the lowest index);
    coordinate exchange then moves single points to the best pool candidate,
    or to the best of a few local proposals whose radius is halved whenever a
    sweep brings no improvement.

    :param basis: Section basis.
    :param domain: Weighted compact set.
    :param candidates: Pool of at least :math:`4 N_p` points of ``K``.
    :param budget: Iteration limits.
    :param rng: Random stream for local proposals.
    :raises: :class:`DetCoreException` for a small pool or a zero budget.
    """
    pool = np.atleast_2d(np.asarray(candidates, dtype=float))
    n_p = basis.n_p
    if pool.shape[0] < 4 * n_p:
        raise DetCoreException(
            f"Candidate pool of {pool.shape[0]} points is smaller than "
            f"4 N_p = {4 * n_p}"
        )
    if budget.max_sweeps < 1:
        raise DetCoreException("Fekete search budget must allow at least one sweep")

    rows = weighted_rows(basis, domain, pool)
    selected = _greedy_selection(rows, n_p)
    state = DetState(rows[selected], points=pool[selected], basis=basis, domain=domain)
    if state.singular:
        raise DetCoreException(
            "Greedy initialization is singular; the pool does not cover K"
        )
    initial = state.config
    initial_logabsdet = state.logabsdet

    radius = budget.initial_radius or domain.diameter / (4.0 * max(basis.p, 1))
    converged = False
    sweeps = 0
    while sweeps < budget.max_sweeps:
        sweeps += 1
        improved = False
        for i in range(n_p):
            gains = np.abs(state.ratios(i, rows))
            best = int(np.argmax(gains))
            if math.log(gains[best]) > budget.tolerance:
                state.replace_row(i, rows[best], point=pool[best])
                improved = True
        for i in range(n_p):
            proposals = _local_proposals(
                domain, state.points[i], radius, budget.local_samples, rng
            )
            if proposals.shape[0] == 0:
                continue
            local_rows = weighted_rows(basis, domain, proposals, check=False)
            gains = np.abs(state.ratios(i, local_rows))
            best = int(np.argmax(gains))
            if math.log(gains[best]) > budget.tolerance:
                state.replace_row(i, local_rows[best], point=proposals[best])
                improved = True
        if not improved:
            radius /= 2.0
            if radius < budget.min_radius:
                converged = True
                break
        logger.debug(
            "sweep %d: logdet %.12g radius %.3g", sweeps, state.logabsdet, radius
        )

    state.refactorize()
    logger.info(
        "fekete search p=%d N_p=%d: logdet %.10g -> %.10g in %d sweeps (converged=%s)",
        basis.p,
        n_p,
        initial_logabsdet,
        state.logabsdet,
        sweeps,
        converged,
    )
    return FeketeResult(
        configuration=state.config,
        logabsdet=state.logabsdet,
        initial=initial,
        initial_logabsdet=initial_logabsdet,
        iterations=sweeps,
        pool_size=pool.shape[0],
        converged=converged,
    )


def sigma(
    basis: SectionBasis,
    domain: WeightedDomain,
    config: Configuration,
    fekete_ref: Configuration,
) -> float:
    """
    Computable surrogate :math:`\\hat\\sigma_x = \\frac{1}{pN_p}(\\log\\|\\det
    S_p(y)\\|_{p\\phi} - \\log\\|\\det S_p(x)\\|_{p\\phi})` of :math:`\\sigma_x`,
    with the sup-norm replaced by the best found configuration ``y``. When
    ``config`` beats the reference it becomes the reference and the result is
    zero.

    :return: :math:`\\hat\\sigma_x \\geq 0`, ``inf`` for singular configurations.
    """
    if basis.p < 1:
        raise DetCoreException("sigma is defined for p >= 1")
    reference, _ = logdet(basis, domain, fekete_ref)
    value, _ = logdet(basis, domain, config)
    if value == -math.inf:
        return math.inf
    result = (reference - value) / (basis.p * basis.n_p)
    if result < 0.0:
        logger.warning(
            "configuration improves on the Fekete reference by %.3g, "
            "using it as reference",
            -result,
        )
        return 0.0
    return result


def bm_constant(basis: SectionBasis, domain: WeightedDomain, grid: np.ndarray) -> float:
    """
    Best Bernstein-Markov constant :math:`B_p = \\sqrt{\\max \\rho_p}` of the
    inequality :math:`\\|s\\|_{L^\\infty} \\leq B_p \\|s\\|_{L^2}`
    restricted to ``grid``.

    :raises: :class:`DetCoreException` for an empty grid.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise DetCoreException("Bernstein-Markov constant needs a nonempty grid")
    return math.sqrt(float(np.max(bergman_values(basis, domain, np.atleast_2d(grid)))))


@dataclasses.dataclass(frozen=True)
class BernsteinMarkovFit:
    """
    :param A: Smallest constant with :math:`\\log B_p \\leq \\log A + A p^{1-\\delta}`
        on every degree.
    :param residual: Root mean square residual of the least squares fit of
        :math:`\\log B_p` against :math:`a + b p^{1-\\delta}`.
    :param growth_exponent: Slope of :math:`\\log \\log B_p` against :math:`\\log p`.
    :param conforming: Whether the data is compatible with the
        :math:`\\delta`-Bernstein-Markov bound.
    """

    A: float
    residual: float
    growth_exponent: float
    conforming: bool


def _smallest_constant(log_b: float, t: float) -> float:
    def excess(a: float) -> float:
        return math.log(a) + a * t - log_b

    high = 1.0
    while excess(high) < 0.0:
        high *= 2.0
    low = min(1.0, math.exp(log_b - t))
    while excess(low) > 0.0:
        low /= 2.0
    return scipy.optimize.brentq(excess, low, high, xtol=1e-14)


def bm_fit(
    b_sequence: Iterable[Tuple[int, float]],
    delta: float,
    threshold: float = 1e3,
    slack: float = 0.1,
) -> BernsteinMarkovFit:
    """
    Fit the :math:`\\delta`-Bernstein-Markov bound
    :math:`B_p \\leq A e^{A p^{1-\\delta}}` to computed constants.

    :param b_sequence: Pairs ``(p, B_p)``, at least four degrees.
    :param delta: Exponent :math:`\\delta \\in (0, 1)`.
    :param threshold: Constants above this are reported as non-conforming.
    :param slack: Allowed excess of the growth exponent over :math:`1 - \\delta`.
    :raises: :class:`DetCoreException` for an empty sequence.
    """
    data = sorted((int(p), float(b)) for p, b in b_sequence)
    if not data:
        raise DetCoreException("Bernstein-Markov fit needs at least one degree")
    if not 0.0 < delta < 1.0:
        raise DetCoreException(f"delta must lie in (0, 1), got {delta}")
    if len(data) < 4:
        logger.warning(
            "Bernstein-Markov fit on %d degrees; 4 or more advised", len(data)
        )
    p = np.asarray([d[0] for d in data], dtype=float)
    log_b = np.log([d[1] for d in data])
    t = p ** (1.0 - delta)

    constant = max(_smallest_constant(y, s) for y, s in zip(log_b, t))
    design = np.stack([np.ones_like(t), t], axis=-1)
    coefficients, *_ = np.linalg.lstsq(design, log_b, rcond=None)
    residual = float(np.sqrt(np.mean((design @ coefficients - log_b) ** 2)))

    positive = log_b > 1e-12
    growth = 0.0
    if np.count_nonzero(positive) >= 2:
        fit = scipy.stats.linregress(np.log(p[positive]), np.log(log_b[positive]))
        growth = float(fit.slope)
    conforming = constant <= threshold and growth <= 1.0 - delta + slack
    return BernsteinMarkovFit(
        A=constant, residual=residual, growth_exponent=growth, conforming=conforming
    )


def tau2(
    basis: SectionBasis,
    domain: WeightedDomain,
    gram_mu: GramMatrix,
    config: Configuration,
) -> float:
    """
    :math:`\\tau = \\sup_s \\|s\\|_{L^2(\\mu,p\\phi)} / \\|s\\|_{L^2(\\mu^x,p\\phi)}`,
    the square root of the largest eigenvalue of :math:`G_\\mu v = \\lambda G_x v` with
    :math:`G_x = N_p^{-1} E^T E`.

    :raises: :class:`DetCoreException` when :math:`G_x` is singular.
    """
    if gram_mu.n != basis.n_p:
        raise DetCoreException(
            f"Gram of size {gram_mu.n} for basis of dimension {basis.n_p}"
        )
    config.validate(basis, domain)
    rows = weighted_rows(basis, domain, config.points)
    gram_x = rows.T @ rows / basis.n_p
    try:
        eigenvalues = scipy.linalg.eigh(gram_mu.g, gram_x, eigvals_only=True)
    except np.linalg.LinAlgError:
        raise DetCoreException(
            "Empirical Gram matrix of the configuration is singular"
        ) from None
    return math.sqrt(float(eigenvalues[-1]))
