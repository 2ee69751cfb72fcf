from __future__ import annotations

import dataclasses
import logging
import math
from enum import Enum
from typing import Optional, Tuple

import numpy as np
import scipy.special

from betaensemble.basis import SectionBasis, weighted_row, weighted_rows
from betaensemble.detcore import Configuration, DetState
from betaensemble.domain import (
    BaseMeasure,
    WeightedDomain,
    contains,
    evaluation_grid,
    sample_base,
)
from betaensemble.exceptions import SamplingException

logger = logging.getLogger(__name__)


class ProposalKind(Enum):
    """Components of the single-site mixture proposal."""

    INDEPENDENT = "independent"
    LOCAL = "local"


@dataclasses.dataclass(frozen=True)
class EnsembleSpec:
    """
    The :math:`\\beta`-ensemble :math:`\\nu_p^\\beta` on :math:`K^{N_p}` with density
    :math:`|\\det S_p(x)|^\\beta_{p\\phi}` with respect to :math:`\\mu^{\\otimes N_p}`,
    known up to its normalizing constant. Weighted rows already carry
    :math:`e^{-p\\phi}` and the metric factor, so the log density is
    :math:`\\beta` times the weighted log determinant.

    :param beta: Inverse temperature :math:`\\beta > 0`.
    :param p: Degree.
    :param domain: Weighted compact set.
    :param measure: Base measure on ``K``.
    :param basis: Section basis of degree ``p``; orthonormalized for
        :func:`dpp_sample` and :func:`lbb_check`.
    """

    beta: float
    p: int
    domain: WeightedDomain
    measure: BaseMeasure
    basis: SectionBasis

    def __post_init__(self):
        if not self.beta > 0.0:
            raise SamplingException(f"beta must be positive, got {self.beta}")
        if self.basis.p != self.p or self.basis.model != self.domain.model:
            raise SamplingException(
                f"Basis of degree {self.basis.p} on {self.basis.model} does not match "
                f"degree {self.p} on {self.domain.model}"
            )
        if self.measure.domain != self.domain:
            raise SamplingException("Base measure lives on a different domain")

    @property
    def n_p(self) -> int:
        return self.basis.n_p

    @property
    def local_scale(self) -> float:
        """Standard deviation :math:`\\mathrm{diam}(K)/(4p)` of local moves."""
        return self.domain.diameter / (4.0 * max(self.p, 1))


@dataclasses.dataclass
class ChainState:
    det_state: DetState
    log_target: float
    rng: np.random.Generator
    accepted: int = 0
    proposed: int = 0

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    @property
    def config(self) -> Configuration:
        return self.det_state.config


@dataclasses.dataclass(frozen=True, eq=False)
class ChainResult:
    """
    :param samples: Kept configurations.
    :param logdet_trace: Weighted log determinant of each kept configuration.
    """

    samples: Tuple[Configuration, ...]
    logdet_trace: np.ndarray
    accepted: int
    proposed: int
    burn_in: int
    thin: int

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    def summary(self) -> dict:
        return {
            "kept": len(self.samples),
            "accepted": self.accepted,
            "proposed": self.proposed,
            "acceptance": self.acceptance,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "mean_logdet": (
                float(np.mean(self.logdet_trace)) if len(self.samples) else None
            ),
        }


def metropolis_log_ratio(
    beta: float, delta_log: float, kind: ProposalKind, log_density_ratio: float = 0.0
) -> float:
    """
    Log Metropolis-Hastings ratio of a single-site move.

    Independence proposals are drawn from :math:`\\mu` itself and cancel the base
    measure; local proposals are symmetric and carry the density ratio
    :math:`\\log f_\\mu(x') - \\log f_\\mu(x)` instead.
    """
    if delta_log == -math.inf:
        return -math.inf
    if kind == ProposalKind.INDEPENDENT:
        return beta * delta_log
    return beta * delta_log + log_density_ratio


def acceptance_probability(log_ratio: float) -> float:
    if log_ratio >= 0.0:
        return 1.0
    return math.exp(log_ratio)


def _local_move(
    spec: EnsembleSpec, x: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    moved = x + spec.local_scale * rng.standard_normal(x.size)
    if spec.domain.model.is_sphere:
        moved = moved / np.linalg.norm(moved)
    return moved


def mcmc_step(spec: EnsembleSpec, state: ChainState) -> ChainState:
    """
    One single-site Metropolis update of the mixture kernel: with probability
    one half an independent draw from :math:`\\mu`, otherwise a Gaussian move of
    scale :math:`\\mathrm{diam}(K)/(4p)` normalized back onto the sphere for
    spherical models. Local proposals outside ``K`` are rejected.
    """
    rng = state.rng
    det_state = state.det_state
    i = int(rng.integers(spec.n_p))
    x_old = det_state.points[i]
    state.proposed += 1

    if rng.random() < 0.5:
        kind = ProposalKind.INDEPENDENT
        x_new = sample_base(spec.measure, rng)
        log_density_ratio = 0.0
    else:
        kind = ProposalKind.LOCAL
        x_new = _local_move(spec, x_old, rng)
        if not contains(spec.domain, x_new):
            return state
        log_density_ratio = 0.0
        if not spec.measure.density.is_uniform:
            f_new, f_old = spec.measure.pdf(np.stack([x_new, x_old]))
            if f_new <= 0.0:
                return state
            log_density_ratio = math.log(f_new) - math.log(f_old)

    row = weighted_row(spec.basis, spec.domain, x_new)
    ratio = float(det_state.ratios(i, row[None, :])[0])
    delta_log = math.log(abs(ratio)) if ratio != 0.0 else -math.inf
    log_ratio = metropolis_log_ratio(spec.beta, delta_log, kind, log_density_ratio)
    if log_ratio >= 0.0 or math.log(rng.random()) < log_ratio:
        delta_log = det_state.replace_row(i, row, point=x_new)
        state.log_target += spec.beta * delta_log
        state.accepted += 1
    return state


def run_chain(
    spec: EnsembleSpec,
    init: Configuration,
    keep: int,
    rng: np.random.Generator,
    burn_in: Optional[int] = None,
    thin: Optional[int] = None,
) -> ChainResult:
    """
    Run a Metropolis chain targeting :math:`\\nu_p^\\beta`.

    :param spec: Ensemble.
    :param init: Nonsingular starting configuration.
    :param keep: Number of configurations to keep.
    :param rng: Per-chain random stream.
    :param burn_in: Discarded steps, :math:`50 N_p^2` by default.
    :param thin: Steps between kept configurations, :math:`N_p` by default.
    :raises: :class:`SamplingException` for a singular start.
    """
    n_p = spec.n_p
    burn_in = 50 * n_p**2 if burn_in is None else burn_in
    thin = n_p if thin is None else thin
    if keep < 0 or burn_in < 0 or thin < 1:
        raise SamplingException(
            f"Invalid chain lengths keep={keep} burn_in={burn_in} thin={thin}"
        )

    det_state = DetState.build(spec.basis, spec.domain, init)
    if det_state.singular:
        raise SamplingException("Chain initialization is singular")
    state = ChainState(
        det_state=det_state, log_target=spec.beta * det_state.logabsdet, rng=rng
    )
    for _ in range(burn_in):
        mcmc_step(spec, state)

    samples = []
    trace = np.empty(keep)
    for k in range(keep):
        for _ in range(thin):
            mcmc_step(spec, state)
        samples.append(state.config)
        trace[k] = det_state.logabsdet
    logger.debug(
        "chain beta=%g p=%d: kept %d, acceptance %.3f",
        spec.beta,
        spec.p,
        keep,
        state.acceptance,
    )
    return ChainResult(
        samples=tuple(samples),
        logdet_trace=trace,
        accepted=state.accepted,
        proposed=state.proposed,
        burn_in=burn_in,
        thin=thin,
    )


def default_grid(domain: WeightedDomain) -> np.ndarray:
    """Grid used for rejection bounds, about 4096 points or 512 per axis in 1d."""
    n = domain.model.n
    if n == 1:
        return evaluation_grid(domain, 512)
    if domain.model.is_sphere:
        return evaluation_grid(domain, 64)
    return evaluation_grid(domain, max(8, round(4096 ** (1.0 / n))))


def _require_projection(spec: EnsembleSpec) -> None:
    if not spec.basis.orthonormal:
        raise SamplingException("Projection sampling requires an orthonormalized basis")


def _chain_rule(
    spec: EnsembleSpec,
    rng: np.random.Generator,
    grid_rows: np.ndarray,
    inflation: float,
    max_proposals: int,
    batch: int,
) -> Tuple[Optional[np.ndarray], float]:
    # (points, inflation), or (None, larger inflation) when a proposal beats its bound
    n_p = spec.n_p
    grid_residual = np.sum(grid_rows**2, axis=-1)
    frame = np.zeros((n_p, 0))
    points = []
    for k in range(n_p):
        ceiling = max(float(np.max(grid_residual)), np.finfo(float).tiny)
        bound = inflation * ceiling
        proposed = 0
        chosen = None
        while chosen is None:
            if proposed >= max_proposals:
                raise SamplingException(
                    f"Rejection budget of {max_proposals} exhausted at point "
                    f"{k + 1}/{n_p} (bound {bound:.3g})"
                )
            candidates = sample_base(spec.measure, rng, size=batch)
            rows = weighted_rows(spec.basis, spec.domain, candidates, check=False)
            residual = np.sum(rows**2, axis=-1) - np.sum((rows @ frame) ** 2, axis=-1)
            peak = float(np.max(residual))
            if peak > bound:
                return None, 1.1 * peak / ceiling
            hits = np.flatnonzero(rng.uniform(0.0, bound, size=batch) < residual)
            proposed += batch
            if hits.size:
                chosen = hits[0]
        row = rows[chosen]
        direction = row - frame @ (frame.T @ row)
        direction /= np.linalg.norm(direction)
        frame = np.hstack([frame, direction[:, None]])
        grid_residual = np.clip(grid_residual - (grid_rows @ direction) ** 2, 0.0, None)
        points.append(candidates[chosen])
    return np.asarray(points), inflation


def dpp_sample(
    spec: EnsembleSpec,
    rng: np.random.Generator,
    grid: Optional[np.ndarray] = None,
    max_proposals: int = 1_000_000,
    batch: int = 64,
) -> Configuration:
    """
    Exact draw from the :math:`\\beta = 2` ensemble, a projection determinantal
    process with kernel :math:`\\sum_j s_j(x) s_j(y)`. Points are drawn by the chain
    rule: the next point has density proportional to the part of
    :math:`\\rho_p` orthogonal to the rows already selected, sampled by rejection
    against :math:`\\mu` with bound 1.1 times its grid maximum. A proposal above
    its bound raises the factor and restarts the whole draw. The output is
    randomly permuted.

    :raises: :class:`SamplingException` when ``beta != 2``, the basis is not
        orthonormal or the rejection budget is exhausted.
    """
    if spec.beta != 2.0:
        raise SamplingException(f"Exact sampling requires beta = 2, got {spec.beta}")
    _require_projection(spec)
    grid = default_grid(spec.domain) if grid is None else grid
    grid_rows = weighted_rows(spec.basis, spec.domain, grid)

    inflation = 1.1
    points = None
    while points is None:
        points, raised = _chain_rule(
            spec, rng, grid_rows, inflation, max_proposals, batch
        )
        if points is None:
            logger.warning(
                "conditional density exceeds %.4g times the grid maximum, "
                "restarting the draw with factor %.4g",
                inflation,
                raised,
            )
            inflation = raised

    order = rng.permutation(spec.n_p)
    return Configuration(points=points[order], p=spec.p)


@dataclasses.dataclass(frozen=True)
class LbbEstimate:
    """
    Monte-Carlo estimate of :math:`\\int |\\det S_p|^2_{p\\phi} d\\mu^{\\otimes N_p}`.
    """

    estimate: float
    stderr: float
    samples: int
    target: float

    @property
    def relative_error(self) -> float:
        return abs(self.estimate - self.target) / self.target


def lbb_check(
    spec: EnsembleSpec, samples: int, rng: np.random.Generator, batch: int = 10_000
) -> LbbEstimate:
    """
    Estimate the total mass of :math:`|\\det S_p|^2_{p\\phi}\\mu^{\\otimes N_p}` from
    i.i.d. :math:`\\mu` draws. For an orthonormal basis the mass is :math:`N_p!`.
    Values are aggregated in log space.
    """
    _require_projection(spec)
    if samples < 2:
        raise SamplingException("Mass estimate needs at least two samples")
    n_p = spec.n_p
    logs = []
    remaining = samples
    while remaining > 0:
        size = min(batch, remaining)
        draws = sample_base(spec.measure, rng, size=size * n_p)
        rows = weighted_rows(spec.basis, spec.domain, draws, check=False)
        _, logabsdet = np.linalg.slogdet(rows.reshape(size, n_p, n_p))
        logs.append(2.0 * logabsdet)
        remaining -= size
    values = np.concatenate(logs)
    log_mean = float(scipy.special.logsumexp(values) - math.log(samples))
    scaled = np.exp(values - values.max())
    stderr = math.exp(values.max()) * float(np.std(scaled, ddof=1)) / math.sqrt(samples)
    estimate = math.exp(log_mean)
    target = float(math.factorial(n_p))
    logger.debug("mass estimate %.6g +- %.2g (target %g)", estimate, stderr, target)
    return LbbEstimate(estimate=estimate, stderr=stderr, samples=samples, target=target)
