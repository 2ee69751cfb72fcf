import itertools
import logging
import math

import numpy as np
import pytest
import scipy.stats

from betaensemble.basis import basis_for, orthonormal_basis, weighted_rows
from betaensemble.detcore import Configuration, DetState
from betaensemble.domain import (
    BaseMeasure,
    Density,
    WeightedDomain,
    contains,
    evaluation_grid,
)
from betaensemble.exceptions import SamplingException
from betaensemble.helpers import random_stream
from betaensemble.sampler import (
    ChainState,
    EnsembleSpec,
    ProposalKind,
    acceptance_probability,
    default_grid,
    dpp_sample,
    lbb_check,
    mcmc_step,
    metropolis_log_ratio,
    run_chain,
)


def _spec(domain: WeightedDomain, p: int, beta: float, measure=None, orthonormal=True):
    measure = measure or BaseMeasure.uniform(domain)
    if orthonormal:
        basis = orthonormal_basis(domain, measure, p)
    else:
        basis = basis_for(domain, p)
    return EnsembleSpec(beta=beta, p=p, domain=domain, measure=measure, basis=basis)


def _equispaced(p: int) -> Configuration:
    angles = 2.0 * np.pi * np.arange(2 * p + 1) / (2 * p + 1)
    points = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    return Configuration(points=points, p=p)


def _angles(points: np.ndarray) -> np.ndarray:
    return np.mod(np.arctan2(points[:, 1], points[:, 0]), 2 * np.pi)


def _power(points: np.ndarray, frequencies: np.ndarray) -> np.ndarray:
    phases = np.exp(1j * np.outer(frequencies, _angles(points)))
    return np.abs(phases.sum(axis=1)) ** 2


def _batch_means(trace: np.ndarray, batches: int = 20):
    means = trace[: len(trace) // batches * batches].reshape(batches, -1).mean(axis=1)
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(batches))


def test_spec_validation(interval, circle):
    basis = basis_for(interval, 2)
    measure = BaseMeasure.uniform(interval)
    with pytest.raises(SamplingException):
        EnsembleSpec(beta=0.0, p=2, domain=interval, measure=measure, basis=basis)
    with pytest.raises(SamplingException):
        EnsembleSpec(beta=1.0, p=3, domain=interval, measure=measure, basis=basis)
    with pytest.raises(SamplingException):
        EnsembleSpec(
            beta=1.0,
            p=2,
            domain=interval,
            measure=BaseMeasure.uniform(circle),
            basis=basis,
        )
    spec = EnsembleSpec(beta=1.0, p=2, domain=interval, measure=measure, basis=basis)
    assert spec.n_p == 3
    assert spec.local_scale == pytest.approx(0.25)


def test_metropolis_ratio():
    assert metropolis_log_ratio(2.0, -math.inf, ProposalKind.LOCAL, 1.0) == -math.inf
    assert acceptance_probability(-math.inf) == 0.0
    assert metropolis_log_ratio(2.0, 0.5, ProposalKind.INDEPENDENT, 3.0) == 1.0
    assert metropolis_log_ratio(2.0, 0.5, ProposalKind.LOCAL, 3.0) == 4.0
    assert acceptance_probability(0.1) == 1.0
    probabilities = [
        acceptance_probability(
            metropolis_log_ratio(beta, -0.3, ProposalKind.INDEPENDENT)
        )
        for beta in (0.5, 1.0, 2.0, 4.0, 8.0)
    ]
    assert all(a > b for a, b in zip(probabilities, probabilities[1:]))


@pytest.mark.parametrize("beta", [0.5, 2.0, 4.0])
def test_detailed_balance(interval, beta):
    grid = np.linspace(-1.0, 1.0, 8)
    weights = np.arange(1.0, 9.0) / 36.0
    rows = weighted_rows(basis_for(interval, 1), interval, grid[:, None])
    states = list(itertools.product(range(8), repeat=2))
    index = {state: k for k, state in enumerate(states)}

    def log_det(state):
        return np.linalg.slogdet(rows[list(state)])[1]

    target = np.array(
        [math.exp(beta * log_det(s)) * weights[s[0]] * weights[s[1]] for s in states]
    )
    transition = np.zeros((64, 64))
    for state in states:
        old = log_det(state)
        for slot in range(2):
            x = state[slot]
            local = {x - 1: 0.5, x + 1: 0.5}
            for y in range(8):
                if y == x:
                    continue
                moved = list(state)
                moved[slot] = y
                delta = log_det(moved) - old if old > -math.inf else math.inf
                density = math.log(weights[y]) - math.log(weights[x])
                independent = acceptance_probability(
                    metropolis_log_ratio(beta, delta, ProposalKind.INDEPENDENT, density)
                )
                symmetric = acceptance_probability(
                    metropolis_log_ratio(beta, delta, ProposalKind.LOCAL, density)
                )
                transition[index[state], index[tuple(moved)]] += 0.5 * (
                    0.5 * weights[y] * independent + 0.5 * local.get(y, 0.0) * symmetric
                )
    flow = target[:, None] * transition
    assert np.max(np.abs(flow - flow.T)) <= 1e-10 * target.max()


def test_mcmc_step_is_reversible(interval):
    measure = BaseMeasure(domain=interval, density=Density.parse("bump 1"))
    spec = _spec(interval, 1, 2.0, measure=measure, orthonormal=False)
    init = Configuration(points=[[-0.5], [0.5]], p=1)
    det_state = DetState.build(spec.basis, interval, init)
    state = ChainState(
        det_state=det_state,
        log_target=2.0 * det_state.logabsdet,
        rng=random_stream(11),
    )
    edges = np.array([-1.0 / 3.0, 1.0 / 3.0])

    def cell(points: np.ndarray) -> int:
        first, second = np.searchsorted(edges, points[:, 0])
        return 3 * int(first) + int(second)

    for _ in range(1000):
        mcmc_step(spec, state)
    counts = np.zeros((9, 9))
    current = cell(det_state.points)
    for _ in range(60_000):
        mcmc_step(spec, state)
        following = cell(det_state.points)
        counts[current, following] += 1
        current = following
    # binned consecutive states of a reversible chain have a symmetric joint law
    assert np.count_nonzero(counts - np.diag(np.diag(counts))) > 20
    band = 5.0 * np.sqrt(counts + counts.T) + 1.0
    assert np.all(np.abs(counts - counts.T) <= band)


def test_mcmc_step_counts(circle, rng):
    spec = _spec(circle, 2, 2.0, orthonormal=False)
    det_state = DetState.build(spec.basis, circle, _equispaced(2))
    state = ChainState(
        det_state=det_state, log_target=2.0 * det_state.logabsdet, rng=rng
    )
    for _ in range(200):
        state = mcmc_step(spec, state)
    assert state.proposed == 200
    assert 0 < state.accepted <= 200
    assert np.all(contains(circle, state.config.points))
    expected = 2.0 * det_state.fresh_logabsdet()
    assert state.log_target == pytest.approx(expected, abs=1e-8)


def test_run_chain_deterministic(circle):
    spec = _spec(circle, 2, 1.0, orthonormal=False)
    first, second = (
        run_chain(spec, _equispaced(2), 10, random_stream(5, 2), burn_in=100, thin=3)
        for _ in range(2)
    )
    assert len(first.samples) == 10
    assert np.array_equal(first.logdet_trace, second.logdet_trace)
    for a, b in zip(first.samples, second.samples):
        assert np.array_equal(a.points, b.points)
    assert first.proposed == 130
    assert first.summary()["kept"] == 10


def test_run_chain_defaults(interval, rng):
    measure = BaseMeasure(domain=interval, density=Density.parse("bump 1"))
    spec = _spec(interval, 1, 1.0, measure=measure, orthonormal=False)
    init = Configuration(points=[[-0.5], [0.5]], p=1)
    result = run_chain(spec, init, 5, rng)
    assert result.burn_in == 200
    assert result.thin == 2
    assert np.all(np.isfinite(result.logdet_trace))
    for sample in result.samples:
        assert np.all(contains(interval, sample.points))


def test_run_chain_keep_zero(circle, rng):
    spec = _spec(circle, 1, 2.0, orthonormal=False)
    result = run_chain(spec, _equispaced(1), 0, rng, burn_in=25)
    assert result.samples == ()
    assert result.proposed == 25
    assert result.summary()["mean_logdet"] is None


def test_run_chain_invalid(circle, rng):
    spec = _spec(circle, 1, 2.0, orthonormal=False)
    singular = Configuration(points=[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], p=1)
    with pytest.raises(SamplingException):
        run_chain(spec, singular, 1, rng)
    with pytest.raises(SamplingException):
        run_chain(spec, _equispaced(1), 1, rng, thin=0)


def test_default_grid(interval, sphere):
    assert default_grid(interval).shape == (512, 1)
    assert np.all(contains(sphere, default_grid(sphere)))


def test_dpp_sample_circle(circle, rng):
    spec = _spec(circle, 2, 2.0)
    grid = evaluation_grid(circle, 128)
    for _ in range(500):
        config = dpp_sample(spec, rng, grid=grid)
        assert config.points.shape == (5, 2)
        assert np.all(contains(circle, config.points))
        differences = config.points[:, None] - config.points[None, :]
        distances = np.linalg.norm(differences, axis=-1)
        assert np.min(distances[np.triu_indices(5, 1)]) > 0.0


def test_dpp_single_point_follows_measure(interval, rng):
    measure = BaseMeasure(domain=interval, density=Density.parse("bump 1"))
    spec = _spec(interval, 0, 2.0, measure=measure)
    grid = evaluation_grid(interval, 33)
    draws = np.array(
        [dpp_sample(spec, rng, grid=grid).points[0, 0] for _ in range(5000)]
    )
    assert np.mean(draws**2) == pytest.approx(0.2, abs=0.012)


def test_dpp_slots_exchangeable(interval):
    measure = BaseMeasure(domain=interval, density=Density.parse("bump 1"))
    spec = _spec(interval, 2, 2.0, measure=measure)
    rng = random_stream(12)
    grid = evaluation_grid(interval, 65)
    draws = np.array(
        [dpp_sample(spec, rng, grid=grid).points[:, 0] for _ in range(3000)]
    )
    for slot in range(1, spec.n_p):
        assert scipy.stats.ks_2samp(draws[:, 0], draws[:, slot]).pvalue > 1e-3


def test_dpp_restarts_below_bound(interval, rng, caplog):
    spec = _spec(interval, 2, 2.0)
    with caplog.at_level(logging.WARNING, logger="betaensemble.sampler"):
        config = dpp_sample(spec, rng, grid=np.array([[0.0]]))
    assert "restarting the draw" in caplog.text
    assert np.all(contains(interval, config.points))
    assert np.unique(config.points[:, 0]).size == 3


def test_dpp_requirements(circle, rng):
    with pytest.raises(SamplingException):
        dpp_sample(_spec(circle, 1, 1.0), rng)
    with pytest.raises(SamplingException):
        dpp_sample(_spec(circle, 1, 2.0, orthonormal=False), rng)


def test_lbb_single_section(interval, rng):
    estimate = lbb_check(_spec(interval, 0, 2.0), 1000, rng)
    assert estimate.target == 1.0
    assert estimate.relative_error <= 1e-12
    assert estimate.stderr == pytest.approx(0.0, abs=1e-12)


def test_lbb_interval(interval, rng):
    estimate = lbb_check(_spec(interval, 1, 2.0), 200_000, rng)
    assert estimate.target == 2.0
    assert estimate.relative_error <= 0.05


def test_lbb_requirements(circle, rng):
    with pytest.raises(SamplingException):
        lbb_check(_spec(circle, 1, 2.0, orthonormal=False), 100, rng)
    with pytest.raises(SamplingException):
        lbb_check(_spec(circle, 1, 2.0), 1, rng)


@pytest.mark.slow
@pytest.mark.parametrize(
    "domain, p, n_p",
    [
        (WeightedDomain.interval(), 1, 2),
        (WeightedDomain.interval(), 2, 3),
        (WeightedDomain.interval(), 3, 4),
        (WeightedDomain.sphere(1), 1, 3),
        (WeightedDomain.sphere(2), 1, 4),
    ],
)
def test_lbb_mass(domain, p, n_p, rng):
    estimate = lbb_check(_spec(domain, p, 2.0), 1_000_000, rng)
    assert estimate.target == math.factorial(n_p)
    assert estimate.relative_error <= 0.05


@pytest.mark.slow
def test_chains_agree(circle):
    spec = _spec(circle, 3, 2.0, orthonormal=False)
    results = [
        run_chain(spec, _equispaced(3), 1000, random_stream(seed, 2), burn_in=2000)
        for seed in (1, 2)
    ]
    (m1, s1), (m2, s2) = (_batch_means(r.logdet_trace) for r in results)
    assert abs(m1 - m2) <= 3.0 * math.sqrt(s1**2 + s2**2)


@pytest.mark.slow
@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_samplers_agree_on_circle(circle, p):
    spec = _spec(circle, p, 2.0)
    configurations = math.ceil(10_000 / spec.n_p)
    total = configurations * spec.n_p
    bins = np.linspace(0.0, 2.0 * np.pi, 17)
    expected = total / 16
    band = math.sqrt(total * (1 / 16) * (15 / 16))

    rng = random_stream(3, 3, p)
    grid = evaluation_grid(circle, 128)
    exact = np.vstack(
        [dpp_sample(spec, rng, grid=grid).points for _ in range(configurations)]
    )
    counts, _ = np.histogram(_angles(exact), bins)
    assert np.all(np.abs(counts - expected) <= 3.0 * band)

    chain = run_chain(
        spec, _equispaced(p), configurations, random_stream(3, 2, p), thin=20
    )
    points = np.vstack([sample.points for sample in chain.samples])
    counts, _ = np.histogram(_angles(points), bins)
    # autocorrelated draws
    assert np.all(np.abs(counts - expected) <= 4.0 * band)


@pytest.mark.slow
@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_dpp_pair_statistics_circle(circle, p):
    # E|sum_i exp(i k theta_i)|^2 = min(k, N_p) for the Dirichlet kernel
    spec = _spec(circle, p, 2.0)
    rng = random_stream(4, p)
    grid = evaluation_grid(circle, 128)
    frequencies = np.arange(1, spec.n_p + 3)
    samples = [dpp_sample(spec, rng, grid=grid) for _ in range(2000)]
    power = np.array([_power(sample.points, frequencies) for sample in samples])
    mean = power.mean(axis=0)
    stderr = power.std(axis=0, ddof=1) / math.sqrt(power.shape[0])
    expected = np.minimum(frequencies, spec.n_p)
    assert np.all(np.abs(mean - expected) <= 4.0 * stderr + 1e-9)
