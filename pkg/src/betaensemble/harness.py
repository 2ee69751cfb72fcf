from __future__ import annotations

import asyncio
import dataclasses
import logging
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from cafeteria.asyncio.callbacks import CallbackRegistry, CallbackType

from betaensemble.basis import (
    SectionBasis,
    basis_for,
    bergman_integral,
    gram,
    orthonormal_basis,
    orthonormalize,
    section_norm_ratios,
)
from betaensemble.config import ExperimentConfig
from betaensemble.detcore import (
    FeketeBudget,
    bm_constant,
    bm_fit,
    candidate_pool,
    fekete_search,
    greedy_configuration,
    logdet,
    sigma,
    tau2,
)
from betaensemble.domain import (
    BaseMeasure,
    WeightedDomain,
    evaluation_grid,
    verify_mass_density,
)
from betaensemble.exceptions import MetricsException, MissingInputException
from betaensemble.helpers import random_stream
from betaensemble.metrics import (
    TAIL_COLUMNS,
    EmpiricalMeasure,
    EquilibriumRef,
    RefKind,
    TestDictionary,
    dist_gamma,
    equilibrium_ref,
    holder_exponent,
    ldp_fit,
    predicted_exponent,
    wasserstein1,
)
from betaensemble.records import (
    RunRecord,
    config_hash,
    csv_hash,
    read_csv,
    read_json,
    require_single_hash,
    write_csv,
    write_json,
)
from betaensemble.sampler import (
    EnsembleSpec,
    default_grid,
    dpp_sample,
    lbb_check,
    run_chain,
)

logger = logging.getLogger(__name__)

# first spawn key of every random stream, one per kind of task
STREAM_REFERENCE = 0
STREAM_FEKETE = 1
STREAM_CHAIN = 2
STREAM_DPP = 3
STREAM_DIAG = 4

#: The mass check is run for section spaces of at most this dimension.
LBB_MAX_POINTS = 6


class HarnessEventType(Enum):
    """
    Harness lifecycle events dispatched through the callback registry.
    """

    TASK_DONE = "task_done"
    ARTIFACT_WRITTEN = "artifact_written"
    COMMAND_DONE = "command_done"


@dataclasses.dataclass(frozen=True)
class HarnessEvent:
    """
    :param type: Event type.
    :param command: Command that produced the event.
    :param task: Task key, for ``TASK_DONE`` events.
    :param path: Artifact path, for ``ARTIFACT_WRITTEN`` events.
    :param record: Run record, for ``COMMAND_DONE`` events.
    """

    type: HarnessEventType
    command: str
    task: Optional[Tuple[int, ...]] = None
    path: Optional[Path] = None
    record: Optional[RunRecord] = None


CallbacksType = Union[
    CallbackRegistry,
    Dict[HarnessEventType, Union[CallbackType, List[CallbackType]]],
]


def _setup(config: ExperimentConfig) -> Tuple[WeightedDomain, BaseMeasure]:
    return config.model.domain(), config.model.base_measure()


def _budget(config: ExperimentConfig) -> FeketeBudget:
    return FeketeBudget(
        max_sweeps=config.fekete.max_sweeps,
        local_samples=config.fekete.local_samples,
        min_radius=config.fekete.min_radius,
        tolerance=config.fekete.tolerance,
    )


def _pool(
    config: ExperimentConfig,
    basis: SectionBasis,
    domain: WeightedDomain,
    measure: BaseMeasure,
    rng: np.random.Generator,
) -> np.ndarray:
    return candidate_pool(
        basis, domain, measure, rng, resolution=config.fekete.pool_resolution
    )


def distance_columns(config: ExperimentConfig) -> List[str]:
    return [f"dist_gamma_{gamma:g}" for gamma in config.gammas] + ["w1"]


def _distances(
    config: ExperimentConfig,
    domain: WeightedDomain,
    dictionaries: Sequence[TestDictionary],
    reference: EquilibriumRef,
    points: np.ndarray,
) -> List[float]:
    measure = EmpiricalMeasure(points=points)
    values = [dist_gamma(dictionary, measure, reference) for dictionary in dictionaries]
    try:
        values.append(wasserstein1(measure, reference, domain))
    except MetricsException:
        values.append(math.nan)
    return values


def _dictionaries(
    config: ExperimentConfig, domain: WeightedDomain
) -> List[TestDictionary]:
    return [
        TestDictionary(
            domain,
            gamma,
            modes=config.dictionary.modes,
            harmonic_degree=config.dictionary.harmonic_degree,
        )
        for gamma in config.gammas
    ]


def _reference_task(config: ExperimentConfig) -> EquilibriumRef:
    domain, measure = _setup(config)
    return equilibrium_ref(
        domain,
        rng=random_stream(config.seed, STREAM_REFERENCE),
        p_ref=config.reference_degree,
        measure=measure,
        budget=_budget(config),
    )


def _fekete_task(
    config: ExperimentConfig, key: Tuple[int], reference: EquilibriumRef
) -> Dict[str, Any]:
    (index,) = key
    p = config.degrees[index]
    domain, measure = _setup(config)
    rng = random_stream(config.seed, STREAM_FEKETE, index)
    basis = basis_for(domain, p, config.model.realization)
    pool = _pool(config, basis, domain, measure, rng)
    result = fekete_search(basis, domain, pool, _budget(config), rng)
    summary = {
        **result.summary(),
        "sigma_hat": sigma(basis, domain, result.configuration, result.configuration),
        "sigma_initial": sigma(basis, domain, result.initial, result.configuration),
        "stream": [STREAM_FEKETE, index],
        "budget": dataclasses.asdict(_budget(config)),
    }
    points = result.configuration.points
    dictionaries = _dictionaries(config, domain)
    return {
        "p": p,
        "points": points,
        "summary": summary,
        "distances": _distances(config, domain, dictionaries, reference, points),
    }


def _chain_task(
    config: ExperimentConfig, key: Tuple[int, int, int], reference: EquilibriumRef
) -> Dict[str, Any]:
    degree_index, beta_index, chain = key
    p, beta = config.degrees[degree_index], config.betas[beta_index]
    domain, measure = _setup(config)
    rng = random_stream(config.seed, STREAM_CHAIN, *key)
    basis = basis_for(domain, p, config.model.realization)
    spec = EnsembleSpec(beta=beta, p=p, domain=domain, measure=measure, basis=basis)
    pool = _pool(config, basis, domain, measure, rng)
    result = run_chain(
        spec,
        greedy_configuration(basis, domain, pool),
        keep=config.sampler.keep,
        rng=rng,
        burn_in=config.sampler.burn_in,
        thin=config.sampler.thin,
    )
    dictionaries = _dictionaries(config, domain)
    return {
        "sampler": "mcmc",
        "p": p,
        "beta": beta,
        "chain": chain,
        "stream": [STREAM_CHAIN, *key],
        "samples": [sample.points for sample in result.samples],
        "logdet": result.logdet_trace.tolist(),
        "distances": [
            _distances(config, domain, dictionaries, reference, sample.points)
            for sample in result.samples
        ],
        "summary": result.summary(),
    }


def _dpp_task(
    config: ExperimentConfig, key: Tuple[int, int], reference: EquilibriumRef
) -> Dict[str, Any]:
    degree_index, chain = key
    p = config.degrees[degree_index]
    domain, measure = _setup(config)
    rng = random_stream(config.seed, STREAM_DPP, *key)
    basis = orthonormal_basis(
        domain, measure, p, config.model.realization, config.model.quadrature
    )
    spec = EnsembleSpec(beta=2.0, p=p, domain=domain, measure=measure, basis=basis)
    grid = default_grid(domain)
    samples = [dpp_sample(spec, rng, grid=grid) for _ in range(config.sampler.keep)]
    dictionaries = _dictionaries(config, domain)
    trace = [logdet(basis, domain, sample)[0] for sample in samples]
    return {
        "sampler": "dpp",
        "p": p,
        "beta": 2.0,
        "chain": chain,
        "stream": [STREAM_DPP, *key],
        "samples": [sample.points for sample in samples],
        "logdet": trace,
        "distances": [
            _distances(config, domain, dictionaries, reference, sample.points)
            for sample in samples
        ],
        "summary": {
            "kept": len(samples),
            "mean_logdet": float(np.mean(trace)) if trace else None,
        },
    }


def _unit(points: np.ndarray) -> np.ndarray:
    return np.ones(points.shape[0])


def _diag_task(config: ExperimentConfig, key: Tuple[int]) -> Dict[str, Any]:
    (index,) = key
    p = config.degrees[index]
    domain, measure = _setup(config)
    quadrature = config.model.quadrature
    rng = random_stream(config.seed, STREAM_DIAG, index)
    raw = basis_for(domain, p, config.model.realization)
    gram_mu = gram(raw, domain, measure, quadrature)
    basis = orthonormalize(raw, gram_mu)
    grid = evaluation_grid(domain, config.diagnostics.grid_resolution)

    n_p = basis.n_p
    mass = bergman_integral(basis, domain, measure, _unit, quadrature)
    row = {
        "p": p,
        "n_p": n_p,
        "bm_constant": bm_constant(basis, domain, grid),
        "sqrt_n_p": math.sqrt(n_p),
        "bergman_mass": n_p * mass,
        "lbb_estimate": math.nan,
        "lbb_stderr": math.nan,
        "lbb_target": float(math.factorial(n_p)),
    }
    if n_p <= LBB_MAX_POINTS:
        spec = EnsembleSpec(beta=2.0, p=p, domain=domain, measure=measure, basis=basis)
        estimate = lbb_check(spec, config.diagnostics.lbb_samples, rng)
        row.update(lbb_estimate=estimate.estimate, lbb_stderr=estimate.stderr)

    pool = _pool(config, raw, domain, measure, rng)
    fekete = fekete_search(raw, domain, pool, _budget(config), rng)
    ratios = section_norm_ratios(
        basis,
        domain,
        measure,
        grid,
        rng,
        config.diagnostics.norm_ratio_sections,
        quadrature,
    )
    row.update(
        tau=tau2(raw, domain, gram_mu, fekete.configuration),
        tau_bound=n_p**1.5,
        l4_over_l2_median=float(np.median(ratios.l4_over_l2)),
        sup_over_l2_max=float(np.max(ratios.sup_over_l2)),
        gram_condition=gram_mu.condition,
    )
    return row


DIAG_COLUMNS = (
    "p",
    "n_p",
    "bm_constant",
    "sqrt_n_p",
    "bergman_mass",
    "lbb_estimate",
    "lbb_stderr",
    "lbb_target",
    "tau",
    "tau_bound",
    "l4_over_l2_median",
    "sup_over_l2_max",
    "gram_condition",
)


class Harness:
    """
    Orchestrates the experiment commands for one configuration. Tasks run
    inline in task order with a single worker and in a process pool otherwise;
    results are merged in task order either way, so artifacts do not depend on
    the number of workers.

    .. code-block:: python

        harness = Harness(
            config=load_config("circle.ini"),
            callbacks={HarnessEventType.ARTIFACT_WRITTEN: print},
        )
        record = await harness.fekete()

    :param config: Experiment configuration.
    :param callbacks: A :class:`CallbackRegistry` or a mapping of
        :class:`HarnessEventType` to callbacks, dispatched with a
        :class:`HarnessEvent`.
    """

    def __init__(
        self, config: ExperimentConfig, callbacks: Optional[CallbacksType] = None
    ):
        self.config = config
        self.digest = config_hash(config)
        if callbacks is None:
            callbacks = CallbackRegistry()
        elif isinstance(callbacks, dict):
            callbacks = CallbackRegistry(callbacks=callbacks)
        self.callbacks = callbacks

    @property
    def output(self) -> Path:
        return Path(self.config.output)

    def _emit(self, event_type: HarnessEventType, command: str, **kwargs: Any) -> None:
        self.callbacks.dispatch(
            event_type, HarnessEvent(type=event_type, command=command, **kwargs)
        )

    async def _gather(
        self,
        command: str,
        function: Callable,
        keys: Sequence[Tuple[int, ...]],
        *args: Any,
    ) -> List[Any]:
        async def run(key: Tuple[int, ...]) -> Any:
            started = time.perf_counter()
            if pool is None:
                result = function(self.config, key, *args)
            else:
                result = await loop.run_in_executor(
                    pool, function, self.config, key, *args
                )
            elapsed = time.perf_counter() - started
            logger.info("%s task %s done in %.2fs", command, key, elapsed)
            self._emit(HarnessEventType.TASK_DONE, command, task=tuple(key))
            return result

        loop = asyncio.get_running_loop()
        if self.config.workers <= 1:
            pool = None
            return [await run(key) for key in keys]
        with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
            return list(await asyncio.gather(*(run(key) for key in keys)))

    def _json(self, command: str, path: Path, payload: Dict[str, Any]) -> Path:
        write_json(path, payload, self.digest)
        self._emit(HarnessEventType.ARTIFACT_WRITTEN, command, path=path)
        return path

    def _csv(self, command: str, path: Path, columns: Sequence[str], rows: Any) -> Path:
        write_csv(path, columns, rows, self.digest)
        self._emit(HarnessEventType.ARTIFACT_WRITTEN, command, path=path)
        return path

    def _finish(self, record: RunRecord, path: Path) -> RunRecord:
        record.write(path)
        self._emit(HarnessEventType.ARTIFACT_WRITTEN, record.command, path=path)
        self._emit(HarnessEventType.COMMAND_DONE, record.command, record=record)
        return record

    def _coordinate_columns(self) -> List[str]:
        return [f"x{i}" for i in range(self.config.model.ambient.coordinate_dim)]

    async def reference(self, command: str) -> EquilibriumRef:
        """Equilibrium reference, written once per output directory."""
        loop = asyncio.get_running_loop()
        if self.config.workers <= 1:
            reference = _reference_task(self.config)
        else:
            with ProcessPoolExecutor(max_workers=1) as pool:
                reference = await loop.run_in_executor(
                    pool, _reference_task, self.config
                )
        self._json(command, self.output / "equilibrium.json", reference.summary())
        if reference.kind == RefKind.FEKETE_HISTOGRAM:
            self._csv(
                command,
                self.output / "equilibrium_points.csv",
                self._coordinate_columns(),
                reference.points,
            )
        return reference

    async def fekete(self) -> RunRecord:
        """
        Near-Fekete configuration for every degree, with :math:`\\hat\\sigma` of the
        greedy start and distances of the empirical measure to equilibrium.
        """
        command = "fekete"
        config = self.config
        reference = await self.reference(command)
        keys = [(index,) for index in range(len(config.degrees))]
        results = await self._gather(command, _fekete_task, keys, reference)

        directory = self.output / "fekete"
        columns = distance_columns(config)
        coordinates = self._coordinate_columns()
        table = []
        for result in results:
            p, summary = result["p"], result["summary"]
            stem = directory / f"fekete_p{p}"
            self._csv(command, stem.with_suffix(".csv"), coordinates, result["points"])
            self._json(
                command, stem.with_suffix(".json"), {**summary, "seed": config.seed}
            )
            table.append(
                [
                    p,
                    summary["n_p"],
                    summary["logdet"],
                    summary["sigma_hat"],
                    *result["distances"],
                ]
            )
        self._csv(
            command,
            directory / "distances.csv",
            ["p", "n_p", "logdet", "sigma_hat", *columns],
            table,
        )
        record = RunRecord(
            command=command,
            config_hash=self.digest,
            seed=config.seed,
            entries=tuple(
                {**result["summary"], **dict(zip(columns, result["distances"]))}
                for result in results
            ),
            summary={"reference": reference.kind.value},
        )
        return self._finish(record, directory / "record.json")

    async def sample(self) -> RunRecord:
        """
        Metropolis chains for every degree and inverse temperature, and exact
        projection samples for :math:`\\beta = 2`. Writes one configuration archive and
        one distance table per chain, and a manifest.
        """
        command = "sample"
        config = self.config
        chains = range(config.sampler.chains)
        reference = await self.reference(command)
        chain_keys = [
            (d, b, c)
            for d in range(len(config.degrees))
            for b in range(len(config.betas))
            for c in chains
        ]
        results = await self._gather(command, _chain_task, chain_keys, reference)
        if config.sampler.dpp and 2.0 in config.betas:
            dpp_keys = [(d, c) for d in range(len(config.degrees)) for c in chains]
            results += await self._gather(command, _dpp_task, dpp_keys, reference)

        directory = self.output / "samples"
        columns = distance_columns(config)
        entries = []
        for result in results:
            stem = "{sampler}_p{p}_b{beta:g}_c{chain}".format(**result)
            entry = {
                "sampler": result["sampler"],
                "p": result["p"],
                "beta": result["beta"],
                "chain": result["chain"],
                "stream": result["stream"],
                "seed": config.seed,
                "burn_in_default": config.sampler.burn_in is None,
                "thin_default": config.sampler.thin is None,
                **result["summary"],
            }
            if result["samples"]:
                rows = [
                    [k, i, *point]
                    for k, points in enumerate(result["samples"])
                    for i, point in enumerate(points)
                ]
                archive = self._csv(
                    command,
                    directory / f"{stem}.csv",
                    ["sample", "slot", *self._coordinate_columns()],
                    rows,
                )
                traces = zip(result["logdet"], result["distances"])
                table = self._csv(
                    command,
                    directory / f"{stem}_distances.csv",
                    ["sample", "logdet", *columns],
                    [[k, trace, *values] for k, (trace, values) in enumerate(traces)],
                )
                entry.update(
                    archive=archive.relative_to(self.output).as_posix(),
                    distances=table.relative_to(self.output).as_posix(),
                )
            entries.append(entry)

        self._json(
            command,
            directory / "manifest.json",
            {
                "seed": config.seed,
                "chain_lengths": "empirical defaults, no mixing time guarantee",
                "entries": entries,
            },
        )
        record = RunRecord(
            command=command,
            config_hash=self.digest,
            seed=config.seed,
            entries=tuple(entries),
        )
        return self._finish(record, directory / "record.json")

    def _read_samples(self) -> Dict[Tuple[str, float], Dict[int, List[np.ndarray]]]:
        manifest_path = self.output / "samples" / "manifest.json"
        manifest = read_json(manifest_path)
        require_single_hash(
            [(manifest_path, manifest.get("config_hash"))], expected=self.digest
        )
        grouped: Dict[Tuple[str, float], Dict[int, List[np.ndarray]]] = defaultdict(
            lambda: defaultdict(list)
        )
        hashes = []
        for entry in manifest["entries"]:
            if "distances" not in entry:
                continue
            path = self.output / entry["distances"]
            hashes.append((path, csv_hash(path)))
            _, _, data = read_csv(path)
            grouped[(entry["sampler"], entry["beta"])][entry["p"]].append(data)
        require_single_hash(hashes, expected=self.digest)
        if not grouped:
            raise MissingInputException(
                f"No sample distances listed in {manifest_path}"
            )
        return grouped

    async def ldp(self) -> RunRecord:
        """
        Fit distance decay and exceedance tails from the sample archives.

        :raises: :class:`MissingInputException` for absent archives or archives
            of another configuration.
        """
        command = "ldp"
        config = self.config
        model = config.model
        grouped = self._read_samples()

        columns = distance_columns(config)
        if config.ldp.distance == "wasserstein":
            selections = [(1.0, "w1")]
        else:
            selections = [(gamma, f"dist_gamma_{gamma:g}") for gamma in config.gammas]
        smooth = model.domain().smooth_boundary
        alpha = holder_exponent(model.phi_hoelder_alpha, smooth)

        directory = self.output / "ldp"
        entries = []
        for (sampler, beta), per_degree in sorted(grouped.items()):
            missing = sorted(set(config.degrees) - set(per_degree))
            if missing:
                raise MissingInputException(
                    f"Missing {sampler} archives for degrees {missing} "
                    f"at beta {beta:g}"
                )
            for gamma, column in selections:
                position = 2 + columns.index(column)
                records = [
                    (p, np.concatenate([data[:, position] for data in tables]))
                    for p, tables in sorted(per_degree.items())
                ]
                fit = ldp_fit(
                    records,
                    gamma=gamma,
                    delta=config.ldp.delta,
                    min_samples=config.ldp.min_samples,
                )
                stem = f"ldp_{sampler}_b{beta:g}_{column}"
                self._csv(
                    command,
                    directory / f"{stem}.csv",
                    TAIL_COLUMNS,
                    [point.row() for point in fit.tail_curve],
                )
                summary = {
                    **fit.summary(),
                    "sampler": sampler,
                    "beta": beta,
                    "distance": column,
                    "holder_exponent": alpha,
                    "predicted_exponent": predicted_exponent(
                        gamma, config.ldp.delta, model.phi_hoelder_alpha, smooth
                    ),
                    "dictionary": {
                        **dataclasses.asdict(config.dictionary),
                        "gamma": gamma,
                    },
                }
                self._json(command, directory / f"{stem}.json", summary)
                entries.append(summary)

        record = RunRecord(
            command=command,
            config_hash=self.digest,
            seed=config.seed,
            entries=tuple(entries),
        )
        return self._finish(record, directory / "record.json")

    async def diag(self) -> RunRecord:
        """
        Bernstein-Markov constants and their fit, Bergman masses, the
        :math:`N_p!` mass check, :math:`\\tau` of Fekete configurations and norm
        ratios of random sections for every degree.
        """
        command = "diag"
        config = self.config
        delta = config.diagnostics.bm_delta
        keys = [(index,) for index in range(len(config.degrees))]
        rows = await self._gather(command, _diag_task, keys)

        directory = self.output / "diag"
        self._csv(
            command,
            directory / "diagnostics.csv",
            DIAG_COLUMNS,
            [[row[column] for column in DIAG_COLUMNS] for row in rows],
        )
        fit = bm_fit([(row["p"], row["bm_constant"]) for row in rows], delta)
        summary = {"bm_fit": dataclasses.asdict(fit), "bm_delta": delta}
        measure = config.model.base_measure()
        if measure.mass_density_params is not None:
            report = verify_mass_density(
                measure, random_stream(config.seed, STREAM_DIAG, len(config.degrees))
            )
            summary["mass_density"] = dataclasses.asdict(report)
        self._json(command, directory / "diagnostics.json", summary)
        record = RunRecord(
            command=command,
            config_hash=self.digest,
            seed=config.seed,
            entries=tuple(rows),
            summary=summary,
        )
        return self._finish(record, directory / "record.json")


async def cmd_fekete(
    config: ExperimentConfig, callbacks: Optional[CallbacksType] = None
) -> RunRecord:
    return await Harness(config, callbacks).fekete()


async def cmd_sample(
    config: ExperimentConfig, callbacks: Optional[CallbacksType] = None
) -> RunRecord:
    return await Harness(config, callbacks).sample()


async def cmd_ldp(
    config: ExperimentConfig, callbacks: Optional[CallbacksType] = None
) -> RunRecord:
    return await Harness(config, callbacks).ldp()


async def cmd_diag(
    config: ExperimentConfig, callbacks: Optional[CallbacksType] = None
) -> RunRecord:
    return await Harness(config, callbacks).diag()
