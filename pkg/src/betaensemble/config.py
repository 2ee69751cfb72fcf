from __future__ import annotations

import configparser
import dataclasses
import math
import re
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np

from betaensemble.basis import Realization
from betaensemble.domain import (
    AmbientModel,
    BaseMeasure,
    Box,
    Cap,
    Density,
    Weight,
    WeightedDomain,
    evaluation_grid,
)
from betaensemble.exceptions import BetaEnsembleException, ConfigException
from betaensemble.quadrature import QuadratureKind, QuadratureSpec

SECTIONS = (
    "model",
    "experiment",
    "sampler",
    "fekete",
    "dictionary",
    "ldp",
    "diagnostics",
)

_KEY_PATTERN = re.compile(r"^\s*([^\s=:#;\[][^=:]*?)\s*[=:]")
_SECTION_PATTERN = re.compile(r"^\s*\[([^\]]+)\]")


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """
    ``[model]`` section: the weighted compact set and its base measure.

    :param ambient: ``euclidean n`` or ``sphere n``.
    :param region: ``full`` or ``cap <angle>`` on spheres; ``box a1 b1 [a2 b2 ...]``
        on euclidean models.
    :param phi: Weight specification, see :class:`~betaensemble.domain.Weight`.
    :param phi_hoelder_alpha: Declared Hölder regularity of ``phi``.
    :param measure: Density specification, see :class:`~betaensemble.domain.Density`.
    :param mass_density: Optional constants ``c rho`` of the mass-density condition.
    :param realization: Raw basis realization.
    :param quadrature: ``exact`` or ``monte_carlo <samples>``.
    """

    ambient: AmbientModel
    region: Union[Box, Cap]
    phi: Weight = dataclasses.field(default_factory=Weight)
    phi_hoelder_alpha: float = 2.0
    measure: Density = dataclasses.field(default_factory=Density)
    mass_density: Optional[Tuple[float, float]] = None
    realization: Realization = Realization.ORTHOGONAL
    quadrature: QuadratureSpec = dataclasses.field(default_factory=QuadratureSpec)

    def domain(self) -> WeightedDomain:
        return WeightedDomain(
            model=self.ambient,
            region=self.region,
            phi=self.phi,
            phi_hoelder_alpha=self.phi_hoelder_alpha,
        )

    def base_measure(self) -> BaseMeasure:
        return BaseMeasure(
            domain=self.domain(),
            density=self.measure,
            mass_density_params=self.mass_density,
            name=str(self.measure),
        )


@dataclasses.dataclass(frozen=True)
class SamplerConfig:
    """
    ``[sampler]`` section. ``burn_in`` and ``thin`` default to :math:`50 N_p^2` and
    :math:`N_p` when omitted.
    """

    chains: int = 4
    keep: int = 100
    burn_in: Optional[int] = None
    thin: Optional[int] = None
    dpp: bool = True


@dataclasses.dataclass(frozen=True)
class FeketeConfig:
    pool_resolution: Optional[int] = None
    max_sweeps: int = 500
    local_samples: int = 16
    min_radius: float = 1e-9
    tolerance: float = 1e-10


@dataclasses.dataclass(frozen=True)
class DictionaryConfig:
    modes: int = 32
    harmonic_degree: int = 8


@dataclasses.dataclass(frozen=True)
class LdpConfig:
    """
    ``[ldp]`` section.

    :param delta: Exponent :math:`\\delta` of the threshold scale
        :math:`q = p^{-\\delta/4}`.
    :param distance: ``dist_gamma`` or ``wasserstein``.
    :param min_samples: Fewest samples accepted per degree.
    """

    delta: float = 0.5
    distance: str = "dist_gamma"
    min_samples: int = 50


@dataclasses.dataclass(frozen=True)
class DiagnosticsConfig:
    lbb_samples: int = 100_000
    bm_delta: float = 0.5
    grid_resolution: int = 256
    norm_ratio_sections: int = 200


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """
    Complete experiment: model, degrees, inverse temperatures, Hölder exponents
    and the parameters of every command.

    :param degrees: Degrees ``p``, sorted and distinct.
    :param betas: Inverse temperatures :math:`\\beta`.
    :param gammas: Hölder exponents :math:`\\gamma` of the distances.
    :param seed: Experiment seed; there is no entropy default.
    :param output: Output directory.
    :param workers: Worker processes; one runs every task inline.
    :param p_ref: Degree of Fekete equilibrium references, twice the largest
        degree by default.
    """

    model: ModelConfig
    degrees: Tuple[int, ...]
    betas: Tuple[float, ...]
    gammas: Tuple[float, ...]
    seed: int
    output: Path = Path("out")
    workers: int = 1
    p_ref: Optional[int] = None
    sampler: SamplerConfig = dataclasses.field(default_factory=SamplerConfig)
    fekete: FeketeConfig = dataclasses.field(default_factory=FeketeConfig)
    dictionary: DictionaryConfig = dataclasses.field(default_factory=DictionaryConfig)
    ldp: LdpConfig = dataclasses.field(default_factory=LdpConfig)
    diagnostics: DiagnosticsConfig = dataclasses.field(
        default_factory=DiagnosticsConfig
    )

    @property
    def reference_degree(self) -> int:
        return self.p_ref if self.p_ref is not None else 2 * max(self.degrees)

    def canonical(self) -> Dict[str, Any]:
        """
        Normalized description of everything that determines the artifacts.
        ``output`` and ``workers`` do not change results and are left out.
        """
        model = self.model
        return {
            "model": {
                "ambient": str(model.ambient),
                "region": _describe_region(model.region),
                "phi": str(model.phi),
                "phi_hoelder_alpha": model.phi_hoelder_alpha,
                "measure": str(model.measure),
                "mass_density": (
                    list(model.mass_density) if model.mass_density else None
                ),
                "realization": model.realization.value,
                "quadrature": model.quadrature.describe(),
            },
            "experiment": {
                "degrees": list(self.degrees),
                "betas": list(self.betas),
                "gammas": list(self.gammas),
                "seed": self.seed,
                "p_ref": self.reference_degree,
            },
            "sampler": dataclasses.asdict(self.sampler),
            "fekete": dataclasses.asdict(self.fekete),
            "dictionary": dataclasses.asdict(self.dictionary),
            "ldp": dataclasses.asdict(self.ldp),
            "diagnostics": dataclasses.asdict(self.diagnostics),
        }


def _describe_region(region: Union[Box, Cap]) -> str:
    if isinstance(region, Cap):
        return "full" if region.full else f"cap {region.angle!r}"
    bounds = (repr(v) for pair in zip(region.lower, region.upper) for v in pair)
    return "box " + " ".join(bounds)


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    index: Dict[Tuple[str, str], int] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        header = _SECTION_PATTERN.match(line)
        if header:
            section = header.group(1).strip().lower()
            index[(section, "")] = number
            continue
        key = _KEY_PATTERN.match(line)
        if key and section is not None:
            index[(section, key.group(1).strip().lower())] = number
    return index


class _Reader:
    """Typed access to a parsed file that reports failures with their line."""

    def __init__(
        self, parser: configparser.ConfigParser, text: str, path: Optional[Path]
    ):
        self.parser = parser
        self.lines = _line_index(text)
        self.path = path

    def error(self, section: str, key: str, message: str) -> ConfigException:
        line = self.lines.get((section, key), self.lines.get((section, "")))
        return ConfigException(
            f"[{section}] {key}: {message}", line=line, path=self.path
        )

    def get(
        self,
        section: str,
        key: str,
        convert: Callable[[str], Any],
        default: Any = None,
        required: bool = False,
    ) -> Any:
        if not self.parser.has_option(section, key):
            if required:
                raise self.error(section, key, "missing required key")
            return default
        raw = self.parser.get(section, key).strip()
        try:
            return convert(raw)
        except (ValueError, BetaEnsembleException) as e:
            raise self.error(section, key, str(e) or f"invalid value {raw!r}") from None


def _positive_int(raw: str) -> int:
    value = int(raw)
    if value < 1:
        raise ValueError(f"expected a positive integer, got {raw!r}")
    return value


def _nonnegative_int(raw: str) -> int:
    value = int(raw)
    if value < 0:
        raise ValueError(f"expected a nonnegative integer, got {raw!r}")
    return value


def _positive_float(raw: str) -> float:
    value = float(raw)
    if not value > 0.0 or not math.isfinite(value):
        raise ValueError(f"expected a positive number, got {raw!r}")
    return value


def _optional(convert: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(raw: str) -> Any:
        return None if raw.lower() in ("auto", "none", "") else convert(raw)

    return parse


def _list(convert: Callable[[str], Any]) -> Callable[[str], Tuple[Any, ...]]:
    def parse(raw: str) -> Tuple[Any, ...]:
        values = tuple(convert(token) for token in re.split(r"[,\s]+", raw) if token)
        if not values:
            raise ValueError("expected a nonempty list")
        return values

    return parse


def _boolean(raw: str) -> bool:
    states = configparser.ConfigParser.BOOLEAN_STATES
    if raw.lower() not in states:
        raise ValueError(f"expected a boolean, got {raw!r}")
    return states[raw.lower()]


def _ambient(raw: str) -> AmbientModel:
    tokens = raw.split()
    if len(tokens) != 2:
        raise ValueError(f"expected 'euclidean n' or 'sphere n', got {raw!r}")
    return AmbientModel(kind=tokens[0].lower(), n=int(tokens[1]))


def _region(ambient: AmbientModel) -> Callable[[str], Union[Box, Cap]]:
    def parse(raw: str) -> Union[Box, Cap]:
        tokens = raw.split()
        if ambient.is_sphere:
            if tokens == ["full"]:
                return Cap()
            if len(tokens) == 2 and tokens[0] == "cap":
                return Cap(angle=float(tokens[1]))
            raise ValueError(f"expected 'full' or 'cap <angle>', got {raw!r}")
        values = [float(token) for token in tokens[1:]]
        if tokens[:1] != ["box"] or len(values) != 2 * ambient.n:
            raise ValueError(
                f"expected 'box' followed by {ambient.n} bound pair(s), got {raw!r}"
            )
        return Box(lower=tuple(values[0::2]), upper=tuple(values[1::2]))

    return parse


def _mass_density(raw: str) -> Tuple[float, float]:
    values = tuple(_positive_float(token) for token in raw.split())
    if len(values) != 2:
        raise ValueError(f"expected 'c rho', got {raw!r}")
    return values


def _quadrature(raw: str) -> QuadratureSpec:
    tokens = raw.split()
    if tokens == ["exact"]:
        return QuadratureSpec()
    if len(tokens) == 2 and tokens[0] == QuadratureKind.MONTE_CARLO.value:
        return QuadratureSpec.monte_carlo(samples=_positive_int(tokens[1]))
    raise ValueError(f"expected 'exact' or 'monte_carlo <samples>', got {raw!r}")


def _distance(raw: str) -> str:
    if raw not in ("dist_gamma", "wasserstein"):
        raise ValueError(f"expected 'dist_gamma' or 'wasserstein', got {raw!r}")
    return raw


def _unit_interval(raw: str) -> float:
    value = float(raw)
    if not 0.0 < value < 1.0:
        raise ValueError(f"expected a number in (0, 1), got {raw!r}")
    return value


def _hoelder_alpha(raw: str) -> float:
    value = float(raw)
    if not 0.0 < value <= 2.0:
        raise ValueError(f"expected a Hoelder exponent in (0, 2], got {raw!r}")
    return value


def _gamma(raw: str) -> float:
    value = float(raw)
    if not 0.0 < value <= 2.0:
        raise ValueError(f"expected gamma in (0, 2], got {raw!r}")
    return value


def parse_config(
    text: str,
    path: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
    output: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
) -> ExperimentConfig:
    """
    Parse an experiment file. ``seed``, ``output`` and ``workers`` override the
    file values.

    :raises: :class:`ConfigException` naming the offending key and line.
    """
    if workers is not None and workers < 1:
        raise ConfigException(f"workers must be at least 1, got {workers}", path=path)
    path = Path(path) if path is not None else None
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), interpolation=None
    )
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.Error as e:
        raise ConfigException(
            str(e).splitlines()[0], line=getattr(e, "lineno", None), path=path
        ) from None
    reader = _Reader(parser, text, path)

    unknown = [s for s in parser.sections() if s.lower() not in SECTIONS]
    if unknown:
        raise reader.error(
            unknown[0], "", f"unknown section, expected one of {SECTIONS}"
        )
    for section in ("model", "experiment"):
        if not parser.has_section(section):
            raise ConfigException(f"missing required section [{section}]", path=path)

    ambient = reader.get("model", "ambient", _ambient, required=True)
    model = ModelConfig(
        ambient=ambient,
        region=reader.get("model", "region", _region(ambient), required=True),
        phi=reader.get("model", "phi", Weight.parse, Weight()),
        phi_hoelder_alpha=reader.get(
            "model", "phi_hoelder_alpha", _hoelder_alpha, 2.0
        ),
        measure=reader.get("model", "measure", Density.parse, Density()),
        mass_density=reader.get("model", "mass_density", _mass_density),
        realization=reader.get(
            "model", "realization", Realization, Realization.ORTHOGONAL
        ),
        quadrature=reader.get("model", "quadrature", _quadrature, QuadratureSpec()),
    )
    try:
        domain = model.domain()
    except BetaEnsembleException as e:
        raise reader.error("model", "region", str(e)) from None
    try:
        if not np.all(np.isfinite(domain.phi(evaluation_grid(domain, 8)))):
            raise ConfigException("weight is not finite on K")
    except BetaEnsembleException as e:
        raise reader.error("model", "phi", str(e)) from None
    try:
        model.base_measure()
    except BetaEnsembleException as e:
        raise reader.error("model", "measure", str(e)) from None

    file_seed = reader.get("experiment", "seed", int, required=seed is None)
    degrees = reader.get("experiment", "degrees", _list(_positive_int), required=True)
    file_workers = reader.get("experiment", "workers", _positive_int, 1)
    config = ExperimentConfig(
        model=model,
        degrees=tuple(sorted(set(degrees))),
        betas=reader.get("experiment", "betas", _list(_positive_float), required=True),
        gammas=reader.get("experiment", "gammas", _list(_gamma), (1.0,)),
        seed=seed if seed is not None else file_seed,
        output=Path(output or reader.get("experiment", "output", str, "out")),
        workers=file_workers if workers is None else workers,
        p_ref=reader.get("experiment", "p_ref", _optional(_positive_int)),
        sampler=SamplerConfig(
            chains=reader.get("sampler", "chains", _positive_int, 4),
            keep=reader.get("sampler", "keep", _nonnegative_int, 100),
            burn_in=reader.get("sampler", "burn_in", _optional(_nonnegative_int)),
            thin=reader.get("sampler", "thin", _optional(_positive_int)),
            dpp=reader.get("sampler", "dpp", _boolean, True),
        ),
        fekete=FeketeConfig(
            pool_resolution=reader.get(
                "fekete", "pool_resolution", _optional(_positive_int)
            ),
            max_sweeps=reader.get("fekete", "max_sweeps", _positive_int, 500),
            local_samples=reader.get("fekete", "local_samples", _positive_int, 16),
            min_radius=reader.get("fekete", "min_radius", _positive_float, 1e-9),
            tolerance=reader.get("fekete", "tolerance", _positive_float, 1e-10),
        ),
        dictionary=DictionaryConfig(
            modes=reader.get("dictionary", "modes", _positive_int, 32),
            harmonic_degree=reader.get(
                "dictionary", "harmonic_degree", _positive_int, 8
            ),
        ),
        ldp=LdpConfig(
            delta=reader.get("ldp", "delta", _unit_interval, 0.5),
            distance=reader.get("ldp", "distance", _distance, "dist_gamma"),
            min_samples=reader.get("ldp", "min_samples", _positive_int, 50),
        ),
        diagnostics=DiagnosticsConfig(
            lbb_samples=reader.get(
                "diagnostics", "lbb_samples", _positive_int, 100_000
            ),
            bm_delta=reader.get("diagnostics", "bm_delta", _unit_interval, 0.5),
            grid_resolution=reader.get(
                "diagnostics", "grid_resolution", _positive_int, 256
            ),
            norm_ratio_sections=reader.get(
                "diagnostics", "norm_ratio_sections", _positive_int, 200
            ),
        ),
    )
    if config.reference_degree < 2 * max(config.degrees):
        raise reader.error(
            "experiment",
            "p_ref",
            f"must be at least twice the largest degree {max(config.degrees)}",
        )
    return config


def load_config(
    path: Union[str, Path],
    seed: Optional[int] = None,
    output: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigException(
            f"cannot read configuration: {e.strerror}", path=path
        ) from None
    return parse_config(text, path=path, seed=seed, output=output, workers=workers)
