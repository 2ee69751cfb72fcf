import textwrap

import numpy as np
import pytest

from betaensemble.config import parse_config
from betaensemble.domain import BaseMeasure, WeightedDomain
from betaensemble.helpers import random_stream


@pytest.fixture
def rng() -> np.random.Generator:
    return random_stream(20240601)


@pytest.fixture
def interval() -> WeightedDomain:
    return WeightedDomain.interval()


@pytest.fixture
def circle() -> WeightedDomain:
    return WeightedDomain.sphere(1)


@pytest.fixture
def sphere() -> WeightedDomain:
    return WeightedDomain.sphere(2)


@pytest.fixture
def haar(circle) -> BaseMeasure:
    return BaseMeasure.uniform(circle)


@pytest.fixture
def circle_config_text() -> str:
    return textwrap.dedent(
        """\
        [model]
        ambient = sphere 1
        region = full
        phi = zero
        measure = uniform

        [experiment]
        degrees = 1, 2
        betas = 2
        gammas = 1, 2
        seed = 7

        [sampler]
        chains = 1
        keep = 4
        burn_in = 50
        thin = 5
        dpp = true

        [fekete]
        max_sweeps = 200

        [diagnostics]
        lbb_samples = 20000
        grid_resolution = 128
        norm_ratio_sections = 20
        """
    )


@pytest.fixture
def circle_config(tmp_path, circle_config_text):
    return parse_config(circle_config_text, output=tmp_path / "out")
