import textwrap

import pytest

from betaensemble.cli import (
    EXIT_CONFIG,
    EXIT_MISSING_INPUT,
    EXIT_NUMERICAL,
    EXIT_OK,
    main,
)
from betaensemble.config import parse_config
from betaensemble.records import config_hash


@pytest.fixture
def config_path(tmp_path, circle_config_text):
    path = tmp_path / "circle.ini"
    path.write_text(circle_config_text)
    return path


def test_validate_config(config_path, circle_config_text, capsys):
    assert main(["validate-config", "--config", str(config_path)]) == EXIT_OK
    digest = config_hash(parse_config(circle_config_text))
    assert capsys.readouterr().out.strip() == f"{config_path}: ok, config_hash={digest}"


def test_seed_override(config_path, circle_config_text, capsys):
    assert main(["validate-config", "--config", str(config_path), "--seed", "8"]) == 0
    digest = config_hash(parse_config(circle_config_text, seed=8))
    assert digest in capsys.readouterr().out


def test_invalid_seed(config_path):
    with pytest.raises(SystemExit):
        main(["validate-config", "--config", str(config_path), "--seed", "-1"])


@pytest.mark.parametrize("workers", ["0", "-2"])
def test_invalid_workers(config_path, workers):
    with pytest.raises(SystemExit) as e:
        main(["validate-config", "--config", str(config_path), "--workers", workers])
    assert e.value.code == EXIT_CONFIG


def test_bad_config(tmp_path, circle_config_text, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(circle_config_text.replace("betas = 2", "betas = -2"))
    assert main(["validate-config", "--config", str(path)]) == EXIT_CONFIG
    assert f"{path}:9:" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert main(["fekete", "--config", str(tmp_path / "none.ini")]) == EXIT_CONFIG


def test_ldp_without_samples(config_path, tmp_path, capsys):
    code = main(["ldp", "--config", str(config_path), "--out", str(tmp_path / "out")])
    assert code == EXIT_MISSING_INPUT
    assert "missing input" in capsys.readouterr().err


def test_fekete(config_path, tmp_path, capsys):
    output = tmp_path / "out"
    assert main(["fekete", "--config", str(config_path), "--out", str(output)]) == 0
    assert capsys.readouterr().out.strip() == f"fekete: 2 entries written to {output}"
    assert (output / "fekete" / "record.json").is_file()


def test_numerical_failure(tmp_path, capsys):
    path = tmp_path / "monomial.ini"
    path.write_text(
        textwrap.dedent(
            """\
            [model]
            ambient = euclidean 1
            region = box 0 1
            phi = zero
            measure = uniform
            realization = monomial

            [experiment]
            degrees = 30
            betas = 2
            seed = 1
            """
        )
    )
    code = main(["diag", "--config", str(path), "--out", str(tmp_path / "out")])
    assert code == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err
