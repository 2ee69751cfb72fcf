import math

import numpy as np
import pytest
from cafeteria.asyncio.callbacks import CallbackRegistry

from betaensemble.config import parse_config
from betaensemble.exceptions import MissingInputException
from betaensemble.harness import (
    DIAG_COLUMNS,
    Harness,
    HarnessEventType,
    cmd_diag,
    cmd_fekete,
    cmd_ldp,
    cmd_sample,
)
from betaensemble.records import read_csv, read_json, write_csv

pytestmark = pytest.mark.asyncio


def _files(root):
    return {
        path.relative_to(root).as_posix(): path.read_bytes()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }


def _ldp_text(text: str) -> str:
    return (
        text.replace("degrees = 1, 2", "degrees = 1, 2, 3, 4")
        .replace("keep = 4", "keep = 50")
        .replace("dpp = true", "dpp = false")
        .replace("gammas = 1, 2", "gammas = 1")
    )


async def test_harness_init_default_callbacks(circle_config):
    harness = Harness(circle_config)
    assert isinstance(harness.callbacks, CallbackRegistry)
    assert not harness.callbacks.callbacks()
    assert harness.output == circle_config.output


async def test_harness_init_with_callback_dict(circle_config, mocker):
    harness = Harness(
        circle_config,
        callbacks={
            HarnessEventType.ARTIFACT_WRITTEN: mocker.Mock(),
            HarnessEventType.TASK_DONE: [mocker.Mock(), mocker.Mock()],
        },
    )
    registry = harness.callbacks
    assert len(registry.callbacks(HarnessEventType.ARTIFACT_WRITTEN)) == 1
    assert len(registry.callbacks(HarnessEventType.TASK_DONE)) == 2


async def test_fekete(circle_config, mocker):
    written = mocker.Mock()
    done = mocker.Mock()
    record = await cmd_fekete(
        circle_config,
        callbacks={
            HarnessEventType.ARTIFACT_WRITTEN: written,
            HarnessEventType.COMMAND_DONE: done,
        },
    )
    output = circle_config.output
    assert record.command == "fekete"
    assert [entry["p"] for entry in record.entries] == [1, 2]
    assert record.entries[1]["n_p"] == 5
    assert record.summary["reference"] == "closed_form"
    assert (output / "equilibrium.json").is_file()

    _, columns, points = read_csv(output / "fekete" / "fekete_p2.csv")
    assert columns == ["x0", "x1"]
    assert points.shape == (5, 2)
    assert np.allclose(np.linalg.norm(points, axis=1), 1.0)
    assert read_json(output / "fekete" / "fekete_p2.json")["seed"] == 7

    digest, columns, table = read_csv(output / "fekete" / "distances.csv")
    assert digest == record.config_hash
    assert columns == [
        "p",
        "n_p",
        "logdet",
        "sigma_hat",
        "dist_gamma_1",
        "dist_gamma_2",
        "w1",
    ]
    assert table[:, 3] == pytest.approx([0.0, 0.0])
    # equispaced points, pi / (2 N) from the Haar measure
    assert table[1, 6] == pytest.approx(math.pi / 10.0, abs=1e-3)

    paths = {call.args[0].path for call in written.call_args_list}
    assert output / "fekete" / "record.json" in paths
    assert output / "fekete" / "distances.csv" in paths
    done.assert_called_once()
    assert done.call_args.args[0].record is record


async def test_fekete_byte_identical(tmp_path, circle_config_text):
    for name in ("first", "second"):
        await cmd_fekete(parse_config(circle_config_text, output=tmp_path / name))
    first, second = _files(tmp_path / "first"), _files(tmp_path / "second")
    assert first.keys() == second.keys()
    assert first == second


async def test_fekete_distance_decreases(tmp_path, circle_config_text):
    text = circle_config_text.replace("degrees = 1, 2", "degrees = 4, 8, 16")
    record = await cmd_fekete(parse_config(text, output=tmp_path))
    distances = [entry["dist_gamma_1"] for entry in record.entries]
    assert [entry["p"] for entry in record.entries] == [4, 8, 16]
    assert distances[0] > distances[1] > distances[2]


@pytest.mark.parametrize(
    "commands",
    [(cmd_sample,), (cmd_sample, cmd_ldp), (cmd_diag,)],
    ids=["sample", "ldp", "diag"],
)
async def test_byte_identical_reruns(tmp_path, circle_config_text, commands):
    text = _ldp_text(circle_config_text)
    for name in ("first", "second"):
        config = parse_config(text, output=tmp_path / name)
        for command in commands:
            await command(config)
    first, second = _files(tmp_path / "first"), _files(tmp_path / "second")
    assert first
    assert first.keys() == second.keys()
    assert first == second


async def test_sample_workers_do_not_change_artifacts(tmp_path, circle_config_text):
    text = circle_config_text.replace("chains = 1", "chains = 2")
    for workers in (1, 2):
        config = parse_config(text, output=tmp_path / str(workers), workers=workers)
        assert config.workers == workers
        await cmd_sample(config)
    inline, pooled = _files(tmp_path / "1"), _files(tmp_path / "2")
    assert any(name.startswith("samples/mcmc_p2_b2_c1") for name in inline)
    assert inline == pooled


async def test_sample_task_events(circle_config, mocker):
    task_done = mocker.Mock()
    record = await cmd_sample(
        circle_config, callbacks={HarnessEventType.TASK_DONE: task_done}
    )
    # two chains and two exact samplers
    assert task_done.call_count == 4
    assert {call.args[0].task for call in task_done.call_args_list} == {
        (0, 0, 0),
        (1, 0, 0),
        (0, 0),
        (1, 0),
    }
    samplers = sorted((entry["sampler"], entry["p"]) for entry in record.entries)
    assert samplers == [("dpp", 1), ("dpp", 2), ("mcmc", 1), ("mcmc", 2)]

    output = circle_config.output
    manifest = read_json(output / "samples" / "manifest.json")
    assert manifest["config_hash"] == record.config_hash
    entry = manifest["entries"][0]
    assert entry["sampler"] == "mcmc"
    assert not entry["burn_in_default"]
    _, columns, archive = read_csv(output / entry["archive"])
    assert columns == ["sample", "slot", "x0", "x1"]
    assert archive.shape == (4 * 3, 4)
    _, columns, distances = read_csv(output / entry["distances"])
    assert columns[:2] == ["sample", "logdet"]
    assert distances.shape == (4, 5)


async def test_sample_keep_zero(tmp_path, circle_config_text):
    text = circle_config_text.replace("keep = 4", "keep = 0")
    config = parse_config(text, output=tmp_path)
    record = await cmd_sample(config)
    assert all(entry["kept"] == 0 for entry in record.entries)
    assert all("archive" not in entry for entry in record.entries)
    assert not list((tmp_path / "samples").glob("mcmc_*.csv"))

    with pytest.raises(MissingInputException):
        await cmd_ldp(config)


async def test_ldp_missing_manifest(circle_config):
    with pytest.raises(MissingInputException):
        await cmd_ldp(circle_config)


async def test_ldp_rejects_other_configuration(tmp_path, circle_config_text):
    config = parse_config(circle_config_text, output=tmp_path)
    await cmd_sample(config)

    with pytest.raises(MissingInputException):
        await cmd_ldp(parse_config(circle_config_text, output=tmp_path, seed=8))

    manifest = read_json(tmp_path / "samples" / "manifest.json")
    path = tmp_path / manifest["entries"][0]["distances"]
    _, columns, data = read_csv(path)
    write_csv(path, columns, data, "0" * 64)
    with pytest.raises(MissingInputException) as e:
        await cmd_ldp(config)
    assert str(path) in str(e.value)


async def test_ldp_degrees_changed(tmp_path, circle_config_text):
    await cmd_sample(parse_config(circle_config_text, output=tmp_path))
    text = circle_config_text.replace("degrees = 1, 2", "degrees = 1, 2, 3")
    with pytest.raises(MissingInputException):
        await cmd_ldp(parse_config(text, output=tmp_path))


async def test_sample_then_ldp(tmp_path, circle_config_text):
    config = parse_config(_ldp_text(circle_config_text), output=tmp_path)
    await cmd_sample(config)
    record = await cmd_ldp(config)

    assert len(record.entries) == 1
    entry = record.entries[0]
    assert entry["sampler"] == "mcmc"
    assert entry["distance"] == "dist_gamma_1"
    assert entry["exponent"] < 0.0
    assert entry["holder_exponent"] == pytest.approx(1.0 / 24.0)

    _, columns, curve = read_csv(tmp_path / "ldp" / "ldp_mcmc_b2_dist_gamma_1.csv")
    assert curve.shape[0] == 4
    assert read_json(tmp_path / "ldp" / "record.json")["command"] == "ldp"


async def test_diag_circle(circle_config):
    record = await cmd_diag(circle_config)
    rows = record.entries
    assert [row["p"] for row in rows] == [1, 2]
    for row in rows:
        assert row["bm_constant"] == pytest.approx(row["sqrt_n_p"], rel=1e-8)
        assert row["bergman_mass"] == pytest.approx(row["n_p"], rel=1e-8)
        assert row["lbb_target"] == math.factorial(row["n_p"])
        assert row["lbb_estimate"] > 0.0
        assert row["tau"] <= row["tau_bound"]
        assert row["l4_over_l2_median"] >= 1.0 - 1e-8

    _, columns, table = read_csv(circle_config.output / "diag" / "diagnostics.csv")
    assert columns == list(DIAG_COLUMNS)
    assert table.shape == (2, len(DIAG_COLUMNS))
    summary = read_json(circle_config.output / "diag" / "diagnostics.json")
    assert summary["bm_fit"]["A"] > 0.0
    assert "mass_density" not in summary


@pytest.mark.slow
async def test_equidistribution_trend_circle(tmp_path, circle_config_text):
    text = (
        circle_config_text.replace("degrees = 1, 2", "degrees = 4, 8, 16, 32")
        .replace("keep = 4", "keep = 100")
        .replace("burn_in = 50", "burn_in = 200")
        .replace("gammas = 1, 2", "gammas = 1")
    )
    config = parse_config(text, output=tmp_path)
    await cmd_sample(config)
    record = await cmd_ldp(config)

    (entry,) = [entry for entry in record.entries if entry["sampler"] == "dpp"]
    _, columns, curve = read_csv(tmp_path / "ldp" / "ldp_dpp_b2_dist_gamma_1.csv")
    assert curve[:, 0].tolist() == [4, 8, 16, 32]
    medians = curve[:, columns.index("median_dist")]
    assert np.all(np.diff(medians) < 0.0)
    assert entry["exponent"] <= -0.3
    assert entry["exceedance_non_increasing"]
