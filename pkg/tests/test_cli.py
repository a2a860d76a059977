import json

import numpy as np
import pytest

from tnprivacy import __version__
from tnprivacy.cli import main
from tnprivacy.config import ConfigError, parse_config
from tnprivacy.modelio import load_model, save_model
from tnprivacy.mps import materialize, random_mps

TINY_PIPELINE = {
    "dataset": {"rows": 3000},
    "shadow": {"levels": [1.0], "attacker_datasets": 1, "attacked_datasets": 1, "models_per_dataset": 2,
               "dataset_size": 100, "repetitions": 2, "eval_rows": 100,
               "variants": ["nn", "mps-raw", "mps-univocal"]},
    "nn": {"train": {"batch_size": 16, "lr": 1e-3, "epochs": 1}},
    "mps": {"train": {"batch_size": 50, "lr": 0.1, "epochs": 2}},
    "meta": {"mlp_epochs": 3},
}


def _cfg(tmp_path, body, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(body))
    return str(p)


def test_config_errors_carry_field_paths():
    with pytest.raises(ConfigError) as exc:
        parse_config({"shadow": {"levels": [0.3]}, "mps": {"bond_dim": 0}}, seed=1)
    paths = {p for p, _ in exc.value.problems}
    assert "shadow.levels" in paths and "mps.bond_dim" in paths
    with pytest.raises(ConfigError) as exc:
        parse_config({"nn": {"unknown": 1}}, seed=1)
    assert exc.value.problems[0][0] == "nn.unknown"
    with pytest.raises(ConfigError) as exc:
        parse_config({})
    assert exc.value.problems[0][0] == "seed"


def test_hash_ignores_workers_and_out():
    a = parse_config({"out": "x"}, seed=3, workers=1)
    b = parse_config({"out": "y"}, seed=3, workers=4)
    assert a.sha256() == b.sha256()
    assert a.sha256() != parse_config({}, seed=4).sha256()


def test_validation_exit_code(tmp_path, capsys):
    path = _cfg(tmp_path, {"toy": {"rows": -5}})
    assert main(["toy-vuln", "--config", path, "--seed", "0", "--out", str(tmp_path)]) == 1
    assert "toy.rows" in capsys.readouterr().err
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert main(["gen-data", "--config", str(bad), "--seed", "0"]) == 1


def test_gen_data_header_and_rerun_is_byte_identical(tmp_path):
    path = _cfg(tmp_path, {"dataset": {"rows": 200}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-data", "--config", path, "--seed", "5", "--out", str(a)]) == 0
    assert main(["gen-data", "--config", path, "--seed", "5", "--out", str(b)]) == 0
    text = (a / "surrogate.csv").read_text()
    assert text == (b / "surrogate.csv").read_text()
    head = text.splitlines()[:3]
    assert head[0].startswith("# config_sha256=") and head[1] == "# seed=5"
    assert head[2] == f"# version={__version__}"


def test_canonical_props_empty_grid(tmp_path):
    path = _cfg(tmp_path, {"canonical": {"sites": []}})
    assert main(["canonical-props", "--config", path, "--seed", "0", "--out", str(tmp_path)]) == 0
    lines = [l for l in (tmp_path / "canonical_props.csv").read_text().splitlines() if not l.startswith("#")]
    assert lines == ["property,n_sites,samples,worst_residual,tolerance,status"]


def test_canonical_props_small_grid_reports_singular_row(tmp_path, capsys):
    path = _cfg(tmp_path, {"canonical": {"sites": [3, 4], "models": 3, "gauges": 2}})
    assert main(["canonical-props", "--config", path, "--seed", "0", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "expected-failure" in out and "fail\n" not in out


def test_canonical_props_failure_exit_code(tmp_path):
    path = _cfg(tmp_path, {"canonical": {"sites": [4], "models": 2, "gauges": 2, "tolerance": 1e-300}})
    assert main(["canonical-props", "--config", path, "--seed", "0", "--out", str(tmp_path)]) == 3


def test_train_then_canonicalize(tmp_path, capsys):
    path = _cfg(tmp_path, {"dataset": {"rows": 300}, "mps": {"train": {"batch_size": 50, "lr": 0.1, "epochs": 2}}})
    assert main(["train", "--arch", "mps", "--config", path, "--seed", "1", "--out", str(tmp_path)]) == 0
    model_file = tmp_path / "mps_model.txt"
    assert model_file.read_text().startswith("# config_sha256=")
    for form in ("univocal", "svd", "svd+signs"):
        capsys.readouterr()
        assert main(["canonicalize", str(model_file), "--form", form, "--seed", "1"]) == 0
        resid = float(capsys.readouterr().out.split()[-1])
        assert resid <= 1e-8
        canon = load_model(tmp_path / f"mps_model.{form}.txt")
        np.testing.assert_allclose(materialize(canon), materialize(load_model(model_file)), atol=1e-8)


def test_canonicalize_rejects_network_file(tmp_path):
    path = _cfg(tmp_path, {"dataset": {"rows": 200}, "nn": {"train": {"batch_size": 16, "lr": 1e-3, "epochs": 1}}})
    assert main(["train", "--arch", "nn", "--config", path, "--seed", "0", "--out", str(tmp_path)]) == 0
    assert main(["canonicalize", str(tmp_path / "nn_model.txt"), "--seed", "0"]) == 1


def test_canonicalize_missing_file():
    assert main(["canonicalize", "/nonexistent/model.txt", "--seed", "0"]) == 1


def test_model_file_round_trip(tmp_path):
    m = random_mps(5, 2, 3, output_site=2, seed=4)
    save_model(m, tmp_path / "m.txt", "# comment\n")
    back = load_model(tmp_path / "m.txt")
    assert back.output_site == 2
    for a, b in zip(m.sites, back.sites):
        np.testing.assert_array_equal(a, b)


@pytest.mark.slow
def test_pipeline_outputs_and_rerun(tmp_path):
    path = _cfg(tmp_path, TINY_PIPELINE)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pipeline", "--config", path, "--seed", "2", "--out", str(a), "--workers", "1"]) == 0
    assert main(["pipeline", "--config", path, "--seed", "2", "--out", str(b), "--workers", "2"]) == 0
    for name in ("models.csv", "attacks.csv", "records/level1.0_mps-raw.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = [l for l in (a / "attacks.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == 1 + 3


def test_pipeline_empty_grid(tmp_path):
    body = dict(TINY_PIPELINE, shadow=dict(TINY_PIPELINE["shadow"], levels=[]))
    path = _cfg(tmp_path, body)
    assert main(["pipeline", "--config", path, "--seed", "0", "--out", str(tmp_path)]) == 0
    rows = [l for l in (tmp_path / "attacks.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == 1
