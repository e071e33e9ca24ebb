import json

import pytest

from echokws import cli
from echokws.config import ConfigError, load_config


def write(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return p


def test_reference_config_loads(tmp_path):
    cfg = load_config("configs/reference.json", base_dir=tmp_path)
    assert cfg.seed == 20240
    assert cfg.path("models") == tmp_path / "models"
    assert cfg.net("echoic").in_channels == 2
    assert cfg.net("vocal").in_shape == (13, 98)


def test_unknown_key_named(tmp_path):
    with pytest.raises(ConfigError, match="train.epochz"):
        load_config(write(tmp_path, {"schema_version": 1, "seed": 1, "train": {"epochz": 3}}))


def test_seed_required_and_overridable(tmp_path):
    p = write(tmp_path, {"schema_version": 1})
    with pytest.raises(ConfigError, match="seed"):
        load_config(p)
    assert load_config(p, seed=5).seed == 5


def test_json_error_location(tmp_path):
    with pytest.raises(ConfigError, match="line 2"):
        load_config(write(tmp_path, '{"seed": 1,\n  oops}'))


def test_bad_values(tmp_path):
    for doc in ({"seed": 1, "schema_version": 2}, {"seed": 1, "dataset": {"splits": [0.5, 0.5, 0.5]}},
                {"seed": 1, "models": {"echoic": {"width_divisor": 3}}},
                {"seed": 1, "features": {"shift_window": [0, 700]}}):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, doc))


def test_cli_exit_codes(tmp_path, capsys):
    p = write(tmp_path, {"schema_version": 1, "seed": 1})
    assert cli.main(["featurize", "--config", str(p), "--out", str(tmp_path)]) == 3
    assert "generate" in capsys.readouterr().err
    assert cli.main(["train", "--modality", "vocal", "--config", str(p), "--out", str(tmp_path)]) == 3
    bad = write(tmp_path, {"schema_version": 1, "seed": 1, "nope": 1})
    assert cli.main(["generate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["evaluate", "--scenario", "moon"])
    assert exc.value.code == 2
