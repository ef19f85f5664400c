import pytest

from nekhlab.config import load, from_dict, ConfigError


def test_defaults():
    cfg = load(None)
    assert cfg.cutoff.delta == 0.75 and cfg.cutoff.mu == 0.08
    assert cfg.zone.mu == 0.02 and cfg.seed == 0 and cfg.threads >= 1
    assert set(cfg.to_dict()) == {"symbols", "zone", "integrator", "harness"}


def test_file_roundtrip(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('[symbols]\ndelta = 0.7\n[integrator]\ndt = 0.02\na0 = [20.0, 3.0]\n'
                 '[harness]\nseed = 7\n')
    cfg = load(p)
    assert cfg.cutoff.delta == 0.7 and cfg.integrator.dt == 0.02 and cfg.seed == 7
    assert cfg.require("integrator", "a0") == [20.0, 3.0]


@pytest.mark.parametrize("doc, section, key", [
    ({"bogus": {}}, "bogus", None),
    ({"symbols": {"deltaa": 0.8}}, "symbols", "deltaa"),
    ({"symbols": {"delta": 0.5}}, "symbols", "delta"),
    ({"integrator": {"dt": -1.0}}, "integrator", "dt"),
    ({"integrator": {"spacing": "cubic"}}, "integrator", "spacing"),
    ({"integrator": {"a0": [1.0]}}, "integrator", "a0"),
    ({"harness": {"N": 0.5}}, "harness", "N"),
])
def test_rejections(doc, section, key):
    with pytest.raises(ConfigError) as exc:
        from_dict(doc)
    assert exc.value.section == section and exc.value.key == key


def test_delta_message():
    with pytest.raises(ConfigError, match="δ must exceed 2/3"):
        from_dict({"symbols": {"delta": 0.5}})


def test_require_missing():
    with pytest.raises(ConfigError) as exc:
        load(None).require("integrator", "a0")
    assert exc.value.to_dict()["key"] == "a0"


def test_bad_files(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[symbols\ndelta=")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load(p)
    with pytest.raises(ConfigError, match="not found"):
        load(tmp_path / "missing.toml")
