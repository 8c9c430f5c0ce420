"""Configuration validation, presets, identity hashing, grid expansion."""

import json

import pytest

from volprop.config import (
    DEFAULT_CONFIG,
    PRESETS,
    config_id,
    expand_grid,
    load_config,
    make_backend,
    preset_config,
    resolve_config,
    to_run_config,
    validate_config,
)
from volprop.engine import Propagation, SyntheticBackend
from volprop.errors import ConfigInvalid, GridInvalid, MissingGraph
from volprop.prompts import Strategy


def test_empty_doc_yields_defaults():
    cfg = validate_config({})
    assert cfg["propagation"] == "forward"
    assert cfg["prompts"] == "fml"
    assert cfg["memory"]["tau"] == 1.0
    assert cfg["window"]["enabled"] is True
    assert cfg["window"]["level"] == 400.0


def test_unknown_keys_rejected_with_dotted_path():
    with pytest.raises(ConfigInvalid, match="bogus"):
        validate_config({"bogus": 1})
    with pytest.raises(ConfigInvalid, match=r"memory\.bogus"):
        validate_config({"memory": {"bogus": 1}})


def test_value_range_errors_name_dotted_keys():
    with pytest.raises(ConfigInvalid, match=r"memory\.tau"):
        validate_config({"memory": {"tau": 1.5}})
    with pytest.raises(ConfigInvalid, match=r"memory\.stride"):
        validate_config({"memory": {"stride": 0}})
    with pytest.raises(ConfigInvalid, match=r"memory\.gate_k"):
        validate_config({"memory": {"gate_k": -1}})
    with pytest.raises(ConfigInvalid, match=r"memory\.capacity"):
        validate_config({"memory": {"capacity": -2}})
    with pytest.raises(ConfigInvalid, match=r"window\.width"):
        validate_config({"window": {"width": 0}})
    with pytest.raises(ConfigInvalid, match=r"clahe\.tiles"):
        validate_config({"clahe": {"tiles": [0, 8]}})
    with pytest.raises(ConfigInvalid, match="propagation"):
        validate_config({"propagation": "sideways"})


def test_intelligent_slicing_capacity_conflict():
    with pytest.raises(ConfigInvalid, match=r"memory\.capacity"):
        validate_config({"memory": {"intelligent_slicing": True, "capacity": 6}})
    cfg = validate_config({"memory": {"intelligent_slicing": True, "capacity": 2}})
    assert cfg["memory"]["capacity"] == 2


def test_onnx_backend_requires_model_dir():
    with pytest.raises(ConfigInvalid, match=r"backend\.model_dir"):
        validate_config({"backend": {"kind": "onnx"}})
    cfg = validate_config({"backend": {"kind": "onnx", "model_dir": "/models"}})
    assert cfg["backend"]["model_dir"] == "/models"


def test_all_presets_validate():
    for name in PRESETS:
        cfg = preset_config(name)
        assert cfg["name"] == name
    with pytest.raises(ConfigInvalid, match="unknown preset"):
        preset_config("turbo")


def test_config_id_properties():
    a = config_id(validate_config({"memory": {"tau": 0.3}}))
    assert len(a) == 12 and all(ch in "0123456789abcdef" for ch in a)
    # integer and float spellings canonicalize to the same identity
    b = config_id(validate_config({"memory": {"tau": 0.3}, "window": {"level": 400}}))
    assert a == b
    # the display name never shifts the identity
    c = config_id(validate_config({"memory": {"tau": 0.3}, "name": "anything"}))
    assert a == c
    assert config_id(validate_config({})) != a


def test_to_run_config_presets():
    rc = to_run_config(preset_config("np"))
    assert rc.window is None
    assert rc.policy.tau == 1.0

    rc = to_run_config(preset_config("sps"))
    assert rc.policy.tau == 0.3
    assert rc.window is not None and rc.window.level == 400.0

    rc = to_run_config(preset_config("is"))
    assert rc.policy.intelligent_slicing and rc.policy.capacity == 2

    rc = to_run_config(preset_config("is+sps"))
    assert rc.policy.tau == 0.3 and rc.policy.intelligent_slicing

    rc = to_run_config(preset_config("three-axis-9"))
    assert rc.propagation is Propagation.THREE_AXIS
    assert rc.prompt_spec.strategy is Strategy.FML

    rc = to_run_config(preset_config("baseline"))
    assert rc.propagation is Propagation.FORWARD
    assert rc.policy.capacity == 6 and rc.policy.stride == 1


def test_resolve_config_sources(tmp_path):
    assert resolve_config("baseline")["name"] == "baseline"
    assert resolve_config({"seed": 3})["seed"] == 3
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"memory": {"tau": 0.5}}))
    assert resolve_config(str(p))["memory"]["tau"] == 0.5
    with pytest.raises(ConfigInvalid, match="not found"):
        load_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigInvalid, match="valid JSON"):
        load_config(bad)


def test_make_backend():
    cfg = validate_config({"backend": {"intensity_tolerance": 0.2, "dilation_radius": 5}})
    b = make_backend(cfg)
    assert isinstance(b, SyntheticBackend)
    assert b.intensity_tolerance == 0.2 and b.dilation_radius == 5

    onnx_cfg = validate_config({"backend": {"kind": "onnx", "model_dir": "/nonexistent"}})
    with pytest.raises(MissingGraph):
        make_backend(onnx_cfg)
    # override wins over the config
    assert isinstance(make_backend(onnx_cfg, "synthetic"), SyntheticBackend)
    with pytest.raises(MissingGraph):
        make_backend(cfg, "onnx:/nonexistent")
    with pytest.raises(ConfigInvalid, match="--backend"):
        make_backend(cfg, "garbage")


# --- ablation grids ---

def test_expand_grid_axis_counts():
    taus = [round(0.1 * i, 1) for i in range(1, 11)]
    cfgs = expand_grid({"base": "baseline", "axes": {"memory.tau": taus}})
    assert len(cfgs) == 10
    assert [c["memory"]["tau"] for c in cfgs] == taus
    assert cfgs[0]["name"] == "tau=0.1"

    cfgs = expand_grid({"axes": {"memory.capacity": [0, 1, 2, 3, 4, 5, 6]}})
    assert len(cfgs) == 7

    cfgs = expand_grid({"axes": {"memory.gate_k": [0, 1, 2, 3, 4, 5, 6]}})
    assert len(cfgs) == 7

    cfgs = expand_grid({"axes": {"memory.stride": [1, 2, 4]}})
    assert len(cfgs) == 3


def test_expand_grid_cartesian_product():
    cfgs = expand_grid({
        "base": "baseline",
        "axes": {"memory.tau": [0.1, 0.2], "memory.stride": [1, 2, 4]},
    })
    assert len(cfgs) == 6
    combos = {(c["memory"]["stride"], c["memory"]["tau"]) for c in cfgs}
    assert combos == {(s, t) for s in (1, 2, 4) for t in (0.1, 0.2)}
    names = {c["name"] for c in cfgs}
    assert "stride=1 tau=0.1" in names


def test_expand_grid_explicit_configs_and_named_overrides():
    cfgs = expand_grid({
        "base": "baseline",
        "configs": [{"memory": {"tau": 0.3}}, {"name": "tuned", "seed": 5}],
    })
    assert len(cfgs) == 2
    assert cfgs[0]["memory"]["tau"] == 0.3
    assert cfgs[1]["name"] == "tuned" and cfgs[1]["seed"] == 5


def test_expand_grid_errors():
    with pytest.raises(GridInvalid, match="unknown grid keys"):
        expand_grid({"axes": {}, "extra": 1})
    with pytest.raises(GridInvalid, match="zero configs"):
        expand_grid({"base": "baseline"})
    with pytest.raises(GridInvalid, match="nonempty"):
        expand_grid({"axes": {"memory.tau": []}})
    with pytest.raises(GridInvalid):
        expand_grid({"axes": {"memory.bogus": [1]}})
    with pytest.raises(GridInvalid):
        expand_grid({"configs": ["not-an-object"]})
    with pytest.raises(GridInvalid):
        expand_grid([])
