"""Run configuration: versioned JSON schema, presets, canonical hashing.

Unknown keys anywhere in the document are hard errors; every error names
the offending dotted key. config_id is a truncated sha256 of the
canonicalized config (sorted keys, fixed separators, default floats),
excluding the human-readable "name" label, so identical settings hash
identically on any machine.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

from .engine import Propagation, RunConfig, SyntheticBackend
from .errors import ConfigInvalid, GridInvalid
from .membank import MemoryPolicy
from .preproc import WindowSpec
from .prompts import parse_strategy

SCHEMA_VERSION = 1

DEFAULT_CONFIG: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "name": "",
    "seed": 0,
    "propagation": "forward",
    "prompts": "fml",
    "window": {"enabled": True, "level": 400.0, "width": 1800.0},
    "clahe": {"enabled": False, "clip": 2.0, "tiles": [8, 8]},
    "memory": {
        "tau": 1.0,
        "capacity": 6,
        "stride": 1,
        "gate_k": 0,
        "intelligent_slicing": False,
    },
    "crop": {"enabled": True, "margin": 8},
    "backend": {
        "kind": "synthetic",
        "model_scale": "small",
        "model_dir": "",
        "intensity_tolerance": 0.1,
        "dilation_radius": 3,
    },
}

PRESETS: dict[str, dict[str, Any]] = {
    "np": {"name": "np", "window": {"enabled": False}, "clahe": {"enabled": False}},
    "baseline": {"name": "baseline"},
    "sps": {"name": "sps", "memory": {"tau": 0.3}},
    "is": {"name": "is", "memory": {"intelligent_slicing": True, "capacity": 2}},
    "is+sps": {
        "name": "is+sps",
        "memory": {"tau": 0.3, "intelligent_slicing": True, "capacity": 2},
    },
    "three-axis-9": {"name": "three-axis-9", "propagation": "three-axis"},
}


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigInvalid(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigInvalid(f"{path} must be an object")
            out[key] = _merge(base[key], value, prefix=f"{path}.")
        else:
            out[key] = value
    return out


def _require(cond: bool, key: str, detail: str) -> None:
    if not cond:
        raise ConfigInvalid(f"{key}: {detail}")


def validate_config(doc: dict) -> dict:
    """Merge a raw document over the defaults; reject unknown keys and bad values."""
    if not isinstance(doc, dict):
        raise ConfigInvalid("config root must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, doc)
    _require(cfg["schema_version"] == SCHEMA_VERSION, "schema_version",
             f"expected {SCHEMA_VERSION}, got {cfg['schema_version']}")
    _require(isinstance(cfg["seed"], int), "seed", "must be an integer")
    _require(cfg["propagation"] in ("forward", "forward-backward", "three-axis"),
             "propagation", f"unknown value {cfg['propagation']!r}")
    parse_strategy(str(cfg["prompts"]))

    w = cfg["window"]
    _require(isinstance(w["enabled"], bool), "window.enabled", "must be a boolean")
    _require(float(w["width"]) > 0, "window.width", "must be positive")

    c = cfg["clahe"]
    _require(isinstance(c["enabled"], bool), "clahe.enabled", "must be a boolean")
    _require(float(c["clip"]) > 0, "clahe.clip", "must be positive")
    tiles = c["tiles"]
    _require(
        isinstance(tiles, (list, tuple)) and len(tiles) == 2
        and all(isinstance(t, int) and t >= 1 for t in tiles),
        "clahe.tiles", "must be two integers >= 1",
    )

    m = cfg["memory"]
    _require(0.0 <= float(m["tau"]) <= 1.0, "memory.tau", f"must be in [0,1], got {m['tau']}")
    _require(isinstance(m["capacity"], int) and m["capacity"] >= 0, "memory.capacity",
             "must be an integer >= 0")
    _require(isinstance(m["stride"], int) and m["stride"] >= 1, "memory.stride",
             "must be an integer >= 1")
    _require(isinstance(m["gate_k"], int) and m["gate_k"] >= 0, "memory.gate_k",
             "must be an integer >= 0")
    _require(isinstance(m["intelligent_slicing"], bool), "memory.intelligent_slicing",
             "must be a boolean")
    if m["intelligent_slicing"] and m["capacity"] != 2:
        raise ConfigInvalid("memory.capacity: intelligent slicing forces capacity 2")

    cr = cfg["crop"]
    _require(isinstance(cr["enabled"], bool), "crop.enabled", "must be a boolean")
    _require(isinstance(cr["margin"], int) and cr["margin"] >= 0, "crop.margin",
             "must be an integer >= 0")

    b = cfg["backend"]
    _require(b["kind"] in ("synthetic", "onnx"), "backend.kind",
             f"must be synthetic or onnx, got {b['kind']!r}")
    _require(float(b["intensity_tolerance"]) > 0, "backend.intensity_tolerance",
             "must be positive")
    _require(isinstance(b["dilation_radius"], int) and b["dilation_radius"] >= 0,
             "backend.dilation_radius", "must be an integer >= 0")
    if b["kind"] == "onnx":
        _require(bool(b["model_dir"]), "backend.model_dir", "required for the onnx backend")

    # Canonical numeric types so 1 and 1.0 spell the same config_id.
    w["level"] = float(w["level"])
    w["width"] = float(w["width"])
    c["clip"] = float(c["clip"])
    c["tiles"] = [int(tiles[0]), int(tiles[1])]
    m["tau"] = float(m["tau"])
    b["intensity_tolerance"] = float(b["intensity_tolerance"])
    return cfg


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigInvalid(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"config {path} is not valid JSON: {e}") from e
    return validate_config(doc)


def preset_config(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigInvalid(f"unknown preset {name!r} (have: {', '.join(sorted(PRESETS))})")
    return validate_config(copy.deepcopy(PRESETS[name]))


def resolve_config(source: str | Path | dict) -> dict:
    """Accept a preset name, a JSON file path, or an already-parsed dict."""
    if isinstance(source, dict):
        return validate_config(source)
    text = str(source)
    if text in PRESETS:
        return preset_config(text)
    return load_config(text)


def canonical_json(cfg: dict) -> str:
    slim = {k: v for k, v in cfg.items() if k != "name"}
    return json.dumps(slim, sort_keys=True, separators=(",", ":"))


def config_id(cfg: dict) -> str:
    """Stable 12-hex-character identity of a canonicalized config."""
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:12]


def to_run_config(cfg: dict) -> RunConfig:
    window = None
    if cfg["window"]["enabled"]:
        window = WindowSpec(level=float(cfg["window"]["level"]),
                            width=float(cfg["window"]["width"]))
    m = cfg["memory"]
    return RunConfig(
        propagation=Propagation(cfg["propagation"]),
        prompt_spec=parse_strategy(str(cfg["prompts"])),
        policy=MemoryPolicy(
            tau=float(m["tau"]),
            capacity=int(m["capacity"]),
            stride=int(m["stride"]),
            gate_k=int(m["gate_k"]),
            intelligent_slicing=bool(m["intelligent_slicing"]),
        ),
        window=window,
        clahe_enabled=bool(cfg["clahe"]["enabled"]),
        clahe_clip=float(cfg["clahe"]["clip"]),
        clahe_tiles=(int(cfg["clahe"]["tiles"][0]), int(cfg["clahe"]["tiles"][1])),
        crop_enabled=bool(cfg["crop"]["enabled"]),
        crop_margin=int(cfg["crop"]["margin"]),
        seed=int(cfg["seed"]),
    )


def make_backend(cfg: dict, backend_override: str | None = None):
    """Backend from config, honoring a --backend CLI override."""
    kind = cfg["backend"]["kind"]
    model_dir = cfg["backend"]["model_dir"]
    if backend_override:
        if backend_override == "synthetic":
            kind = "synthetic"
        elif backend_override.startswith("onnx:"):
            kind, model_dir = "onnx", backend_override.split(":", 1)[1]
        else:
            raise ConfigInvalid(
                f"--backend must be 'synthetic' or 'onnx:<dir>', got {backend_override!r}"
            )
    if kind == "synthetic":
        return SyntheticBackend(
            intensity_tolerance=float(cfg["backend"]["intensity_tolerance"]),
            dilation_radius=int(cfg["backend"]["dilation_radius"]),
            model_scale=str(cfg["backend"]["model_scale"]),
        )
    from .onnx_backend import OnnxBackend

    return OnnxBackend(model_dir)


def expand_grid(grid_doc: dict) -> list[dict]:
    """Expand an ablation grid into validated configs.

    Schema: {"base": <preset name or config object>, "axes": {dotted.key:
    [values]}, "configs": [override objects]}. Axes expand as a Cartesian
    product over the base; explicit configs append afterwards. Every
    resulting config gets a name derived from its overrides unless the
    override sets one.
    """
    if not isinstance(grid_doc, dict):
        raise GridInvalid("grid root must be a JSON object")
    unknown = set(grid_doc) - {"base", "axes", "configs"}
    if unknown:
        raise GridInvalid(f"unknown grid keys: {sorted(unknown)}")
    base_src = grid_doc.get("base", "baseline")
    base = resolve_config(copy.deepcopy(base_src)) if not isinstance(base_src, str) \
        else resolve_config(base_src)

    def set_dotted(doc: dict, dotted: str, value: Any) -> None:
        parts = dotted.split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value

    combos: list[dict] = []
    axes = grid_doc.get("axes", {})
    if axes:
        if not isinstance(axes, dict) or not all(isinstance(v, list) and v for v in axes.values()):
            raise GridInvalid("axes must map dotted keys to nonempty value lists")
        keys = sorted(axes)
        stack: list[dict] = [{}]
        for key in keys:
            stack = [dict(combo, **{key: v}) for combo in stack for v in axes[key]]
        for combo in stack:
            doc: dict = {}
            label = []
            for key in keys:
                set_dotted(doc, key, combo[key])
                label.append(f"{key.split('.')[-1]}={combo[key]}")
            doc["name"] = " ".join(label)
            combos.append(doc)
    for extra in grid_doc.get("configs", []):
        if not isinstance(extra, dict):
            raise GridInvalid("configs entries must be objects")
        combos.append(copy.deepcopy(extra))
    if not combos:
        raise GridInvalid("grid expands to zero configs (need axes or configs)")

    out = []
    for doc in combos:
        merged = copy.deepcopy(base)
        name = doc.pop("name", "")
        try:
            merged = _merge(merged, doc)
        except ConfigInvalid as e:
            raise GridInvalid(str(e)) from e
        if name:
            merged["name"] = name
        out.append(validate_config(merged))
    return out
