"""Dataset curation: label aggregation, eligibility, balanced splits.

Raw per-structure masks are consolidated into ten bone classes by union
rules shipped as a data file. Candidates must span more than six nonempty
axial slices. Splits are balanced per class, seeded, and written as
immutable JSON-lines manifests with a header recording the seed and a
hash of the rule table.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InsufficientCandidates, ManifestMissing
from .volgrid import Axis, Volume, VolumeKind


class RuleKind(Enum):
    IDENTITY = "identity"
    BILATERAL_UNION = "bilateral_union"
    SERIAL_UNION = "serial_union"
    SERIAL_BILATERAL = "serial_bilateral"


@dataclass(frozen=True)
class AggregationRule:
    target_class: str
    kind: RuleKind
    constituents: tuple[str, ...]


@dataclass(frozen=True)
class ManifestEntry:
    case_id: str
    target_class: str
    volume_path: str
    mask_path: str


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    split: str
    seed: int
    rules_hash: str


def default_rules() -> list[AggregationRule]:
    with resources.files("volprop.data").joinpath("bone_rules.json").open("rb") as f:
        raw = json.load(f)
    rules = [
        AggregationRule(
            target_class=r["target_class"],
            kind=RuleKind(r["kind"]),
            constituents=tuple(r["constituents"]),
        )
        for r in raw["rules"]
    ]
    seen: set[str] = set()
    for r in rules:
        overlap = seen.intersection(r.constituents)
        if overlap:
            raise ManifestMissing(f"rule table overlap on {sorted(overlap)}")
        seen.update(r.constituents)
    return rules


def rules_hash(rules: list[AggregationRule]) -> str:
    payload = json.dumps(
        [[r.target_class, r.kind.value, list(r.constituents)] for r in rules],
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def aggregate_labels(
    case: dict[str, Volume], rules: list[AggregationRule]
) -> dict[str, Volume]:
    """Voxelwise OR of each rule's present constituents.

    Classes with no present constituent are omitted.
    """
    shapes = {v.data.shape for v in case.values()}
    if len(shapes) > 1:
        raise DimensionMismatch(f"constituent masks disagree on shape: {sorted(shapes)}")
    out: dict[str, Volume] = {}
    for rule in rules:
        present = [case[name] for name in rule.constituents if name in case]
        if not present:
            continue
        acc = np.zeros(present[0].data.shape, dtype=bool)
        for v in present:
            acc |= v.data.astype(bool)
        out[rule.target_class] = Volume(
            data=acc.astype(np.uint8),
            spacing=present[0].spacing,
            kind=VolumeKind.BINARY_MASK,
        )
    return out


def eligible(mask: Volume, verbose: bool = False):
    """True iff more than six axial slices contain foreground.

    verbose additionally returns {"nonempty_slices", "extent_span"} so the
    extent-based reading of the cutoff stays inspectable.
    """
    other = tuple(a for a in range(3) if a != int(Axis.AXIAL))
    nonempty = np.flatnonzero(mask.data.any(axis=other))
    count = int(nonempty.size)
    ok = count > 6
    if not verbose:
        return ok
    span = int(nonempty[-1] - nonempty[0] + 1) if count else 0
    return ok, {"nonempty_slices": count, "extent_span": span}


def build_split(
    candidates: list[tuple[str, str]],
    per_class: int,
    seed: int,
    split: str = "split",
    paths: dict[str, tuple[str, str]] | None = None,
) -> Manifest:
    """Seeded balanced sample: exactly per_class (case, class) pairs per class.

    candidates are (case_id, target_class) pairs, assumed already
    eligibility-filtered. Sampling sorts candidates per class and shuffles
    with random.Random(seed) so the draw is stable across runs and
    platforms. Output entries are sorted. `paths` optionally maps case_id
    to (volume_path, mask_path); defaults to empty strings.
    """
    by_class: dict[str, list[str]] = {}
    for case_id, cls in candidates:
        by_class.setdefault(cls, []).append(case_id)
    entries: list[ManifestEntry] = []
    for cls in sorted(by_class):
        pool = sorted(set(by_class[cls]))
        if len(pool) < per_class:
            raise InsufficientCandidates(
                f"class {cls!r} has {len(pool)} eligible candidates, need {per_class}"
            )
        rng = random.Random(f"{seed}:{cls}")
        rng.shuffle(pool)
        for case_id in pool[:per_class]:
            vol_path, mask_path = (paths or {}).get(case_id, ("", ""))
            entries.append(ManifestEntry(case_id, cls, vol_path, mask_path))
    entries.sort(key=lambda e: (e.target_class, e.case_id))
    return Manifest(
        entries=tuple(entries),
        split=split,
        seed=seed,
        rules_hash=rules_hash(default_rules()),
    )


def write_manifest(manifest: Manifest, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w") as f:
        header = {
            "schema": 1,
            "seed": manifest.seed,
            "split": manifest.split,
            "rules_hash": manifest.rules_hash,
        }
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for e in manifest.entries:
            f.write(json.dumps({
                "case_id": e.case_id,
                "target_class": e.target_class,
                "volume_path": e.volume_path,
                "mask_path": e.mask_path,
            }, sort_keys=True) + "\n")
    return path


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestMissing(f"manifest not found: {path}")
    lines = [l for l in path.read_text().splitlines() if l.strip()]
    if not lines:
        raise ManifestMissing(f"manifest {path} is empty (missing header)")
    try:
        header = json.loads(lines[0])
        entries = tuple(
            ManifestEntry(
                case_id=r["case_id"],
                target_class=r["target_class"],
                volume_path=r["volume_path"],
                mask_path=r["mask_path"],
            )
            for r in map(json.loads, lines[1:])
        )
    except (json.JSONDecodeError, KeyError) as e:
        raise ManifestMissing(f"manifest {path} is malformed: {e}") from e
    return Manifest(
        entries=entries,
        split=str(header.get("split", "")),
        seed=int(header.get("seed", 0)),
        rules_hash=str(header.get("rules_hash", "")),
    )


def disjointness_report(a: Manifest, b: Manifest) -> dict:
    """Overlap between two splits in (case_id, class) pairs."""
    pa = {(e.case_id, e.target_class) for e in a.entries}
    pb = {(e.case_id, e.target_class) for e in b.entries}
    inter = pa & pb
    return {
        "a_size": len(pa),
        "b_size": len(pb),
        "overlap": len(inter),
        "disjoint": not inter,
    }
