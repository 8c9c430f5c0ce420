"""Graph-execution backend over three exported ONNX models.

The model directory must hold the image encoder, the fused
memory-attention + mask-decoder graph, and the memory encoder, with
tensor names and ranks matching the signature manifest shipped at
volprop/data/onnx_signature.json. Validation order is deliberate:
missing files raise MissingGraph before any runtime import, a missing
runtime raises RuntimeUnavailable, and only then are session signatures
checked (SignatureMismatch names the offending tensor).

The runtime module is injectable for testing; by default onnxruntime is
imported lazily.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .errors import BackendFailure, MissingGraph, RuntimeUnavailable, SignatureMismatch
from .membank import MemoryEntry
from .profiler import NULL_PROFILER, Stage, StageProfiler

LOGIT_SCALE = 8.0

_DTYPE_TAGS = {"float32": "float", "int64": "int64"}


def load_signature_manifest() -> dict:
    with resources.files("volprop.data").joinpath("onnx_signature.json").open("rb") as f:
        return json.load(f)


def _import_runtime():
    try:
        import onnxruntime
    except ImportError as e:
        raise RuntimeUnavailable(
            "onnxruntime is not installed; install the 'onnx' extra or use the synthetic backend"
        ) from e
    return onnxruntime


def resize_bilinear(plane: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Separable bilinear resample of a 2D grid to `shape` (align-corners)."""
    h, w = plane.shape
    th, tw = shape
    if (h, w) == (th, tw):
        return plane.astype(np.float64)
    ys = np.linspace(0.0, h - 1.0, th)
    xs = np.linspace(0.0, w - 1.0, tw)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    p = plane.astype(np.float64)
    top = (1 - wx) * p[np.ix_(y0, x0)] + wx * p[np.ix_(y0, x1)]
    bot = (1 - wx) * p[np.ix_(y1, x0)] + wx * p[np.ix_(y1, x1)]
    return (1 - wy) * top + wy * bot


class OnnxBackend:
    """SegmentationBackend backed by three ONNX graph sessions."""

    def __init__(self, model_dir: str | Path, runtime: Any = None):
        self.model_dir = Path(model_dir)
        manifest = load_signature_manifest()
        self._manifest = manifest

        graphs = manifest["graphs"]
        paths = {}
        if not self.model_dir.is_dir():
            raise MissingGraph(f"model directory {self.model_dir} does not exist")
        for name, spec in graphs.items():
            p = self.model_dir / spec["file"]
            if not p.is_file():
                raise MissingGraph(f"missing {name} graph: {p}")
            paths[name] = p

        rt = runtime if runtime is not None else _import_runtime()
        self._sessions = {}
        for name, p in paths.items():
            try:
                self._sessions[name] = rt.InferenceSession(str(p))
            except Exception as e:  # runtime-specific load errors
                raise BackendFailure(f"cannot load {name} graph {p}: {e}") from e
        for name, spec in graphs.items():
            self._check_signature(name, self._sessions[name], spec)

        meta_keys = manifest["metadata_keys"]
        defaults = manifest["defaults"]
        meta = {}
        try:
            meta = dict(self._sessions["decoder"].get_modelmeta().custom_metadata_map)
        except Exception:
            pass
        self._slots = int(meta.get(meta_keys["slot_count"], defaults["slot_count"]))
        res = meta.get(meta_keys["input_resolution"])
        if res is None:
            enc_shape = self._sessions["encoder"].get_inputs()[0].shape
            res = enc_shape[2] if isinstance(enc_shape[2], int) else defaults["input_resolution"]
        self._resolution = int(res)

    @staticmethod
    def _check_signature(graph: str, session: Any, spec: dict) -> None:
        def check(kind: str, have: list, want: dict) -> None:
            by_name = {t.name: t for t in have}
            for name, ts in want.items():
                if name not in by_name:
                    raise SignatureMismatch(f"{graph}: missing {kind} tensor '{name}'")
                t = by_name[name]
                rank = len(t.shape)
                if rank != ts["rank"]:
                    raise SignatureMismatch(
                        f"{graph}: {kind} tensor '{name}' has rank {rank}, expected {ts['rank']}"
                    )
                tag = _DTYPE_TAGS[ts["dtype"]]
                if tag not in str(t.type):
                    raise SignatureMismatch(
                        f"{graph}: {kind} tensor '{name}' has type {t.type}, expected {ts['dtype']}"
                    )

        check("input", session.get_inputs(), spec["inputs"])
        check("output", session.get_outputs(), spec["outputs"])

    def slot_count(self) -> int:
        return self._slots

    def input_resolution(self) -> int:
        return self._resolution

    def encode_slice(self, image: np.ndarray) -> dict:
        if image.ndim != 3 or image.shape[0] != 3:
            raise BackendFailure(f"expected a (3, H, W) slice, got {image.shape}")
        native = image.shape[1:]
        r = self._resolution
        resized = np.stack([resize_bilinear(c, (r, r)) for c in image], axis=0)
        out = self._sessions["encoder"].run(
            None, {"image": resized[None].astype(np.float32)}
        )[0]
        return {"embedding": out, "native_shape": native}

    def segment(
        self,
        embedding: dict,
        context: list[tuple[MemoryEntry, int]],
        prompt_mask: np.ndarray | None = None,
        *,
        profiler: StageProfiler = NULL_PROFILER,
        slice_index: int = -1,
    ) -> tuple[np.ndarray, float, Any]:
        emb = embedding["embedding"]
        native = embedding["native_shape"]
        r = self._resolution

        if prompt_mask is not None:
            # Prompted frames reproduce the prompt exactly; the decoder is
            # bypassed for the output mask but memory features still come
            # from the echoed logits.
            with profiler.stage(Stage.DECODE, slice_index):
                logits = np.where(prompt_mask.astype(bool), LOGIT_SCALE, -LOGIT_SCALE)
                confidence = 1.0
        else:
            with profiler.stage(Stage.MEMORY_ATTENTION, slice_index):
                if context:
                    feats = np.stack([e.mask_features for e, _ in context], axis=0)
                    slots = np.array([s for _, s in context], dtype=np.int64)
                else:
                    feats = np.zeros((0, 1, 1, 1, 1), dtype=np.float32)
                    slots = np.zeros((0,), dtype=np.int64)
            with profiler.stage(Stage.DECODE, slice_index):
                empty_prompt = np.zeros((1, 1, r, r), dtype=np.float32)
                try:
                    out_logits, out_conf = self._sessions["decoder"].run(
                        None,
                        {
                            "embedding": emb,
                            "memory_features": feats.astype(np.float32),
                            "slot_indices": slots,
                            "prompt_mask": empty_prompt,
                        },
                    )
                except Exception as e:
                    raise BackendFailure(f"decoder failed on slice {slice_index}: {e}") from e
                logits = resize_bilinear(out_logits[0, 0], native)
                confidence = float(out_conf.reshape(-1)[0])

        with profiler.stage(Stage.MEMORY_ENCODE, slice_index):
            logits_r = resize_bilinear(np.asarray(logits, dtype=np.float64), (r, r))
            try:
                mask_features = self._sessions["memory_encoder"].run(
                    None,
                    {"embedding": emb, "logits": logits_r[None, None].astype(np.float32)},
                )[0]
            except Exception as e:
                raise BackendFailure(f"memory encoder failed on slice {slice_index}: {e}") from e
        return np.asarray(logits, dtype=np.float32), confidence, mask_features


def onnx_backend(model_dir: str | Path, runtime: Any = None) -> OnnxBackend:
    return OnnxBackend(model_dir, runtime=runtime)
