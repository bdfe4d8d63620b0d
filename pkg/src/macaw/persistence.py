"""Single-file container for models, codecs and pinned noise records.

Layout::

    b"MACW" | u32 version (LE) | u64 header length (LE) | UTF-8 JSON header | payload

The header names every array with its byte offset into the payload, its element
count and shape; all arrays are float64 little-endian. Integer data that must
survive exactly (seeds) is kept in the JSON header instead.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .codec import KernelParams, LatentCodec
from .conditioner import CMade
from .datasets import ImageGenSpec, ImageRecord, ScmTable
from .errors import CorruptError, IoError, VersionError
from .flow import MacawModel
from .graph import build_masks, validate_dag
from .priors import Prior
from .queries import GroupedModel

MAGIC = b"MACW"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_LE = np.dtype("<f8")


def write_container(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write ``arrays`` plus JSON ``meta`` atomically (temp file in the target dir + rename)."""
    entries, chunks, offset = {}, [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=_LE)
        entries[name] = {"offset": offset, "length": int(a.size), "shape": list(a.shape),
                         "dtype": "float64"}
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = {"kind": kind, "meta": meta, "arrays": entries, "payload_bytes": offset}
    blob = json.dumps(header, sort_keys=True, allow_nan=False).encode("utf-8")
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
            fh.write(blob)
            for c in chunks:
                fh.write(c)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def read_container(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise CorruptError("file too short for a container prefix")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"container version {version} is not supported (expected {FORMAT_VERSION})")
    start = _PREFIX.size + hlen
    if start > len(raw):
        raise CorruptError("truncated header")
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
        kind, meta, entries = header["kind"], header["meta"], header["arrays"]
        declared = int(header["payload_bytes"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptError(f"unreadable header: {exc}") from exc
    payload = memoryview(raw)[start:]
    if len(payload) < declared:
        raise CorruptError(f"truncated payload: {len(payload)} of {declared} bytes")
    if len(payload) != declared:
        raise CorruptError(f"payload has {len(payload)} bytes but the header declares {declared}")

    arrays, spans = {}, []
    for name, e in entries.items():
        try:
            off, length, shape = int(e["offset"]), int(e["length"]), tuple(int(s) for s in e["shape"])
            dtype = e["dtype"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptError(f"bad entry for array {name!r}") from exc
        if dtype != "float64" or off < 0 or length < 0 or int(np.prod(shape)) != length:
            raise CorruptError(f"inconsistent entry for array {name!r}")
        end = off + 8 * length
        if end > declared:
            raise CorruptError(f"array {name!r} runs past the payload")
        spans.append((off, end, name))
        arrays[name] = np.frombuffer(payload[off:end], dtype=_LE).astype(np.float64).reshape(shape)
    spans.sort()
    for (_, end_a, a), (off_b, _, b) in zip(spans, spans[1:]):
        if off_b < end_a:
            raise CorruptError(f"arrays {a!r} and {b!r} overlap")
    if sum(e - o for o, e, _ in spans) != declared:
        raise CorruptError("payload bytes not accounted for by the header")
    return kind, meta, arrays


# -- object encoders --------------------------------------------------------------


def _model_parts(model: MacawModel, prefix: str = "") -> tuple[dict, dict[str, np.ndarray]]:
    ms = model.layers[0].mask_set
    meta = {
        "names": list(model.names),
        "adjacency": model.dag.adjacency.astype(int).tolist(),
        "priors": [p.to_dict() for p in model.priors],
        "num_layers": len(model.layers),
        "hidden_multiple": ms.hidden_multiple,
        "num_hidden_layers": ms.num_hidden_layers,
        "s_cap": model.layers[0].s_cap,
        "freeze_sources": model.freeze_sources,
        "metadata": model.metadata,
    }
    arrays = {prefix + "norm_mean": model.norm_stats[0], prefix + "norm_std": model.norm_stats[1]}
    for k, layer in enumerate(model.layers):
        for q, p in enumerate(layer.params()):
            arrays[f"{prefix}layer{k}.p{q}"] = p
    return meta, arrays


def _model_from(meta: dict, arrays: dict, prefix: str = "") -> MacawModel:
    dag = validate_dag(meta["names"], np.asarray(meta["adjacency"]))
    masks = build_masks(dag, int(meta["hidden_multiple"]), int(meta["num_hidden_layers"]))
    layers = []
    for k in range(int(meta["num_layers"])):
        layer = CMade(masks, dag.sources, s_cap=float(meta["s_cap"]),
                      freeze_sources=bool(meta["freeze_sources"]))
        n = len(layer.params())
        try:
            values = [arrays[f"{prefix}layer{k}.p{q}"] for q in range(n)]
        except KeyError as exc:
            raise CorruptError(f"missing array {exc}") from exc
        for v, ref in zip(values, layer.params()):
            if v.shape != ref.shape:
                raise CorruptError(f"layer {k} array shape {v.shape} != {ref.shape}")
        layer.set_params([v.copy() for v in values])
        layers.append(layer)
    priors = [Prior.from_dict(d) for d in meta["priors"]]
    stats = (arrays[prefix + "norm_mean"], arrays[prefix + "norm_std"])
    return MacawModel(dag, layers, priors, stats, meta["metadata"])


def _codec_parts(codec: LatentCodec) -> tuple[dict, dict]:
    meta = codec.meta()
    arrays = {k: getattr(codec, k) for k in ("anchors", "col_mean", "eigvecs", "eigvals",
                                             "anchor_scores", "latent_mean", "latent_std",
                                             "preimage_coef")}
    return meta, arrays


def _codec_from(meta: dict, arrays: dict) -> LatentCodec:
    return LatentCodec(
        anchors=arrays["anchors"], kernel=KernelParams(**meta["kernel"]),
        col_mean=arrays["col_mean"], grand_mean=float(meta["grand_mean"]),
        eigvecs=arrays["eigvecs"], eigvals=arrays["eigvals"], anchor_scores=arrays["anchor_scores"],
        latent_mean=arrays["latent_mean"], latent_std=arrays["latent_std"],
        preimage_kernel=KernelParams(**meta["preimage_kernel"]),
        preimage_coef=arrays["preimage_coef"], ridge=float(meta["ridge"]),
        recon_mse=float(meta["recon_mse"]),
    )


def save_model(obj, path: str | Path) -> None:
    """Persist a MacawModel, GroupedModel, LatentCodec, ImageRecord or ScmTable."""
    if isinstance(obj, MacawModel):
        meta, arrays = _model_parts(obj)
        kind = "macaw_model"
    elif isinstance(obj, GroupedModel):
        kind, arrays = "grouped_model", {}
        meta = {"shared_names": list(obj.shared_names), "block_size": obj.block_size,
                "metadata": obj.metadata, "groups": []}
        for g, model in enumerate(obj.groups):
            m, a = _model_parts(model, prefix=f"g{g}.")
            meta["groups"].append(m)
            arrays.update(a)
    elif isinstance(obj, LatentCodec):
        meta, arrays = _codec_parts(obj)
        kind = "latent_codec"
    elif isinstance(obj, ImageRecord):
        kind = "image_record"
        meta = {"spec": obj.spec.to_dict(), "row_seeds": [int(s) for s in obj.row_seeds]}
        arrays = obj.arrays()
    elif isinstance(obj, ScmTable):
        kind = "scm_table"
        meta = {"variant": obj.variant}
        arrays = {"data": obj.data, "noise": obj.noise}
    else:
        raise TypeError(f"cannot persist objects of type {type(obj).__name__}")
    write_container(path, kind, meta, arrays)


def load_model(path: str | Path):
    kind, meta, arrays = read_container(path)
    try:
        if kind == "macaw_model":
            return _model_from(meta, arrays)
        if kind == "grouped_model":
            groups = [_model_from(m, arrays, prefix=f"g{g}.") for g, m in enumerate(meta["groups"])]
            return GroupedModel(tuple(meta["shared_names"]), groups, int(meta["block_size"]),
                                meta["metadata"])
        if kind == "latent_codec":
            return _codec_from(meta, arrays)
        if kind == "image_record":
            return ImageRecord(arrays["age"], arrays["sex"], arrays["bmi_eps"], arrays["eta_out"],
                               arrays["eta_in"], arrays["phase"],
                               np.array(meta["row_seeds"], dtype=np.uint64),
                               ImageGenSpec(**meta["spec"]))
        if kind == "scm_table":
            return ScmTable(arrays["data"], arrays["noise"], meta["variant"])
    except KeyError as exc:
        raise CorruptError(f"container is missing {exc}") from exc
    raise CorruptError(f"unknown container kind {kind!r}")
