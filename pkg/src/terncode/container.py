"""The STCM on-disk container for models, codes and indexes.

Layout: 4-byte magic ``STCM``, uint32 version, uint64 header length, a JSON
header (kind + metadata + an ordered array manifest), then the raw array
payloads back to back. Everything multi-byte is little-endian; float arrays
are stored as 64-bit. The header is serialized with sorted keys, so saving
a loaded object reproduces the file byte for byte.

Ternary code matrices are packed at 2 bits per symbol (00 zero, 01 plus
one, 10 minus one); index posting lists are stored sorted and
delta-encoded.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .datasets import DctSubbandWhitener, PcaWhitener
from .errors import DataFormatError
from .search import BinaryBaseline, TernaryIndex
from .stc import MlStc, StcLayer
from .vq import ResidualVq, VqResult

__all__ = [
    "MAGIC", "FORMAT_VERSION", "MODEL_KINDS",
    "pack_ternary", "unpack_ternary",
    "save_blocks", "load_blocks",
    "save_model", "load_model",
    "save_codes", "load_codes",
    "save_index", "load_index",
]

MAGIC = b"STCM"
FORMAT_VERSION = 1
MODEL_KINDS = ("kmeans", "vr_kmeans", "rq", "rrq", "stc", "mlstc",
               "mlstc_proc", "binary_baseline")

_ALLOWED_DTYPES = ("<f8", "<i8", "<u4", "|i1", "|u1")


def _canonical(arr: np.ndarray) -> tuple[np.ndarray, str]:
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.int8:
        code = "|i1"
    elif arr.dtype == np.uint8:
        code = "|u1"
    elif arr.dtype == np.uint32:
        code = "<u4"
    elif np.issubdtype(arr.dtype, np.floating):
        code = "<f8"
    elif np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
        code = "<i8"
    else:
        raise DataFormatError(f"cannot serialize dtype {arr.dtype}")
    return arr.astype(code, copy=False), code


# ---------------------------------------------------------------------------
# Ternary bit packing

def pack_ternary(codes: np.ndarray) -> np.ndarray:
    """Pack a {-1, 0, +1} array into 2-bit symbols, 4 per byte."""
    flat = np.asarray(codes).ravel()
    vals = np.zeros(flat.size, dtype=np.uint8)
    vals[flat == 1] = 1
    vals[flat == -1] = 2
    if np.count_nonzero(flat) != np.count_nonzero(vals):
        raise ValueError("codes must contain only -1, 0, +1")
    pad = (-vals.size) % 4
    if pad:
        vals = np.concatenate([vals, np.zeros(pad, dtype=np.uint8)])
    quads = vals.reshape(-1, 4)
    return (quads[:, 0] | quads[:, 1] << 2
            | quads[:, 2] << 4 | quads[:, 3] << 6).astype(np.uint8)


def unpack_ternary(packed: np.ndarray, shape) -> np.ndarray:
    size = int(np.prod(shape))
    if packed.size * 4 < size:
        raise DataFormatError("packed ternary payload shorter than shape")
    vals = np.empty(packed.size * 4, dtype=np.uint8)
    vals[0::4] = packed & 3
    vals[1::4] = (packed >> 2) & 3
    vals[2::4] = (packed >> 4) & 3
    vals[3::4] = (packed >> 6) & 3
    vals = vals[:size]
    if np.any(vals == 3):
        raise DataFormatError("invalid 2-bit ternary symbol 11")
    out = np.zeros(size, dtype=np.int8)
    out[vals == 1] = 1
    out[vals == 2] = -1
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# Generic tagged-block layer

def save_blocks(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    manifest = []
    payloads = []
    for name, arr in arrays.items():
        arr, code = _canonical(arr)
        manifest.append({"name": name, "dtype": code,
                         "shape": list(arr.shape)})
        payloads.append(arr.tobytes(order="C"))
    header = json.dumps({"kind": kind, "meta": meta, "arrays": manifest},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in payloads:
            fh.write(chunk)


def load_blocks(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise DataFormatError(f"{path}: not an STCM container")
    version, = struct.unpack_from("<I", raw, 4)
    if version > FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: container version {version} newer than supported "
            f"{FORMAT_VERSION}")
    hlen, = struct.unpack_from("<Q", raw, 8)
    if 16 + hlen > len(raw):
        raise DataFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        kind, meta, manifest = header["kind"], header["meta"], header["arrays"]
    except (ValueError, KeyError) as exc:
        raise DataFormatError(f"{path}: corrupt header: {exc}") from exc
    arrays: dict[str, np.ndarray] = {}
    offset = 16 + hlen
    for spec in manifest:
        dtype = spec["dtype"]
        if dtype not in _ALLOWED_DTYPES:
            raise DataFormatError(f"{path}: illegal dtype {dtype!r}")
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape)) * np.dtype(dtype).itemsize
        if offset + nbytes > len(raw):
            raise DataFormatError(f"{path}: truncated array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(
            raw, dtype=dtype, count=int(np.prod(shape)),
            offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return kind, meta, arrays


# ---------------------------------------------------------------------------
# Whitener blocks

def _pack_whitener(whitener, meta: dict, arrays: dict) -> None:
    if whitener is None:
        meta["whitener"] = "none"
    elif isinstance(whitener, PcaWhitener):
        meta["whitener"] = "pca"
        arrays["whitener/mean"] = whitener.mean
        arrays["whitener/basis"] = whitener.basis
        arrays["whitener/variances"] = whitener.variances
    elif isinstance(whitener, DctSubbandWhitener):
        meta["whitener"] = "dct"
        meta["whitener_params"] = {
            "height": whitener.height, "width": whitener.width,
            "band_slices": [list(s) for s in whitener.band_slices]}
        arrays["whitener/scan"] = whitener.scan
        arrays["whitener/variances"] = whitener.variances
        for i, (mu, basis) in enumerate(zip(whitener.band_means,
                                            whitener.band_bases)):
            arrays[f"whitener/band{i}/mean"] = mu
            arrays[f"whitener/band{i}/basis"] = basis
    else:
        raise TypeError(f"unsupported whitener type {type(whitener)!r}")


def _unpack_whitener(meta: dict, arrays: dict):
    which = meta.get("whitener", "none")
    if which == "none":
        return None
    if which == "pca":
        return PcaWhitener(mean=arrays["whitener/mean"],
                           basis=arrays["whitener/basis"],
                           variances=arrays["whitener/variances"])
    if which == "dct":
        params = meta["whitener_params"]
        slices = [tuple(s) for s in params["band_slices"]]
        means = [arrays[f"whitener/band{i}/mean"] for i in range(len(slices))]
        bases = [arrays[f"whitener/band{i}/basis"] for i in range(len(slices))]
        return DctSubbandWhitener(height=params["height"],
                                  width=params["width"],
                                  scan=arrays["whitener/scan"],
                                  band_slices=slices, band_means=means,
                                  band_bases=bases,
                                  variances=arrays["whitener/variances"])
    raise DataFormatError(f"unknown whitener kind {which!r}")


# ---------------------------------------------------------------------------
# Models

def save_model(path, model, whitener=None, seed=None, source=None,
               flags=None) -> None:
    meta: dict = {"seed": seed, "source": source, "flags": flags or {}}
    arrays: dict[str, np.ndarray] = {}
    if isinstance(model, VqResult):
        kind = model.kind
        arrays["codebook"] = model.codebook
        arrays["objective_history"] = np.asarray(model.objective_history,
                                                 dtype=np.float64)
        meta["train_distortion"] = float(model.train_distortion)
    elif isinstance(model, ResidualVq):
        kind = model.kind
        meta["layers"] = len(model.codebooks)
        for i, cb in enumerate(model.codebooks):
            arrays[f"layer{i}/codebook"] = cb
        arrays["train_distortions"] = model.train_distortions
    elif isinstance(model, StcLayer):
        kind = "stc"
        _pack_stc_layer(model, "", arrays)
        meta["layer_params"] = [_stc_layer_meta(model)]
    elif isinstance(model, MlStc):
        kind = model.kind
        meta["layers"] = model.depth
        meta["layer_params"] = [_stc_layer_meta(l) for l in model.layers]
        for i, layer in enumerate(model.layers):
            _pack_stc_layer(layer, f"layer{i}/", arrays)
        arrays["train_distortions"] = model.train_distortions
    elif isinstance(model, BinaryBaseline):
        kind = "binary_baseline"
        arrays["projection"] = model.projection
        arrays["pinv"] = model.pinv
        meta["weight"] = float(model.weight)
    else:
        raise TypeError(f"unsupported model type {type(model)!r}")
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    _pack_whitener(whitener, meta, arrays)
    save_blocks(path, kind, meta, arrays)


def _stc_layer_meta(layer: StcLayer) -> dict:
    return {"lam": layer.lam, "k": layer.k,
            "train_distortion": float(layer.train_distortion)}


def _pack_stc_layer(layer: StcLayer, prefix: str, arrays: dict) -> None:
    arrays[prefix + "basis"] = layer.basis
    arrays[prefix + "weights"] = layer.weights
    arrays[prefix + "alphas"] = layer.alphas
    arrays[prefix + "projected_variances"] = layer.projected_variances


def _unpack_stc_layer(prefix: str, params: dict, arrays: dict) -> StcLayer:
    lam, k = params["lam"], params["k"]
    layer = StcLayer(basis=arrays[prefix + "basis"],
                     weights=arrays[prefix + "weights"],
                     lam=None if lam is None else float(lam),
                     k=None if k is None else int(k),
                     alphas=arrays[prefix + "alphas"],
                     projected_variances=arrays[prefix + "projected_variances"])
    layer.train_distortion = float(params["train_distortion"])
    return layer


def load_model(path):
    """Returns (model, whitener, meta). ``meta['kind']`` names the model
    family; training-set assignments are not round-tripped."""
    kind, meta, arrays = load_blocks(path)
    whitener = _unpack_whitener(meta, arrays)
    if kind in ("kmeans", "vr_kmeans"):
        model = VqResult(codebook=arrays["codebook"],
                         assignments=np.empty(0, dtype=np.int64),
                         objective_history=list(arrays["objective_history"]),
                         train_distortion=float(meta["train_distortion"]),
                         kind=kind)
    elif kind in ("rq", "rrq"):
        books = [arrays[f"layer{i}/codebook"] for i in range(meta["layers"])]
        model = ResidualVq(kind=kind, codebooks=books,
                           train_distortions=arrays["train_distortions"])
    elif kind == "stc":
        model = _unpack_stc_layer("", meta["layer_params"][0], arrays)
    elif kind in ("mlstc", "mlstc_proc"):
        layers = [_unpack_stc_layer(f"layer{i}/", params, arrays)
                  for i, params in enumerate(meta["layer_params"])]
        model = MlStc(layers=layers,
                      train_distortions=arrays["train_distortions"],
                      kind=kind)
    elif kind == "binary_baseline":
        model = BinaryBaseline(projection=arrays["projection"],
                               weight=float(meta["weight"]),
                               pinv=arrays["pinv"])
    else:
        raise DataFormatError(f"{path}: unknown model kind {kind!r}")
    meta = dict(meta)
    meta["kind"] = kind
    return model, whitener, meta


# ---------------------------------------------------------------------------
# Codes

def save_codes(path, codes, model_kind: str) -> None:
    """Persist encoder output: a list of ternary layers, an assignment
    matrix/vector, or packed binary words, depending on the model family."""
    meta: dict = {"model_kind": model_kind}
    arrays: dict[str, np.ndarray] = {}
    if model_kind in ("stc", "mlstc", "mlstc_proc"):
        layers = [codes] if isinstance(codes, np.ndarray) else list(codes)
        meta["layer_shapes"] = [list(c.shape) for c in layers]
        for i, c in enumerate(layers):
            arrays[f"layer{i}/packed"] = pack_ternary(c)
    elif model_kind in ("kmeans", "vr_kmeans", "rq", "rrq"):
        arrays["assignments"] = np.asarray(codes)
    elif model_kind == "binary_baseline":
        arrays["words"] = np.asarray(codes, dtype=np.uint8)
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    save_blocks(path, "codes", meta, arrays)


def load_codes(path):
    """Returns (model_kind, codes) with the same shapes given to
    :func:`save_codes`."""
    kind, meta, arrays = load_blocks(path)
    if kind != "codes":
        raise DataFormatError(f"{path}: expected a codes container, got {kind!r}")
    model_kind = meta["model_kind"]
    if model_kind in ("stc", "mlstc", "mlstc_proc"):
        shapes = meta["layer_shapes"]
        layers = [unpack_ternary(arrays[f"layer{i}/packed"], tuple(s))
                  for i, s in enumerate(shapes)]
        return model_kind, (layers[0] if model_kind == "stc" else layers)
    if model_kind in ("kmeans", "vr_kmeans", "rq", "rrq"):
        return model_kind, arrays["assignments"]
    if model_kind == "binary_baseline":
        return model_kind, arrays["words"]
    raise DataFormatError(f"{path}: unknown model kind {model_kind!r}")


# ---------------------------------------------------------------------------
# Search index

def save_index(path, index: TernaryIndex) -> None:
    meta = {"count": index.count, "layers": index.depth,
            "m": index.code_length}
    arrays: dict[str, np.ndarray] = {"weights": index.weights}
    for l in range(index.depth):
        for tag, lists in (("pos", index.pos_lists[l]),
                           ("neg", index.neg_lists[l])):
            lengths = np.array([ids.size for ids in lists], dtype=np.int64)
            if lengths.sum():
                flat = np.concatenate([ids for ids in lists if ids.size])
            else:
                flat = np.empty(0, dtype=np.int64)
            deltas = _delta_encode(flat, lengths)
            arrays[f"layer{l}/{tag}_lengths"] = lengths
            arrays[f"layer{l}/{tag}_deltas"] = deltas
    save_blocks(path, "index", meta, arrays)


def _delta_encode(flat: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """First entry of each list absolute, the rest as gaps."""
    if flat.size == 0:
        return flat.astype(np.int64)
    deltas = np.diff(flat, prepend=np.int64(0))
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    starts = starts[lengths > 0]
    deltas[starts] = flat[starts]
    return deltas.astype(np.int64)


def _delta_decode(deltas: np.ndarray, lengths: np.ndarray) -> list[np.ndarray]:
    bounds = np.cumsum(lengths)[:-1]
    return [np.cumsum(part).astype(np.int64)
            for part in np.split(deltas, bounds)]


def load_index(path) -> TernaryIndex:
    kind, meta, arrays = load_blocks(path)
    if kind != "index":
        raise DataFormatError(f"{path}: expected an index container, got {kind!r}")
    pos_lists, neg_lists = [], []
    for l in range(meta["layers"]):
        layer_sides = []
        for tag in ("pos", "neg"):
            lengths = arrays[f"layer{l}/{tag}_lengths"]
            deltas = arrays[f"layer{l}/{tag}_deltas"]
            layer_sides.append(_delta_decode(deltas, lengths))
        pos_lists.append(layer_sides[0])
        neg_lists.append(layer_sides[1])
    return TernaryIndex(pos_lists=pos_lists, neg_lists=neg_lists,
                        weights=arrays["weights"], count=meta["count"])
