"""terncode command line.

Every subcommand resolves its settings from, in order: schema defaults, a
flat JSON config file (--config), then explicit flags. Unknown config keys
are rejected. The resolved config and its hash are printed up front, and
the hash is stamped on every CSV row so outputs can be traced back to the
exact invocation.

Exit codes: 0 success, 2 configuration error, 3 data/file error,
4 numerical failure.

Only the standard library is imported at module scope: --threads must pin
the BLAS pool sizes before numpy loads.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

from .errors import ConfigError, DataFormatError, NumericalError

__all__ = ["main"]

_REQUIRED = object()

# key -> (type tag, default); _REQUIRED means the user must supply it.
# Tags: int, float, str, bool, list, and '?'-suffixed optional variants.
SCHEMAS: dict[str, dict] = {
    "gen": {
        "source": ("str", _REQUIRED),
        "n": ("int", _REQUIRED),
        "count": ("int", _REQUIRED),
        "out": ("str", _REQUIRED),
        "format": ("str", "fvecs"),
        "seed": ("int", 0),
        "rho": ("float", 0.9),
        "sigma2": ("float", 1.0),
        "decay": ("float", 0.01),
    },
    "train": {
        "model": ("str", _REQUIRED),
        "train": ("str", _REQUIRED),
        "out": ("str", _REQUIRED),
        "seed": ("int", 0),
        "layers": ("int", 1),
        "m": ("int", 0),
        "lam": ("float?", None),
        "k": ("int?", None),
        "mu": ("float", 1.0),
        "rate": ("float?", None),
        "active_ratio": ("float", 1.0),
        "prior_only_after": ("int", 5),
        "whiten": ("str", "none"),
    },
    "encode": {
        "model": ("str", _REQUIRED),
        "data": ("str", _REQUIRED),
        "out": ("str", _REQUIRED),
        "seed": ("int", 0),
    },
    "decode": {
        "model": ("str", _REQUIRED),
        "codes": ("str", _REQUIRED),
        "out": ("str", _REQUIRED),
        "seed": ("int", 0),
    },
    "search": {
        "model": ("str", _REQUIRED),
        "codes": ("str", _REQUIRED),
        "queries": ("str", _REQUIRED),
        "out": ("str", _REQUIRED),
        "seed": ("int", 0),
        "list_size": ("int", 10),
        "refine": ("int", 0),
        "nu_pos": ("float", 1.0),
        "nu_neg": ("float", -4.0),
        "decode_layers": ("int", 4),
    },
    "eval_rd": {
        "model": ("str", _REQUIRED),
        "train": ("str", _REQUIRED),
        "test": ("str", _REQUIRED),
        "out": ("str", _REQUIRED),
        "seed": ("int", 0),
    },
    "eval_search": {
        "model": ("str", _REQUIRED),
        "codes": ("str", _REQUIRED),
        "db": ("str", _REQUIRED),
        "queries": ("str", _REQUIRED),
        "out": ("str", _REQUIRED),
        "seed": ("int", 0),
        "top": ("int", 10),
        "relevant": ("int", 1),
        "list_size": ("int", 64),
        "refine": ("int", 0),
        "nu_pos": ("float", 1.0),
        "nu_neg": ("float", -4.0),
        "decode_layers": ("int", 4),
        "cache_dir": ("str?", None),
    },
    "infogain": {
        "out": ("str", _REQUIRED),
        "lam_x": ("float", _REQUIRED),
        "sigma2": ("float", 1.0),
        "snr_db": ("list", [0.0, 5.0, 10.0, 15.0, 20.0]),
        "grid": ("int", 101),
        "seed": ("int", 0),
    },
    "inverse": {
        "problem": ("str", _REQUIRED),
        "model": ("str?", None),
        "out_trace": ("str", _REQUIRED),
        "out_estimate": ("str", _REQUIRED),
        "seed": ("int", 0),
    },
}

PROBLEM_SCHEMA: dict = {
    "n": ("int", _REQUIRED),
    "l": ("int", _REQUIRED),
    "matrix_seed": ("int?", None),
    "matrix_path": ("str?", None),
    "q_path": ("str", _REQUIRED),
    "noise2": ("float", 0.0),
    "mu": ("float", 0.0),
    "mu_sobolev": ("float", 0.0),
    "tau": ("float?", None),
    "max_iter": ("int", 500),
    "tol": ("float", 1e-6),
    "init": ("str", "pseudo_inverse"),
    "grid_height": ("int?", None),
    "grid_width": ("int?", None),
}


# ---------------------------------------------------------------------------
# Config plumbing

def _coerce(key: str, tag: str, value):
    optional = tag.endswith("?")
    base = tag.rstrip("?")
    if value is None or (isinstance(value, str) and value.lower() == "null"):
        if optional:
            return None
        raise ConfigError(f"{key}: null not allowed")
    try:
        if base == "int":
            if isinstance(value, bool) or (isinstance(value, float)
                                           and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if base == "float":
            return float(value)
        if base == "str":
            return str(value)
        if base == "bool":
            if isinstance(value, str):
                if value.lower() in ("true", "1"):
                    return True
                if value.lower() in ("false", "0"):
                    return False
                raise ValueError(value)
            return bool(value)
        if base == "list":
            if isinstance(value, str):
                value = json.loads(value)
            if not isinstance(value, list):
                raise ValueError(value)
            return [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot interpret {value!r} as {tag}") from exc
    raise ConfigError(f"{key}: unknown schema tag {tag!r}")


def resolve_config(schema: dict, config_path: str | None,
                   overrides: dict) -> dict:
    resolved = {k: (None if d is _REQUIRED else d)
                for k, (_, d) in schema.items()}
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise DataFormatError(f"cannot read config: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a flat JSON object")
        for key, value in loaded.items():
            if key not in schema:
                raise ConfigError(f"unknown config key {key!r}")
            resolved[key] = _coerce(key, schema[key][0], value)
    for key, value in overrides.items():
        if value is None:
            continue
        resolved[key] = _coerce(key, schema[key][0], value)
    missing = [k for k, (_, d) in schema.items()
               if d is _REQUIRED and resolved[k] is None]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join(missing)}")
    return resolved


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True).encode("utf-8")
    return hashlib.sha256(canon).hexdigest()[:12]


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path: str, header: list[str], rows, tag: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*header, "config_hash"])
        for row in rows:
            writer.writerow([*(_fmt(v) for v in row), tag])


def _announce(command: str, cfg: dict, tag: str) -> None:
    print(json.dumps({"command": command, "config": cfg,
                      "config_hash": tag, "seed": cfg.get("seed")},
                     sort_keys=True))


# ---------------------------------------------------------------------------
# Shared model plumbing

def _load_vectors(path: str):
    from .datasets import load_bvecs, load_fvecs
    if path.endswith(".bvecs"):
        return load_bvecs(path)
    return load_fvecs(path)


def _apply_whitener(whitener, f):
    return f if whitener is None else whitener.transform(f)


def _encode_any(kind: str, model, g):
    """Code array(s) for whitened data ``g`` under any model family."""
    from . import search as se
    from . import vq
    if kind in ("kmeans", "vr_kmeans"):
        return vq.assign(g, model.codebook).astype("uint32")
    if kind in ("rq", "rrq"):
        return model.encode(g)
    if kind in ("stc", "mlstc", "mlstc_proc"):
        return model.encode(g)
    if kind == "binary_baseline":
        return se.binary_encode(model, g)
    raise ConfigError(f"cannot encode with model kind {kind!r}")


def _decode_any(kind: str, model, codes):
    import numpy as np
    if kind in ("kmeans", "vr_kmeans"):
        return model.codebook[:, np.asarray(codes, dtype=np.int64)]
    if kind in ("rq", "rrq", "stc", "mlstc", "mlstc_proc"):
        return model.decode(codes)
    if kind == "binary_baseline":
        bits = np.unpackbits(codes, axis=0, count=model.code_length)
        return model.reconstruct(bits.astype(np.float64) * 2.0 - 1.0)
    raise ConfigError(f"cannot decode with model kind {kind!r}")


def _roundtrip_any(kind: str, model, g):
    return _decode_any(kind, model, _encode_any(kind, model, g))


# ---------------------------------------------------------------------------
# Subcommand bodies

def cmd_gen(cfg: dict, tag: str) -> None:
    import numpy as np

    from .datasets import SOURCE_KINDS, generate, save_bvecs, save_fvecs
    from .numerics import make_rng
    if cfg["source"] not in SOURCE_KINDS:
        raise ConfigError(f"source must be one of {SOURCE_KINDS}")
    rng = make_rng(cfg["seed"])
    f = generate(cfg["source"], cfg["n"], cfg["count"], rng,
                 rho=cfg["rho"], sigma2=cfg["sigma2"], decay=cfg["decay"])
    if cfg["format"] == "fvecs":
        save_fvecs(cfg["out"], f)
    elif cfg["format"] == "bvecs":
        save_bvecs(cfg["out"], np.clip(np.rint(f), 0, 255))
    else:
        raise ConfigError("format must be fvecs or bvecs")


def cmd_train(cfg: dict, tag: str) -> None:
    import numpy as np

    from . import search as se
    from . import stc, vq
    from .allocation import reverse_water_fill
    from .container import MODEL_KINDS, save_model
    from .datasets import fit_pca_whitener
    from .numerics import make_rng

    kind = cfg["model"]
    if kind not in MODEL_KINDS:
        raise ConfigError(f"model must be one of {MODEL_KINDS}")
    if cfg["whiten"] not in ("none", "pca"):
        raise ConfigError("whiten must be 'none' or 'pca'")
    rng = make_rng(cfg["seed"])
    f = _load_vectors(cfg["train"])
    whitener = fit_pca_whitener(f) if cfg["whiten"] == "pca" else None
    g = _apply_whitener(whitener, f)
    m = cfg["m"]
    lam, k = cfg["lam"], cfg["k"]

    if kind == "kmeans":
        model = vq.kmeans(g, _require_m(m), rng=rng)
    elif kind == "vr_kmeans":
        if cfg["rate"] is None:
            raise ConfigError("vr_kmeans needs a rate for the variance "
                              "allocation")
        variances = np.mean(np.square(g), axis=1)
        alloc = reverse_water_fill(variances, cfg["rate"],
                                   active_ratio=cfg["active_ratio"])
        model = vq.vr_kmeans(g, _require_m(m), alloc.codeword_variances,
                             active=alloc.active, mu=cfg["mu"], rng=rng)
    elif kind == "rq":
        model = vq.rq_train(g, _require_m(m), cfg["layers"], rng=rng)
    elif kind == "rrq":
        model = vq.rrq_train(g, _require_m(m), cfg["layers"],
                             rate=cfg["rate"], active_ratio=cfg["active_ratio"],
                             mu=cfg["mu"],
                             prior_only_after=cfg["prior_only_after"], rng=rng)
    elif kind == "stc":
        model = stc.train_stc_layer(g, lam=lam, k=k, m=m or None)
    elif kind == "mlstc":
        model = stc.train_ml_stc(g, cfg["layers"], lam=lam, k=k, m=m or None)
    elif kind == "mlstc_proc":
        model = stc.train_ml_stc(g, cfg["layers"], lam=lam, k=k,
                                 procrustean=True)
    else:
        model = se.binary_baseline_train(g, _require_m(m), rng=rng)
    save_model(cfg["out"], model, whitener=whitener, seed=cfg["seed"],
               source=cfg["train"], flags={k: v for k, v in cfg.items()
                                           if k not in ("out",)})


def _require_m(m: int) -> int:
    if m < 1:
        raise ConfigError("this model family needs m >= 1")
    return m


def cmd_encode(cfg: dict, tag: str) -> None:
    from .container import load_model, save_codes
    model, whitener, meta = load_model(cfg["model"])
    f = _load_vectors(cfg["data"])
    codes = _encode_any(meta["kind"], model, _apply_whitener(whitener, f))
    save_codes(cfg["out"], codes, meta["kind"])


def cmd_decode(cfg: dict, tag: str) -> None:
    from .container import load_codes, load_model
    from .datasets import save_fvecs
    model, whitener, meta = load_model(cfg["model"])
    code_kind, codes = load_codes(cfg["codes"])
    if code_kind != meta["kind"]:
        raise DataFormatError(
            f"codes were produced by {code_kind!r}, model is {meta['kind']!r}")
    g = _decode_any(meta["kind"], model, codes)
    save_fvecs(cfg["out"], g if whitener is None else whitener.inverse(g))


def _as_mlstc(model, kind: str):
    """A single trained layer behaves as a depth-1 stack everywhere the
    search pipeline is concerned."""
    import numpy as np

    from .stc import MlStc
    if kind == "stc":
        return MlStc(layers=[model],
                     train_distortions=np.asarray([model.train_distortion]))
    return model


def cmd_search(cfg: dict, tag: str) -> None:
    from . import search as se
    from .container import load_codes, load_model
    model, whitener, meta = load_model(cfg["model"])
    kind = meta["kind"]
    code_kind, codes = load_codes(cfg["codes"])
    if code_kind != kind:
        raise DataFormatError(
            f"codes were produced by {code_kind!r}, model is {kind!r}")
    queries = _apply_whitener(whitener, _load_vectors(cfg["queries"]))
    counters = se.SearchCounters()
    rows = []

    if kind == "binary_baseline":
        if cfg["refine"] > 0:
            raise ConfigError("refine is only available for ternary models")
        qwords = se.binary_encode(model, queries)
        for qi in range(qwords.shape[1]):
            res = se.binary_search(model, codes, qwords[:, qi],
                                   cfg["list_size"], counters)
            rows += [(qi, r, int(i), float(s), res.stage)
                     for r, (i, s) in enumerate(zip(res.ids, res.scores))]
    elif kind in ("stc", "mlstc", "mlstc_proc"):
        stack = _as_mlstc(model, kind)
        code_layers = [codes] if kind == "stc" else codes
        index = se.build_index(code_layers, stack.train_distortions,
                               cfg["decode_layers"])
        qcode_layers = stack.encode(queries)
        for qi in range(queries.shape[1]):
            y_layers = [c[:, qi] for c in qcode_layers]
            res = se.aggregate_search(y_layers, index, cfg["nu_pos"],
                                      cfg["nu_neg"], cfg["list_size"],
                                      counters)
            if cfg["refine"] > 0:
                res = se.refine(queries[:, qi], res, stack, code_layers,
                                cfg["refine"], counters)
            rows += [(qi, r, int(i), float(s), res.stage)
                     for r, (i, s) in enumerate(zip(res.ids, res.scores))]
    else:
        raise ConfigError(f"search does not support model kind {kind!r}")
    write_csv(cfg["out"], ["query_id", "rank", "db_id", "score", "stage"],
              rows, tag)


def cmd_eval_rd(cfg: dict, tag: str) -> None:
    import numpy as np

    from .allocation import reverse_water_fill
    from .container import load_model
    from .numerics import normalized_distortion
    from .stc import stc_rate_upper_bound

    model, whitener, meta = load_model(cfg["model"])
    kind = meta["kind"]
    g_train = _apply_whitener(whitener, _load_vectors(cfg["train"]))
    g_test = _apply_whitener(whitener, _load_vectors(cfg["test"]))
    n = g_train.shape[0]
    variances = np.mean(np.square(g_train), axis=1)

    def slb(rate: float) -> float:
        if rate <= 0:
            return 1.0
        alloc = reverse_water_fill(variances, rate)
        return alloc.distortion / float(np.mean(variances))

    points: list[tuple[float, float, float]] = []   # (rate, train_D, test_D)
    if kind in ("kmeans", "vr_kmeans", "binary_baseline"):
        if kind == "binary_baseline":
            rate = model.code_length / n
        else:
            rate = float(np.log2(model.codebook.shape[1])) / n
        points.append((rate,
                       normalized_distortion(g_train,
                                             _roundtrip_any(kind, model, g_train)),
                       normalized_distortion(g_test,
                                             _roundtrip_any(kind, model, g_test))))
    elif kind in ("rq", "rrq"):
        per_layer = float(np.log2(model.codebooks[0].shape[1])) / n
        ctrain, ctest = model.encode(g_train), model.encode(g_test)
        for depth in range(1, model.layers + 1):
            points.append((per_layer * depth,
                           normalized_distortion(g_train,
                                                 model.decode(ctrain[:depth])),
                           normalized_distortion(g_test,
                                                 model.decode(ctest[:depth]))))
    elif kind in ("stc", "mlstc", "mlstc_proc"):
        stack = _as_mlstc(model, kind)
        ctrain, ctest = stack.encode(g_train), stack.encode(g_test)
        rate = 0.0
        for depth, layer in enumerate(stack.layers, start=1):
            rate += stc_rate_upper_bound(layer.alphas) * layer.alphas.size / n
            points.append((rate,
                           normalized_distortion(g_train,
                                                 stack.decode(ctrain[:depth])),
                           normalized_distortion(g_test,
                                                 stack.decode(ctest[:depth]))))
    else:
        raise ConfigError(f"eval_rd does not support model kind {kind!r}")

    rows = [(kind, r, dtrain, dtest, slb(r)) for r, dtrain, dtest in points]
    write_csv(cfg["out"],
              ["method", "rate_bits_per_dim", "train_D", "test_D", "slb_D"],
              rows, tag)


def cmd_eval_search(cfg: dict, tag: str) -> None:
    from . import search as se
    from .container import load_codes, load_model

    model, whitener, meta = load_model(cfg["model"])
    kind = meta["kind"]
    code_kind, codes = load_codes(cfg["codes"])
    if code_kind != kind:
        raise DataFormatError(
            f"codes were produced by {code_kind!r}, model is {kind!r}")
    db_f = _load_vectors(cfg["db"])
    queries_f = _load_vectors(cfg["queries"])
    gt = se.exact_neighbors(db_f, queries_f,
                            max(cfg["top"], cfg["relevant"]),
                            cache_dir=cfg["cache_dir"])
    queries = _apply_whitener(whitener, queries_f)
    counters = se.SearchCounters()
    results = []
    if kind == "binary_baseline":
        qwords = se.binary_encode(model, queries)
        for qi in range(qwords.shape[1]):
            results.append(se.binary_search(model, codes, qwords[:, qi],
                                            cfg["list_size"], counters))
    elif kind in ("stc", "mlstc", "mlstc_proc"):
        stack = _as_mlstc(model, kind)
        code_layers = [codes] if kind == "stc" else codes
        index = se.build_index(code_layers, stack.train_distortions,
                               cfg["decode_layers"])
        qcode_layers = stack.encode(queries)
        for qi in range(queries.shape[1]):
            y_layers = [c[:, qi] for c in qcode_layers]
            res = se.aggregate_search(y_layers, index, cfg["nu_pos"],
                                      cfg["nu_neg"], cfg["list_size"],
                                      counters)
            if cfg["refine"] > 0:
                res = se.refine(queries[:, qi], res, stack, code_layers,
                                cfg["refine"], counters)
            results.append(res)
    else:
        raise ConfigError(f"eval_search does not support model kind {kind!r}")
    metrics = se.evaluate(results, list(gt.T), cfg["top"],
                          relevant_count=cfg["relevant"], counters=counters,
                          count=db_f.shape[1], dim=db_f.shape[0])
    write_csv(cfg["out"], ["metric", "value"],
              sorted(metrics.items()), tag)


def cmd_infogain(cfg: dict, tag: str) -> None:
    from .info import (binary_bsc, build_channel, coding_gain,
                       mutual_information, optimize_lambda_y, ternary_entropy)

    rows = []
    for snr_db in cfg["snr_db"]:
        noise2 = cfg["sigma2"] / (10.0 ** (snr_db / 10.0))
        lam_y, t_bits = optimize_lambda_y(cfg["sigma2"], noise2,
                                          cfg["lam_x"], grid=cfg["grid"])
        ch = build_channel(cfg["sigma2"], noise2, cfg["lam_x"], lam_y)
        h_x = float(ternary_entropy(ch.alpha_x))
        b = binary_bsc(cfg["sigma2"], noise2)
        rows.append((snr_db, noise2, cfg["lam_x"], lam_y, t_bits, h_x,
                     coding_gain(ch), b.info_bits, b.gain))
    write_csv(cfg["out"],
              ["snr_db", "noise2", "lam_x", "lam_y", "ternary_bits",
               "ternary_entropy_bits", "ternary_gain", "binary_bits",
               "binary_gain"],
              rows, tag)


def cmd_inverse(cfg: dict, tag: str) -> None:
    import numpy as np

    from .container import load_model
    from .datasets import save_fvecs
    from .inverse import Compressor, InverseProblem, solve
    from .numerics import make_rng

    try:
        with open(cfg["problem"], "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read problem spec: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"problem spec is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("problem spec must be a JSON object")
    for key in raw:
        if key not in PROBLEM_SCHEMA:
            raise ConfigError(f"unknown problem key {key!r}")
    spec = resolve_config(PROBLEM_SCHEMA, None, raw)

    n, l = spec["n"], spec["l"]
    if (spec["matrix_seed"] is None) == (spec["matrix_path"] is None):
        raise ConfigError("give exactly one of matrix_seed / matrix_path")
    if spec["matrix_path"] is not None:
        mat = _load_vectors(spec["matrix_path"]).T
        if mat.shape != (l, n):
            raise DataFormatError(
                f"matrix file has shape {mat.shape}, expected ({l}, {n})")
    else:
        mat = make_rng(spec["matrix_seed"]).standard_normal((l, n)) / np.sqrt(l)
    q = _load_vectors(spec["q_path"])
    if q.shape[0] != l or q.shape[1] < 1:
        raise DataFormatError(f"observation file must hold one column of "
                              f"length {l}")
    grid_shape = None
    if spec["grid_height"] is not None and spec["grid_width"] is not None:
        grid_shape = (spec["grid_height"], spec["grid_width"])

    problem = InverseProblem(matrix=mat, observation=q[:, 0],
                             noise2=spec["noise2"], mu=spec["mu"],
                             mu_sobolev=spec["mu_sobolev"], tau=spec["tau"],
                             max_iter=spec["max_iter"], tol=spec["tol"],
                             init=spec["init"], grid_shape=grid_shape)
    compressor = None
    if spec["mu"] > 0:
        if cfg["model"] is None:
            raise ConfigError("mu > 0 needs a compressor model")
        model, whitener, meta = load_model(cfg["model"])

        def roundtrip(vec):
            g = vec[:, None]
            if whitener is not None:
                g = whitener.transform(g)
            out = _decode_any(meta["kind"], model,
                              _encode_any(meta["kind"], model, g))
            if whitener is not None:
                out = whitener.inverse(out)
            return out[:, 0]

        compressor = Compressor(fn=roundtrip, rate=meta["kind"], model=model)
    estimate, trace = solve(problem, compressor, rng=make_rng(cfg["seed"]))
    save_fvecs(cfg["out_estimate"], estimate[:, None])
    write_csv(cfg["out_trace"], ["iteration", "objective"],
              list(enumerate(trace.objective)), tag)


_HANDLERS = {
    "gen": cmd_gen, "train": cmd_train, "encode": cmd_encode,
    "decode": cmd_decode, "search": cmd_search, "eval_rd": cmd_eval_rd,
    "eval_search": cmd_eval_search, "infogain": cmd_infogain,
    "inverse": cmd_inverse,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="terncode",
        description="Sparse ternary coding toolbox: dataset generation, "
                    "model training, encoding, search and evaluation.")
    parser.add_argument("--threads", type=int, default=1,
                        help="BLAS/OpenMP thread bound (default 1, for "
                             "reproducible numerics)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None,
                        help="flat JSON config file; flags override it")
        for key in schema:
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key,
                            default=None)
    return parser


def _pin_threads(threads: int) -> None:
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(threads)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _pin_threads(args.threads)
        schema = SCHEMAS[args.command]
        overrides = {k: getattr(args, k) for k in schema}
        cfg = resolve_config(schema, args.config, overrides)
        tag = config_hash(cfg)
        _announce(args.command, cfg, tag)
        _HANDLERS[args.command](cfg, tag)
    except (ConfigError, ValueError, TypeError) as exc:
        _fail("config", exc)
        return 2
    except (DataFormatError, OSError, KeyError) as exc:
        _fail("data", exc)
        return 3
    except (NumericalError, FloatingPointError) as exc:
        _fail("numerical", exc)
        return 4
    return 0


def _fail(category: str, exc: Exception) -> None:
    print(json.dumps({"error": category,
                      "type": type(exc).__name__,
                      "message": str(exc)}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
