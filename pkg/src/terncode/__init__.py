"""terncode: sparse ternary coding, rate allocation, residual quantization,
sub-linear ternary search, and compressibility-prior inverse problems.

Submodules and the names below load lazily so that the command-line entry
point can pin BLAS thread counts before numpy comes in.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("allocation", "cli", "container", "datasets", "errors",
               "info", "inverse", "numerics", "search", "stc", "vq")

_EXPORTS = {
    # errors
    "ConfigError": "errors", "DataFormatError": "errors",
    "NumericalError": "errors",
    # numerics
    "make_rng": "numerics", "q_function": "numerics",
    "q_function_inv": "numerics", "normalized_distortion": "numerics",
    "sym_eig": "numerics", "svd": "numerics",
    "bivariate_gaussian_rect": "numerics", "power_iteration": "numerics",
    # allocation
    "AllocationResult": "allocation", "water_level": "allocation",
    "reverse_water_fill": "allocation", "shannon_lower_bound": "allocation",
    # datasets
    "generate": "datasets", "ar1_covariance": "datasets",
    "var_decay_variances": "datasets",
    "load_fvecs": "datasets", "save_fvecs": "datasets",
    "load_bvecs": "datasets", "save_bvecs": "datasets",
    "PcaWhitener": "datasets", "fit_pca_whitener": "datasets",
    "DctSubbandWhitener": "datasets", "fit_dct_subband_whitener": "datasets",
    "zigzag_indices": "datasets",
    # vq
    "VqResult": "vq", "kmeans": "vq", "vr_kmeans": "vq", "assign": "vq",
    "ResidualVq": "vq", "rq_train": "vq", "rrq_train": "vq",
    "rq_encode": "vq", "rq_decode": "vq",
    # info
    "ternary_entropy": "info", "binary_entropy": "info",
    "TernaryChannel": "info", "build_channel": "info",
    "mutual_information": "info", "coding_gain": "info",
    "BinaryChannel": "info", "binary_bsc": "info",
    "optimize_lambda_y": "info",
    # stc
    "ternarize": "stc", "hard_threshold": "stc", "soft_threshold": "stc",
    "k_best": "stc", "optimal_beta": "stc", "stc_distortion_per_dim": "stc",
    "stc_rate_upper_bound": "stc", "StcLayer": "stc",
    "train_stc_layer": "stc", "train_stc_procrustean": "stc",
    "MlStc": "stc", "train_ml_stc": "stc",
    # search
    "TernaryIndex": "search", "SearchResult": "search",
    "SearchCounters": "search", "build_index": "search",
    "layer_vote_weights": "search", "fast_decode": "search",
    "aggregate_search": "search", "ml_decode": "search", "refine": "search",
    "BinaryBaseline": "search", "binary_baseline_train": "search",
    "binary_encode": "search", "binary_search": "search",
    "hamming_distances": "search", "average_precision": "search",
    "evaluate": "search", "exact_neighbors": "search",
    # inverse
    "Compressor": "inverse", "model_compressor": "inverse",
    "InverseProblem": "inverse", "SolveTrace": "inverse", "solve": "inverse",
    "make_cs_problem": "inverse", "laplacian": "inverse",
    "denoise_by_reconstruction": "inverse",
    # container
    "save_model": "container", "load_model": "container",
    "save_codes": "container", "load_codes": "container",
    "save_index": "container", "load_index": "container",
    "pack_ternary": "container", "unpack_ternary": "container",
    "save_blocks": "container", "load_blocks": "container",
}

__all__ = ["__version__", *_SUBMODULES, *_EXPORTS]


def __getattr__(name: str):
    if name in _EXPORTS:
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
