"""Inverse problems with a learned compressor as the prior.

The solver runs plain gradient descent on

    J(f) = 1/2 ||T f - q||^2 + mu/2 ||f - h(f)||^2 + mu'/2 ||grad f||^2,

treating the compress-decompress map h as locally constant (its gradient is
taken to be zero), so the prior term pulls every iterate toward something
the codec can represent. The smoothness term only makes sense for images
and uses the 5-point Laplacian with reflective boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericalError
from .numerics import make_rng, power_iteration

__all__ = [
    "Compressor", "model_compressor", "InverseProblem", "SolveTrace",
    "solve", "make_cs_problem", "laplacian", "denoise_by_reconstruction",
]

INIT_MODES = ("pseudo_inverse", "adjoint", "custom")


@dataclass
class Compressor:
    """Black-box compress-then-decompress map at a fixed rate."""

    fn: Callable[[np.ndarray], np.ndarray]
    rate: float | str = "unspecified"
    model: object | None = None

    def __call__(self, f: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(f), dtype=np.float64)
        if out.shape != np.shape(f):
            raise ValueError("compressor changed the vector shape")
        return out


def model_compressor(model, rate: float | str = "unspecified") -> Compressor:
    """Wrap a trained coder (anything with encode/decode) as a Compressor
    usable on single vectors or column batches."""

    def roundtrip(f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        if f.ndim == 1:
            return model.decode(model.encode(f[:, None]))[:, 0]
        return model.decode(model.encode(f))

    return Compressor(fn=roundtrip, rate=rate, model=model)


@dataclass
class InverseProblem:
    """q = T f + noise, plus the solver configuration."""

    matrix: np.ndarray                  # (l, n)
    observation: np.ndarray             # (l,)
    noise2: float = 0.0                 # metadata only
    mu: float = 0.0                     # compressibility weight
    mu_sobolev: float = 0.0             # smoothness weight (images only)
    tau: float | None = None            # None -> 0.9 / lambda_max estimate
    max_iter: int = 500
    tol: float = 1e-6
    init: str = "pseudo_inverse"
    init_vector: np.ndarray | None = None
    grid_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.observation = np.asarray(self.observation, dtype=np.float64)
        if self.matrix.ndim != 2 or self.observation.shape != (self.matrix.shape[0],):
            raise ValueError("observation length must match matrix rows")
        if min(self.mu, self.mu_sobolev) < 0:
            raise ValueError("prior weights must be non-negative")
        if self.tau is not None and self.tau < 0:
            raise ValueError("step size must be non-negative")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")
        if self.init == "custom" and self.init_vector is None:
            raise ValueError("custom init needs init_vector")
        if self.mu_sobolev > 0 and self.grid_shape is None:
            raise ValueError("the smoothness prior needs grid_shape")


def laplacian(grid: np.ndarray) -> np.ndarray:
    """5-point discrete Laplacian with reflective (edge-replicated)
    boundaries; zero on constants everywhere and on ramps away from the
    border."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("laplacian expects a 2-D grid")
    padded = np.pad(grid, 1, mode="edge")
    return (padded[:-2, 1:-1] + padded[2:, 1:-1]
            + padded[1:-1, :-2] + padded[1:-1, 2:] - 4.0 * grid)


def _initial_iterate(p: InverseProblem) -> np.ndarray:
    if p.init == "pseudo_inverse":
        return np.linalg.pinv(p.matrix) @ p.observation
    if p.init == "adjoint":
        return p.matrix.T @ p.observation
    return np.asarray(p.init_vector, dtype=np.float64).copy()


def _default_tau(p: InverseProblem, rng) -> float:
    gram = p.matrix.T @ p.matrix
    top = power_iteration(gram, rng=rng)
    return 0.9 / (top + p.mu + 4.0 * p.mu_sobolev)


@dataclass
class SolveTrace:
    """Per-iterate history: the descent objective, and the mean squared
    error against a reference signal when one was supplied."""

    objective: np.ndarray
    mse: np.ndarray | None = None

    def __len__(self) -> int:
        return self.objective.size


def solve(p: InverseProblem, h: Compressor | Callable | None = None,
          rng=None, reference: np.ndarray | None = None,
          ) -> tuple[np.ndarray, SolveTrace]:
    """Gradient-descent recovery; returns the final iterate and a
    :class:`SolveTrace` (one entry per evaluated iterate, the initial one
    included).

    h is called exactly once per iteration. Stops on relative objective
    change below ``tol`` or at ``max_iter``; raises
    :class:`~terncode.errors.NumericalError` if the objective ever exceeds
    ten times its starting value.
    """
    if p.mu > 0 and h is None:
        raise ValueError("mu > 0 requires a compressor")
    rng = make_rng(rng)
    mat, q = p.matrix, p.observation
    f = _initial_iterate(p)
    tau = _default_tau(p, rng) if p.tau is None else p.tau
    if reference is not None:
        reference = np.asarray(reference, dtype=np.float64)

    def split_objective(vec, compressed):
        resid = mat @ vec - q
        obj = 0.5 * float(resid @ resid)
        if p.mu > 0:
            diff = vec - compressed
            obj += 0.5 * p.mu * float(diff @ diff)
        neg_lap = None
        if p.mu_sobolev > 0:
            neg_lap = -laplacian(vec.reshape(p.grid_shape)).ravel()
            obj += 0.5 * p.mu_sobolev * float(vec @ neg_lap)
        return obj, resid, neg_lap

    trace: list[float] = []
    errors: list[float] = []
    prev = None
    for iteration in range(p.max_iter + 1):
        compressed = h(f) if p.mu > 0 else f
        obj, resid, neg_lap = split_objective(f, compressed)
        if not np.isfinite(obj):
            raise NumericalError(
                f"objective became non-finite at iteration {iteration}")
        trace.append(obj)
        if reference is not None:
            errors.append(float(np.mean(np.square(f - reference))))
        if trace[0] > 0 and obj > 10.0 * trace[0]:
            raise NumericalError(
                f"divergence: objective {obj:.6g} exceeds 10x its initial "
                f"value {trace[0]:.6g} at iteration {iteration} "
                f"(step size tau={tau:.3g} too large?)")
        if prev is not None and abs(prev - obj) <= p.tol * max(abs(prev), 1e-30):
            break
        if iteration == p.max_iter:
            break
        prev = obj
        grad = mat.T @ resid
        if p.mu > 0:
            grad += p.mu * (f - compressed)
        if p.mu_sobolev > 0:
            grad += p.mu_sobolev * neg_lap
        f = f - tau * grad
    return f, SolveTrace(objective=np.asarray(trace),
                         mse=np.asarray(errors) if reference is not None
                         else None)


def make_cs_problem(n: int, l: int, noise2: float, rng=None,
                    f_true: np.ndarray | None = None,
                    **problem_kwargs) -> InverseProblem:
    """Compressive-sensing setup: a fat i.i.d. N(0, 1/l) sampling matrix
    and a noisy observation of ``f_true``."""
    if l > n:
        raise ValueError("need l <= n for a compressive matrix")
    rng = make_rng(rng)
    if f_true is None:
        f_true = rng.standard_normal(n)
    f_true = np.asarray(f_true, dtype=np.float64)
    mat = rng.standard_normal((l, n)) / np.sqrt(l)
    q = mat @ f_true
    if noise2 > 0:
        q = q + np.sqrt(noise2) * rng.standard_normal(l)
    return InverseProblem(matrix=mat, observation=q, noise2=noise2,
                          **problem_kwargs)


def denoise_by_reconstruction(noisy: np.ndarray, clean: np.ndarray, model,
                              layers: range | list | None = None,
                              peak: float | None = None):
    """Reconstruct noisy columns at growing layer depth and score each
    depth against the clean reference.

    Returns (layer_counts, mse, psnr). Greedy residual coding means the
    depth-l reconstruction is the l-layer prefix of the full encoding, so
    the model encodes once.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if noisy.shape != clean.shape:
        raise ValueError("noisy and clean sets must have the same shape")
    codes = model.encode(noisy)
    total = len(codes)
    counts = list(layers) if layers is not None else list(range(1, total + 1))
    if any(not 1 <= c <= total for c in counts):
        raise ValueError("layer sweep outside the trained depth")
    if peak is None:
        peak = float(np.max(np.abs(clean)))
    mse = np.empty(len(counts))
    for i, depth in enumerate(counts):
        recon = model.decode(codes[:depth])
        mse[i] = float(np.mean(np.square(recon - clean)))
    with np.errstate(divide="ignore"):
        psnr = 10.0 * np.log10(peak * peak / mse)
    return np.asarray(counts), mse, psnr
