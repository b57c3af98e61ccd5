"""Synthetic Gaussian sources, vector-file IO and whitening transforms.

Arrays follow the column convention used throughout the package: a dataset
``F`` has shape ``(n, N)`` with one sample per column. The on-disk fvecs /
bvecs formats keep their conventional row-per-vector layout; transpose at
the boundary.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .errors import DataFormatError
from .numerics import make_rng, sym_eig

__all__ = [
    "generate", "ar1_covariance", "var_decay_variances",
    "load_fvecs", "save_fvecs", "load_bvecs", "save_bvecs",
    "PcaWhitener", "fit_pca_whitener",
    "DctSubbandWhitener", "fit_dct_subband_whitener", "zigzag_indices",
]

SOURCE_KINDS = ("iid_gaussian", "ar1", "var_decay")


def var_decay_variances(n: int, decay: float = 0.01) -> np.ndarray:
    """Variance profile exp(-decay * j), j = 1..n."""
    return np.exp(-decay * np.arange(1, n + 1))


def ar1_covariance(n: int, rho: float, sigma2: float = 1.0) -> np.ndarray:
    """Covariance matrix sigma2 * rho^|i-j| of the stationary AR(1) source."""
    idx = np.arange(n)
    return sigma2 * rho ** np.abs(idx[:, None] - idx[None, :])


def generate(kind: str, n: int, count: int, rng, *, rho: float = 0.9,
             sigma2: float = 1.0, decay: float = 0.01) -> np.ndarray:
    """Draw ``count`` samples of an n-dimensional synthetic source.

    Kinds: ``iid_gaussian`` (N(0, sigma2) entries), ``ar1`` (stationary
    first-order autoregressive process with correlation ``rho``, sampled by
    the O(n) recursion f_j = rho f_{j-1} + sqrt(1-rho^2) w_j so the
    covariance is exactly Toeplitz sigma2 * rho^|i-j|) and ``var_decay``
    (independent entries with variances exp(-decay j)). Returns (n, count).
    """
    rng = make_rng(rng)
    if n <= 0 or count <= 0:
        raise ValueError("n and count must be positive")
    if kind == "iid_gaussian":
        return np.sqrt(sigma2) * rng.standard_normal((n, count))
    if kind == "ar1":
        if not 0.0 <= rho < 1.0:
            raise ValueError("ar1 needs rho in [0, 1)")
        w = rng.standard_normal((n, count))
        f = np.empty((n, count))
        f[0] = np.sqrt(sigma2) * w[0]
        c = np.sqrt(sigma2 * (1.0 - rho * rho))
        for j in range(1, n):
            f[j] = rho * f[j - 1] + c * w[j]
        return f
    if kind == "var_decay":
        std = np.sqrt(var_decay_variances(n, decay))
        return std[:, None] * rng.standard_normal((n, count))
    raise ValueError(f"unknown source kind {kind!r}; expected one of {SOURCE_KINDS}")


# ---------------------------------------------------------------------------
# fvecs / bvecs: one record per vector, little-endian int32 dimension header.
# In memory the package keeps vectors in columns, so loaders return (dim,
# count) and savers take the same.

def _load_records(path: str, payload_dtype, name: str) -> np.ndarray:
    if not os.path.exists(path):
        raise DataFormatError(f"{name} file not found: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        return np.empty((0, 0), dtype=np.float64)
    if raw.size < 4:
        raise DataFormatError(f"truncated {name} file: {path}")
    dim = int(raw[:4].view(np.dtype("<i4"))[0])
    if dim <= 0:
        raise DataFormatError(f"bad dimension header {dim} in {path}")
    itemsize = np.dtype(payload_dtype).itemsize
    rec = 4 + dim * itemsize
    if raw.size % rec != 0:
        raise DataFormatError(
            f"file size {raw.size} is not a multiple of the {rec}-byte "
            f"record in {path}")
    rows = raw.reshape(-1, rec)
    headers = rows[:, :4].copy().view(np.dtype("<i4")).ravel()
    if not np.all(headers == dim):
        raise DataFormatError(f"inconsistent dimension headers in {path}")
    payload = rows[:, 4:].copy().view(np.dtype(payload_dtype).newbyteorder("<"))
    return payload.astype(np.float64).T


def load_fvecs(path: str) -> np.ndarray:
    """Read an fvecs file into a float64 array; vectors in columns (n, N)."""
    return _load_records(path, np.float32, "fvecs")


def load_bvecs(path: str) -> np.ndarray:
    """Read a bvecs file into a float64 array; vectors in columns (n, N)."""
    return _load_records(path, np.uint8, "bvecs")


def save_fvecs(path: str, vectors: np.ndarray) -> None:
    """Write an (n, count) array as fvecs (float32 payload, one record per
    column)."""
    if vectors.ndim != 2:
        raise ValueError("expected a 2-D (n, count) array")
    rows = np.ascontiguousarray(vectors.T, dtype=np.float32)
    count, dim = rows.shape
    out = np.empty((count, dim + 1), dtype=np.float32)
    out[:, 0] = np.full(count, dim, dtype="<i4").view(np.float32)
    out[:, 1:] = rows
    out.tofile(path)


def save_bvecs(path: str, vectors: np.ndarray) -> None:
    """Write an (n, count) array of byte values as bvecs."""
    if vectors.ndim != 2:
        raise ValueError("expected a 2-D (n, count) array")
    rows = np.ascontiguousarray(vectors.T)
    if rows.dtype != np.uint8:
        if np.any(rows < 0) or np.any(rows > 255):
            raise ValueError("bvecs payload must fit in uint8")
        rows = rows.astype(np.uint8)
    count, dim = rows.shape
    header = np.full(count, dim, dtype="<i4").view(np.uint8).reshape(count, 4)
    np.hstack([header, rows]).tofile(path)


# ---------------------------------------------------------------------------
# Whitening

@dataclass
class PcaWhitener:
    """Orthonormal decorrelating rotation fitted on a training set.

    ``transform`` maps to the eigenbasis of the training covariance (no
    variance scaling, so downstream rate allocation sees the decaying
    eigenvalue profile). Exact inverse up to floating point.
    """

    mean: np.ndarray        # (n,)
    basis: np.ndarray       # (n, n), eigenvectors in columns
    variances: np.ndarray   # (n,), descending eigenvalues

    def transform(self, f: np.ndarray) -> np.ndarray:
        return self.basis.T @ (f - self.mean[:, None])

    def inverse(self, g: np.ndarray) -> np.ndarray:
        return self.basis @ g + self.mean[:, None]


def fit_pca_whitener(f: np.ndarray) -> PcaWhitener:
    n, count = f.shape
    if count < 2:
        raise ValueError("need at least 2 samples to fit a whitener")
    mean = f.mean(axis=1)
    centered = f - mean[:, None]
    if not np.any(centered):
        raise ValueError("degenerate input: all samples identical")
    cov = (centered @ centered.T) / count
    w, v = sym_eig(cov)
    return PcaWhitener(mean=mean, basis=v, variances=np.maximum(w, 0.0))


def zigzag_indices(h: int, w: int) -> np.ndarray:
    """Flat indices of the zig-zag scan of an (h, w) grid.

    Anti-diagonals are visited in order of constant row+col; odd diagonals
    run top-right to bottom-left, matching the scan used for 2-D transform
    coefficients.
    """
    order = []
    for s in range(h + w - 1):
        js = range(max(0, s - h + 1), min(s, w - 1) + 1)
        diag = [(s - j, j) for j in js]
        if s % 2 == 1:
            diag.reverse()
        order.extend(r * w + c for r, c in diag)
    return np.asarray(order, dtype=np.int64)


@dataclass
class DctSubbandWhitener:
    """2-D DCT, zig-zag scan, then an independent PCA rotation per band.

    Suited to image ensembles too high-dimensional for one global PCA: the
    DCT concentrates energy along the scan, contiguous bands of the scan
    are roughly stationary, and each band's rotation is cheap to fit.
    Bands get floor(n/p) coefficients each, remainder to the last one.
    """

    height: int
    width: int
    scan: np.ndarray                 # zig-zag permutation, length n
    band_slices: list[tuple[int, int]]
    band_means: list[np.ndarray]
    band_bases: list[np.ndarray]     # per-band eigenvector columns
    variances: np.ndarray            # concatenated per-band eigenvalues

    def _dct_scan(self, f: np.ndarray) -> np.ndarray:
        n, count = f.shape
        imgs = f.T.reshape(count, self.height, self.width)
        coef = dctn(imgs, type=2, norm="ortho", axes=(1, 2))
        return coef.reshape(count, n).T[self.scan]

    def _unscan_idct(self, g: np.ndarray) -> np.ndarray:
        n, count = g.shape
        flat = np.empty_like(g)
        flat[self.scan] = g
        coef = flat.T.reshape(count, self.height, self.width)
        imgs = idctn(coef, type=2, norm="ortho", axes=(1, 2))
        return imgs.reshape(count, n).T

    def transform(self, f: np.ndarray) -> np.ndarray:
        g = self._dct_scan(f)
        out = np.empty_like(g)
        for (lo, hi), mu, basis in zip(self.band_slices, self.band_means,
                                       self.band_bases):
            out[lo:hi] = basis.T @ (g[lo:hi] - mu[:, None])
        return out

    def inverse(self, g: np.ndarray) -> np.ndarray:
        mid = np.empty_like(g)
        for (lo, hi), mu, basis in zip(self.band_slices, self.band_means,
                                       self.band_bases):
            mid[lo:hi] = basis @ g[lo:hi] + mu[:, None]
        return self._unscan_idct(mid)


def fit_dct_subband_whitener(f: np.ndarray, height: int, width: int,
                             bands: int) -> DctSubbandWhitener:
    n, count = f.shape
    if height * width != n:
        raise ValueError(f"height*width = {height * width} != n = {n}")
    if not 1 <= bands <= n:
        raise ValueError("bands must be in [1, n]")
    size = n // bands
    slices = [(i * size, (i + 1) * size) for i in range(bands - 1)]
    slices.append(((bands - 1) * size, n))
    wh = DctSubbandWhitener(height=height, width=width,
                            scan=zigzag_indices(height, width),
                            band_slices=slices, band_means=[], band_bases=[],
                            variances=np.empty(n))
    g = wh._dct_scan(f)
    for lo, hi in slices:
        band = g[lo:hi]
        mu = band.mean(axis=1)
        centered = band - mu[:, None]
        w, v = sym_eig((centered @ centered.T) / count)
        wh.band_means.append(mu)
        wh.band_bases.append(v)
        wh.variances[lo:hi] = np.maximum(w, 0.0)
    return wh
