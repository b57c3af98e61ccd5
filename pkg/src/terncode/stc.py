"""Sparse ternary codes.

A layer projects data onto the eigenbasis of its training covariance and
keeps only the signs of large projections: x = ternarize(A f). Decoding is
the weighted back-projection A^T (x * beta), where the per-dimension weight
beta has a closed form under the Gaussian model and is what turns a cheap
sign code into a quantizer with controllable distortion. Stacking layers on
successive residuals (ML-STC) covers arbitrary rates; the Procrustean
variant re-fits the projection itself by alternating with an orthogonal
Procrustes step.

Codes are dense int8 arrays over {-1, 0, +1}; weights stay in the model and
are applied at decode time only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .info import ternary_entropy
from .numerics import (_fix_signs, make_rng, normalized_distortion,
                       q_function, svd, sym_eig)

__all__ = [
    "ternarize", "hard_threshold", "soft_threshold", "k_best",
    "optimal_beta", "stc_distortion_per_dim", "stc_rate_upper_bound",
    "StcLayer", "train_stc_layer", "train_stc_procrustean",
    "MlStc", "train_ml_stc",
]

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def ternarize(v, lam: float) -> np.ndarray:
    """sign(v) where |v| > lam, else 0; int8 in {-1, 0, +1}."""
    if lam < 0:
        raise ValueError("threshold must be non-negative")
    v = np.asarray(v)
    return np.where(np.abs(v) > lam, np.sign(v), 0.0).astype(np.int8)


def hard_threshold(v, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("threshold must be non-negative")
    v = np.asarray(v, dtype=np.float64)
    return np.where(np.abs(v) > lam, v, 0.0)


def soft_threshold(v, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("threshold must be non-negative")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def k_best(v, k: int) -> np.ndarray:
    """Keep the k largest-magnitude entries per column, zero the rest.

    Ties broken toward the lower index (stable sort on magnitude).
    """
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    arr = v[:, None] if single else v
    if not 0 <= k <= arr.shape[0]:
        raise ValueError(f"k must be in [0, {arr.shape[0]}]")
    out = np.zeros_like(arr)
    if k > 0:
        order = np.argsort(-np.abs(arr), axis=0, kind="stable")[:k]
        np.put_along_axis(out, order,
                          np.take_along_axis(arr, order, axis=0), axis=0)
    return out[:, 0] if single else out


def optimal_beta(sigma, lam: float):
    """Decode weight minimizing E[(F - beta * ternarize(F, lam))^2] for
    F ~ N(0, sigma^2):

        beta* = sigma * exp(-lam^2 / 2 sigma^2) / (sqrt(2 pi) Q(lam/sigma)).

    At lam = 0 this is the binary-quantizer level sigma * sqrt(2/pi).
    Dimensions with sigma <= 0 get weight 0.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    out = np.zeros_like(sigma)
    pos = sigma > 0
    t = np.divide(lam, sigma, out=np.zeros_like(sigma), where=pos)[pos]
    q = q_function(t)
    num = np.exp(-0.5 * t * t)
    safe = q > 0
    val = np.empty_like(t)
    val[safe] = num[safe] / (_SQRT_2PI * q[safe])
    # Far tail: Q underflows; the Mills-ratio asymptote keeps it finite.
    val[~safe] = t[~safe] + 1.0 / t[~safe]
    out[pos] = sigma[pos] * val
    return float(out) if out.ndim == 0 else out


def stc_distortion_per_dim(sigma, lam: float, beta=None):
    """Per-dimension expected distortion of the weighted ternary quantizer:

        D = sigma^2 + 2 beta^2 Q(lam/sigma)
            - (4 beta sigma / sqrt(2 pi)) exp(-lam^2 / 2 sigma^2).

    ``beta=None`` plugs in :func:`optimal_beta`.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    scalar = sigma.ndim == 0
    sig = np.atleast_1d(sigma)
    if beta is None:
        beta = optimal_beta(sig, lam)
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), sig.shape)
    out = np.square(sig)
    pos = sig > 0
    t = np.divide(lam, sig, out=np.zeros_like(out), where=pos)[pos]
    b = beta[pos]
    s = sig[pos]
    contrib = (2.0 * b * b * q_function(t)
               - (4.0 * b * s / _SQRT_2PI) * np.exp(-0.5 * t * t))
    out[pos] = s * s + contrib
    return float(out[0]) if scalar else out


def stc_rate_upper_bound(alphas) -> float:
    """Mean per-dimension code entropy (1/n) sum_j H_ternary(alpha_j), an
    upper bound on the code rate in bits per dimension. Tops out at
    log2(3) when every alpha_j = 1/3."""
    return float(np.mean(ternary_entropy(np.asarray(alphas, dtype=np.float64))))


# ---------------------------------------------------------------------------

@dataclass
class StcLayer:
    """One trained encode/decode stage.

    Exactly one of ``lam`` / ``k`` is set: a fixed ternarization threshold,
    or per-sample k-largest selection. ``weights`` are the decode-side
    multipliers; codes themselves stay pure ternary.
    """

    basis: np.ndarray                # (m, n), orthonormal rows when m = n
    weights: np.ndarray              # (m,)
    lam: float | None
    k: int | None
    alphas: np.ndarray               # per-dim P(symbol = +1)
    projected_variances: np.ndarray  # (m,)
    train_distortion: float = np.nan

    def project(self, f: np.ndarray) -> np.ndarray:
        return self.basis @ f

    def encode(self, f: np.ndarray) -> np.ndarray:
        proj = self.basis @ np.asarray(f, dtype=np.float64)
        if self.lam is not None:
            return ternarize(proj, self.lam)
        return np.sign(k_best(proj, self.k)).astype(np.int8)

    def decode(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes)
        w = self.weights[:, None] if codes.ndim == 2 else self.weights
        return self.basis.T @ (codes * w)


def _check_policy(lam, k):
    if (lam is None) == (k is None):
        raise ValueError("specify exactly one of lam (fixed threshold) "
                         "or k (k-best selection)")
    if lam is not None and lam < 0:
        raise ValueError("lam must be non-negative")
    if k is not None and k < 0:
        raise ValueError("k must be non-negative")


def _covariance_eig(f: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-m eigenpairs of the (N-1)-normalized second-moment matrix.

    For n > N the n x n matrix is rank-deficient and the same spectrum
    comes cheaper from the N x N Gram matrix; missing directions are filled
    from the orthogonal complement with zero variance.
    """
    n, count = f.shape
    denom = max(count - 1, 1)
    if n <= count:
        w, v = sym_eig(f @ f.T / denom)
        return np.maximum(w[:m], 0.0), v[:, :m]
    gram = f.T @ f / denom
    w, vg = sym_eig(gram)
    w = np.maximum(w, 0.0)
    keep = min(m, count)
    u = f @ vg[:, :keep]
    norms = np.linalg.norm(u, axis=0)
    good = norms > n * 1e-14 * max(norms.max(), 1.0)
    u = u[:, good] / norms[good]
    u = _fix_signs(u)
    vals = w[:keep][good]
    if u.shape[1] < m:
        comp_w, comp_v = sym_eig(np.eye(n) - u @ u.T)
        fill = comp_v[:, :m - u.shape[1]]
        u = np.hstack([u, fill])
        vals = np.concatenate([vals, np.zeros(m - vals.size)])
    return vals, u


def _kbest_weights(proj: np.ndarray, codes: np.ndarray):
    """Least-squares decode weights for k-best codes: the conditional mean
    of |projection| given that the dimension was selected."""
    sel = codes != 0
    counts = sel.sum(axis=1)
    sums = np.sum(np.abs(proj) * sel, axis=1)
    weights = np.divide(sums, counts, out=np.zeros(proj.shape[0]),
                        where=counts > 0)
    alphas = counts / (2.0 * proj.shape[1])
    return weights, alphas


def train_stc_layer(f: np.ndarray, lam: float | None = None,
                    k: int | None = None, m: int | None = None) -> StcLayer:
    """Fit a single layer: PCA basis, then decode weights per policy.

    With the fixed-lam policy the weights and sparsities come from the
    Gaussian closed forms at the estimated projected variances; with k-best
    they are empirical conditional means on the training batch.
    """
    _check_policy(lam, k)
    n, count = f.shape
    m = n if m is None else m
    if not 1 <= m <= n:
        raise ValueError("need 1 <= m <= n")
    vals, vecs = _covariance_eig(f, m)
    sigmas = np.sqrt(vals)
    basis = vecs.T
    proj = basis @ f
    if lam is not None:
        weights = optimal_beta(sigmas, lam)
        alphas = np.where(sigmas > 0,
                          q_function(np.divide(lam, sigmas,
                                               out=np.full_like(sigmas, np.inf),
                                               where=sigmas > 0)),
                          0.0)
        codes = ternarize(proj, lam)
    else:
        codes = np.sign(k_best(proj, k)).astype(np.int8)
        weights, alphas = _kbest_weights(proj, codes)
    layer = StcLayer(basis=basis, weights=weights, lam=lam, k=k,
                     alphas=alphas, projected_variances=vals)
    layer.train_distortion = normalized_distortion(f, layer.decode(codes))
    return layer


def train_stc_procrustean(f: np.ndarray, lam: float | None = None,
                          k: int | None = None, max_iter: int = 50,
                          tol: float = 1e-7) -> StcLayer:
    """Alternate decode-weight updates with orthogonal Procrustes updates
    of the square basis.

    For frozen codes and weights the basis update A <- U' V'^T (from the
    SVD of the weighted-code/data cross matrix) is the global minimizer of
    the reconstruction error over orthonormal A, so the surrogate objective
    never increases. Stops when its relative improvement drops below
    ``tol``.
    """
    _check_policy(lam, k)
    n, count = f.shape
    layer = train_stc_layer(f, lam=lam, k=k, m=n)
    basis = layer.basis
    prev = None
    for _ in range(max_iter):
        proj = basis @ f
        if lam is not None:
            codes = ternarize(proj, lam)
            sig = np.sqrt(np.mean(np.square(proj), axis=1))
            weights = optimal_beta(sig, lam)
        else:
            codes = np.sign(k_best(proj, k)).astype(np.int8)
            weights, _ = _kbest_weights(proj, codes)
        weighted = codes * weights[:, None]
        u, _, vt = svd(weighted @ f.T)
        basis = u @ vt
        surrogate = normalized_distortion(f, basis.T @ weighted)
        if prev is not None and prev - surrogate <= tol * max(prev, 1e-30):
            break
        prev = surrogate

    proj = basis @ f
    if lam is not None:
        codes = ternarize(proj, lam)
        sig = np.sqrt(np.mean(np.square(proj), axis=1))
        weights = optimal_beta(sig, lam)
        alphas = np.where(sig > 0,
                          q_function(np.divide(lam, sig,
                                               out=np.full_like(sig, np.inf),
                                               where=sig > 0)),
                          0.0)
        variances = np.square(sig)
    else:
        codes = np.sign(k_best(proj, k)).astype(np.int8)
        weights, alphas = _kbest_weights(proj, codes)
        variances = np.mean(np.square(proj), axis=1)
    out = StcLayer(basis=basis, weights=weights, lam=lam, k=k,
                   alphas=alphas, projected_variances=variances)
    out.train_distortion = normalized_distortion(f, out.decode(codes))
    return out


@dataclass
class MlStc:
    """Residual stack of :class:`StcLayer`. Codes are computed greedily
    layer by layer, so decoding a prefix of the layers equals encoding with
    that shallower model (successive refinement)."""

    layers: list[StcLayer]
    train_distortions: np.ndarray   # (L,), normalized, after each layer
    kind: str = "mlstc"

    @property
    def depth(self) -> int:
        return len(self.layers)

    def encode(self, f: np.ndarray, layers: int | None = None) -> list[np.ndarray]:
        f = np.asarray(f, dtype=np.float64)
        resid = f.copy()
        out = []
        for layer in self.layers[:layers]:
            codes = layer.encode(resid)
            out.append(codes)
            resid -= layer.decode(codes)
        return out

    def decode(self, codes: list[np.ndarray],
               up_to_layer: int | None = None) -> np.ndarray:
        if up_to_layer is None:
            up_to_layer = len(codes)
        if up_to_layer > len(codes):
            raise ValueError("up_to_layer exceeds available code layers")
        n = self.layers[0].basis.shape[1]
        cols = codes[0].shape[1] if codes and codes[0].ndim == 2 else None
        shape = (n,) if cols is None else (n, cols)
        out = np.zeros(shape)
        for layer, x in zip(self.layers[:up_to_layer], codes[:up_to_layer]):
            out += layer.decode(x)
        return out

    def reconstruct(self, f: np.ndarray, layers: int | None = None) -> np.ndarray:
        return self.decode(self.encode(f, layers))

    def rate_bounds(self) -> np.ndarray:
        """Per-layer entropy bound in bits per dimension."""
        return np.array([stc_rate_upper_bound(l.alphas) for l in self.layers])


def train_ml_stc(f: np.ndarray, layers: int, lam: float | None = None,
                 k: int | None = None, m: int | None = None,
                 procrustean: bool = False, max_iter: int = 50,
                 tol: float = 1e-7) -> MlStc:
    """Train ``layers`` stages, each on the residual left by the previous
    ones; the covariance (hence basis) is re-estimated per stage."""
    _check_policy(lam, k)
    if f.shape[1] < 2:
        raise ValueError("need at least 2 training samples")
    resid = np.array(f, dtype=np.float64, copy=True)
    total = float(np.sum(np.square(f)))
    fitted: list[StcLayer] = []
    dist = []
    for _ in range(layers):
        if procrustean:
            layer = train_stc_procrustean(resid, lam=lam, k=k,
                                          max_iter=max_iter, tol=tol)
        else:
            layer = train_stc_layer(resid, lam=lam, k=k, m=m)
        codes = layer.encode(resid)
        resid -= layer.decode(codes)
        fitted.append(layer)
        dist.append(float(np.sum(np.square(resid))) / total)
    return MlStc(layers=fitted, train_distortions=np.asarray(dist),
                 kind="mlstc_proc" if procrustean else "mlstc")
