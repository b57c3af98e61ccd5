"""Vector quantization with 1-sparse codes.

``kmeans`` is the unstructured baseline. ``vr_kmeans`` adds a prior on the
codebook: reverse water-filling prescribes a per-dimension target variance
for the codewords, and the codebook update penalizes squared deviation of
each dimension's empirical codeword energy from that target. The penalty
decouples the update into one small problem per data dimension, solved by
Newton steps with a Sherman-Morrison inverse (the Hessian is diagonal plus
rank one).

``rq_train`` / ``rrq_train`` stack either quantizer on successive residuals
to reach rates far beyond what a single codebook can index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .allocation import reverse_water_fill
from .errors import NumericalError
from .numerics import make_rng, normalized_distortion

__all__ = [
    "assign", "kmeans", "vr_kmeans", "VqResult",
    "row_objective", "row_gradient", "row_hessian", "row_hessian_inv",
    "vr_objective",
    "ResidualVq", "rq_train", "rrq_train", "rq_encode", "rq_decode",
]


def assign(f: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the nearest codeword (squared L2) for each column of ``f``.

    Ties resolve to the lowest codeword index.
    """
    # ||f - c||^2 = ||f||^2 - 2 c.f + ||c||^2; the ||f||^2 term is constant
    # per column and can be dropped.
    scores = codebook.T @ f
    d2 = np.sum(np.square(codebook), axis=0)[:, None] - 2.0 * scores
    return np.argmin(d2, axis=0)


def _reseed_empty(f: np.ndarray, codebook: np.ndarray, idx: np.ndarray,
                  active_dims=None) -> np.ndarray:
    """Move empty clusters onto the samples worst served by the current
    codebook. Deterministic; mutates ``codebook`` and returns new ``idx``."""
    m = codebook.shape[1]
    counts = np.bincount(idx, minlength=m)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return idx
    resid = f - codebook[:, idx]
    d2 = np.sum(np.square(resid), axis=0)
    idx = idx.copy()
    # Walk samples farthest-first, skipping any whose donor cluster would be
    # emptied by the move (that would just relocate the problem).
    order = np.argsort(-d2, kind="stable")
    pos = 0
    for e in empty:
        while counts[idx[order[pos]]] < 2:
            pos += 1
        far = int(order[pos])
        pos += 1
        col = f[:, far]
        if active_dims is not None:
            col = np.where(active_dims, col, 0.0)
        codebook[:, e] = col
        counts[idx[far]] -= 1
        idx[far] = e
        counts[e] = 1
    return idx


@dataclass
class VqResult:
    codebook: np.ndarray          # (n, m)
    assignments: np.ndarray       # (N,) int
    objective_history: list[float] = field(default_factory=list)
    train_distortion: float = np.nan   # ||F - C X||^2 / ||F||^2
    kind: str = "kmeans"          # "kmeans" or "vr_kmeans"


def kmeans(f: np.ndarray, m: int, rng=None, max_iter: int = 100,
           tol: float = 1e-10, init: np.ndarray | None = None) -> VqResult:
    """Lloyd's algorithm. Initial codewords are ``m`` distinct training
    samples; empty clusters are reseeded to the farthest sample."""
    rng = make_rng(0 if rng is None else rng)
    n, count = f.shape
    if not 1 <= m <= count:
        raise ValueError(f"need 1 <= m <= N, got m={m}, N={count}")
    if init is not None:
        codebook = np.array(init, dtype=np.float64, copy=True)
    else:
        codebook = f[:, rng.choice(count, size=m, replace=False)].copy()

    history: list[float] = []
    prev = None
    idx = np.zeros(count, dtype=np.int64)
    for _ in range(max_iter):
        idx = assign(f, codebook)
        idx = _reseed_empty(f, codebook, idx)
        obj = float(np.sum(np.square(f - codebook[:, idx]))) / (2.0 * count * n)
        history.append(obj)
        for e in range(m):
            members = idx == e
            codebook[:, e] = f[:, members].mean(axis=1)
        if prev is not None and prev - obj <= tol * max(prev, 1e-30):
            break
        prev = obj
    idx = assign(f, codebook)
    return VqResult(codebook, idx, history,
                    normalized_distortion(f, codebook[:, idx]))


# ---------------------------------------------------------------------------
# Variance-regularized codebook update: one sub-problem per data dimension.
#
# For row c of the codebook (length m), with b = z/N the per-cluster means
# weighted by occupancy, zeta the cluster occupancy ratios, and
# target = m * (prescribed codeword variance for this dimension):
#
#   J(c) = -b.c + 1/2 (zeta*c).c + (mu/2) |c|^2 (|c|^2 - 2 target)
#
# The gradient and Hessian below are the exact derivatives of J; they are
# validated against finite differences in the test suite.

def row_objective(c, b, zeta, mu, target) -> float:
    s = float(c @ c)
    return float(-b @ c + 0.5 * (zeta * c) @ c + 0.5 * mu * s * (s - 2.0 * target))


def row_gradient(c, b, zeta, mu, target) -> np.ndarray:
    s = float(c @ c)
    return -b + zeta * c + 2.0 * mu * (s - target) * c


def row_hessian(c, zeta, mu, target) -> np.ndarray:
    s = float(c @ c)
    h = np.diag(zeta + 2.0 * mu * (s - target))
    h += 4.0 * mu * np.outer(c, c)
    return h


def row_hessian_inv(c, zeta, mu, target) -> np.ndarray:
    """Sherman-Morrison inverse of :func:`row_hessian`.

    With d = 1/(zeta + 2 mu (|c|^2 - target)) elementwise and u = d * c:

        H^-1 = diag(d) - 4 mu u u^T / (1 + 4 mu c.u)
    """
    s = float(c @ c)
    zp = zeta + 2.0 * mu * (s - target)
    if np.any(zp <= 0.0):
        raise NumericalError("Hessian diagonal not positive; guard violated")
    d = 1.0 / zp
    u = d * c
    denom = 1.0 + 4.0 * mu * float(c @ u)
    return np.diag(d) - (4.0 * mu / denom) * np.outer(u, u)


def _newton_row(c, b, zeta, mu, target, eta, iters, tol, rng, prior_var):
    """Minimize one row sub-problem. Re-draws the row from its prior when
    the positive-definiteness guard |c|^2 - target > -min(zeta)/(2 mu)
    fails (the Newton direction is untrustworthy there)."""
    m = c.shape[0]
    guard = -float(zeta.min()) / (2.0 * mu)
    for _ in range(iters):
        s = float(c @ c)
        if s - target <= guard:
            c = rng.standard_normal(m) * np.sqrt(prior_var)
            continue
        g = -b + zeta * c + 2.0 * mu * (s - target) * c
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol * (1.0 + float(np.linalg.norm(b))):
            break
        zp = zeta + 2.0 * mu * (s - target)
        d = 1.0 / zp
        u = d * c
        denom = 1.0 + 4.0 * mu * float(c @ u)
        step = d * g - (4.0 * mu * float(u @ g) / denom) * u
        c = c - eta * step
    return c


def vr_objective(f, codebook, idx, codeword_variances, mu) -> float:
    """Monitor for the alternating minimization: mean over dimensions of the
    row sub-problem objectives plus the dropped data constant."""
    n, count = f.shape
    m = codebook.shape[1]
    data = float(np.sum(np.square(f - codebook[:, idx]))) / (2.0 * count)
    energies = np.sum(np.square(codebook), axis=1)
    tgt = m * np.asarray(codeword_variances, dtype=np.float64)
    pen = 0.5 * mu * float(np.sum(np.square(energies - tgt)))
    return (data + pen) / n


def vr_kmeans(f: np.ndarray, m: int, codeword_variances, active=None,
              mu: float = 1.0, rng=None, eta: float = 1.0,
              max_iter: int = 50, newton_iter: int = 20, tol: float = 1e-9,
              init: np.ndarray | None = None) -> VqResult:
    """K-means with the codebook's per-dimension energies pulled toward
    ``m * codeword_variances``.

    ``active`` masks the dimensions worth optimizing (default: positive
    target variance); inactive rows of the codebook are exactly zero.
    ``mu=None`` or ``mu=inf`` skips optimization entirely: the codebook is a
    single draw from the prior N(0, diag(codeword_variances)) and only the
    assignment step runs. ``mu=0`` reproduces plain K-means (one Newton step
    with unit step size is the centroid update).
    """
    rng = make_rng(0 if rng is None else rng)
    n, count = f.shape
    s2 = np.asarray(codeword_variances, dtype=np.float64)
    if s2.shape != (n,):
        raise ValueError("codeword_variances must have shape (n,)")
    if active is None:
        active = s2 > 0.0
    active = np.asarray(active, dtype=bool)
    prior_only = mu is None or np.isinf(mu)

    if init is not None:
        codebook = np.array(init, dtype=np.float64, copy=True)
    else:
        codebook = rng.standard_normal((n, m)) * np.sqrt(s2)[:, None]
    codebook[~active] = 0.0

    if prior_only:
        idx = assign(f, codebook)
        return VqResult(codebook, idx, [],
                        normalized_distortion(f, codebook[:, idx]),
                        kind="vr_kmeans")

    active_rows = np.flatnonzero(active)
    history: list[float] = []
    prev = None
    idx = np.zeros(count, dtype=np.int64)
    for _ in range(max_iter):
        idx = assign(f, codebook)
        idx = _reseed_empty(f, codebook, idx, active_dims=active)
        zeta = np.bincount(idx, minlength=m).astype(np.float64) / count
        obj = vr_objective(f, codebook, idx, s2, mu)
        history.append(obj)

        if mu == 0.0:
            for e in range(m):
                codebook[active_rows, e] = f[np.ix_(active_rows, idx == e)].mean(axis=1)
        else:
            z_over_n = np.zeros((n, m))
            np.add.at(z_over_n.T, idx, f.T)
            z_over_n /= count
            for j in active_rows:
                codebook[j] = _newton_row(codebook[j], z_over_n[j], zeta, mu,
                                          m * s2[j], eta, newton_iter, tol,
                                          rng, s2[j])
        if not np.all(np.isfinite(codebook)):
            raise NumericalError("codebook diverged; reduce mu or eta")
        if prev is not None and prev - obj <= tol * max(abs(prev), 1e-30):
            break
        prev = obj
    idx = assign(f, codebook)
    return VqResult(codebook, idx, history,
                    normalized_distortion(f, codebook[:, idx]),
                    kind="vr_kmeans")


# ---------------------------------------------------------------------------
# Residual stacks

@dataclass
class ResidualVq:
    """L codebooks trained on successive residuals; decode sums one codeword
    per layer. ``train_distortions[l]`` is the normalized distortion after
    layer l+1 on the training set."""

    kind: str                      # "rq" or "rrq"
    codebooks: list[np.ndarray]    # each (n, m)
    train_distortions: np.ndarray  # (L,)

    @property
    def layers(self) -> int:
        return len(self.codebooks)

    def encode(self, f: np.ndarray, layers: int | None = None) -> np.ndarray:
        return rq_encode(f, self.codebooks[:layers])

    def decode(self, indices: np.ndarray, layers: int | None = None) -> np.ndarray:
        return rq_decode(indices[:layers] if layers else indices,
                         self.codebooks)


def rq_encode(f: np.ndarray, codebooks) -> np.ndarray:
    """Greedy per-layer assignment on the running residual; (L, N) uint32."""
    resid = np.array(f, dtype=np.float64, copy=True)
    out = np.empty((len(codebooks), f.shape[1]), dtype=np.uint32)
    for l, c in enumerate(codebooks):
        idx = assign(resid, c)
        out[l] = idx
        resid -= c[:, idx]
    return out


def rq_decode(indices: np.ndarray, codebooks) -> np.ndarray:
    layers = indices.shape[0]
    if layers > len(codebooks):
        raise ValueError("more code layers than codebooks")
    n = codebooks[0].shape[0]
    out = np.zeros((n, indices.shape[1]))
    for l in range(layers):
        out += codebooks[l][:, indices[l]]
    return out


def rq_train(f: np.ndarray, m: int, layers: int, rng=None,
             **kmeans_kw) -> ResidualVq:
    """Plain residual quantization: K-means per layer on the residual."""
    rng = make_rng(0 if rng is None else rng)
    resid = np.array(f, dtype=np.float64, copy=True)
    codebooks, dist = [], []
    for _ in range(layers):
        res = kmeans(resid, m, rng=rng, **kmeans_kw)
        codebooks.append(res.codebook)
        resid -= res.codebook[:, res.assignments]
        dist.append(float(np.sum(np.square(resid)) / np.sum(np.square(f))))
    return ResidualVq("rq", codebooks, np.asarray(dist))


def rrq_train(f: np.ndarray, m: int, layers: int, rate: float | None = None,
              active_ratio: float = 1.0, mu: float = 1.0,
              prior_only_after: int = 5, rng=None, **vr_kw) -> ResidualVq:
    """Regularized residual quantization.

    Expects pre-whitened input. Each layer re-estimates the residual's
    per-dimension variances, runs reverse water-filling at ``rate`` bits per
    dimension (default log2(m)/n, the rate the codebook can actually index)
    and trains the variance-regularized quantizer against the resulting
    targets. Layers beyond ``prior_only_after`` skip optimization and draw
    their codebooks straight from the prior: deep residuals are close to
    i.i.d. and the data adds nothing.
    """
    rng = make_rng(0 if rng is None else rng)
    n = f.shape[0]
    if rate is None:
        rate = float(np.log2(m)) / n
    resid = np.array(f, dtype=np.float64, copy=True)
    codebooks, dist = [], []
    for l in range(layers):
        variances = np.mean(np.square(resid), axis=1)
        alloc = reverse_water_fill(variances, rate, active_ratio)
        layer_mu = mu if (l + 1) <= prior_only_after else None
        res = vr_kmeans(resid, m, alloc.codeword_variances,
                        active=alloc.active, mu=layer_mu, rng=rng, **vr_kw)
        codebooks.append(res.codebook)
        resid -= res.codebook[:, res.assignments]
        dist.append(float(np.sum(np.square(resid)) / np.sum(np.square(f))))
    return ResidualVq("rrq", codebooks, np.asarray(dist))
