"""Entropy, channel and mutual-information calculations for sign/ternary
codes of Gaussian vectors observed through additive Gaussian noise.

The model per dimension: signal F ~ N(0, sigma2), query observation
Q = F + P with P ~ N(0, noise2). The stored symbol is the ternarization of
F at threshold lam_x; the query symbol ternarizes Q at lam_y. (F, Q) are
jointly Gaussian with correlation rho = sigma / sqrt(sigma2 + noise2), so
every cell probability of the 3x3 symbol channel is a rectangle mass of a
standard bivariate normal.

Symbol order everywhere: [+1, 0, -1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import _interval_prob, bivariate_gaussian_rect, q_function

__all__ = [
    "ternary_entropy", "binary_entropy", "TernaryChannel", "BinaryChannel",
    "build_channel", "mutual_information", "coding_gain", "binary_bsc",
    "optimize_lambda_y",
]

SYMBOLS = (1, 0, -1)


def _xlog2x(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * np.log2(p[mask])
    return out


def ternary_entropy(alpha):
    """Entropy in bits of a symmetric ternary symbol with P(+1)=P(-1)=alpha.

    H = -2 alpha log2 alpha - (1 - 2 alpha) log2(1 - 2 alpha), alpha in
    [0, 0.5], with 0 log 0 = 0. Peaks at log2(3) when alpha = 1/3.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha < 0) or np.any(alpha > 0.5):
        raise ValueError("alpha must lie in [0, 0.5]")
    h = -2.0 * _xlog2x(alpha) - _xlog2x(1.0 - 2.0 * alpha)
    return h if h.ndim else float(h)


def binary_entropy(p):
    p = np.asarray(p, dtype=np.float64)
    h = -_xlog2x(p) - _xlog2x(1.0 - p)
    return h if h.ndim else float(h)


@dataclass
class TernaryChannel:
    """Joint and conditional law of (stored symbol X, query symbol Y)."""

    sigma2: float
    noise2: float
    lam_x: float
    lam_y: float
    alpha_x: float            # P(X = +1), analytic
    alpha_y: float            # P(Y = +1), analytic
    joint: np.ndarray         # 3x3, rows X in (+1, 0, -1), cols Y likewise
    transition: np.ndarray    # p(y | x), rows sum to 1


def _degenerate_joint(a: float, b: float) -> np.ndarray:
    """Joint symbol law when Y = X's underlying Gaussian (no noise):
    both symbols are thresholdings of the same standard normal."""
    x_iv = {1: (a, np.inf), 0: (-a, a), -1: (-np.inf, -a)}
    y_iv = {1: (b, np.inf), 0: (-b, b), -1: (-np.inf, -b)}
    joint = np.empty((3, 3))
    for i, sx in enumerate(SYMBOLS):
        for k, sy in enumerate(SYMBOLS):
            lo = max(x_iv[sx][0], y_iv[sy][0])
            hi = min(x_iv[sx][1], y_iv[sy][1])
            joint[i, k] = _interval_prob(lo, hi)
    return joint


def build_channel(sigma2: float, noise2: float, lam_x: float,
                  lam_y: float) -> TernaryChannel:
    """Symbol channel for thresholds ``lam_x`` (store side) and ``lam_y``
    (query side).

    Five cells are computed by bivariate rectangle quadrature; the rest
    follow from the sign symmetry of the joint law. Transition rows are the
    joint cells divided by the analytic input-symbol masses.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if noise2 < 0:
        raise ValueError("noise2 must be non-negative")
    if lam_x < 0 or lam_y < 0:
        raise ValueError("thresholds must be non-negative")
    sx = np.sqrt(sigma2)
    sy = np.sqrt(sigma2 + noise2)
    rho = sx / sy
    a = lam_x / sx       # store threshold in standardized units
    b = lam_y / sy       # query threshold likewise
    alpha_x = float(q_function(a))
    alpha_y = float(q_function(b))

    if noise2 == 0.0:
        joint = _degenerate_joint(a, b)
    else:
        inf = np.inf
        p_pp = bivariate_gaussian_rect(rho, a, inf, b, inf)
        p_pm = bivariate_gaussian_rect(rho, a, inf, -inf, -b)
        p_p0 = bivariate_gaussian_rect(rho, a, inf, -b, b)
        p_0p = bivariate_gaussian_rect(rho, -a, a, b, inf)
        p_00 = bivariate_gaussian_rect(rho, -a, a, -b, b)
        joint = np.array([
            [p_pp, p_p0, p_pm],
            [p_0p, p_00, p_0p],
            [p_pm, p_p0, p_pp],
        ])

    joint = np.where(joint < 1e-15, 0.0, joint)
    mass_x = np.array([alpha_x, 1.0 - 2.0 * alpha_x, alpha_x])
    transition = np.zeros((3, 3))
    for i in range(3):
        if mass_x[i] > 0:
            transition[i] = joint[i] / mass_x[i]
        else:
            transition[i, i] = 1.0   # unreachable input symbol
    return TernaryChannel(sigma2=float(sigma2), noise2=float(noise2),
                          lam_x=float(lam_x), lam_y=float(lam_y),
                          alpha_x=alpha_x, alpha_y=alpha_y,
                          joint=joint, transition=transition)


def mutual_information(ch: TernaryChannel) -> float:
    """I(X; Y) = H(X) + H(Y) - H(X, Y) in bits, from the joint table."""
    joint = ch.joint / ch.joint.sum()
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    h_x = -float(_xlog2x(px).sum())
    h_y = -float(_xlog2x(py).sum())
    h_xy = -float(_xlog2x(joint).sum())
    return max(h_x + h_y - h_xy, 0.0)


def coding_gain(ch: TernaryChannel) -> float:
    """Fraction of the stored entropy that survives the noise:
    I(X;Y) / H(X), in [0, 1]."""
    px = ch.joint.sum(axis=1)
    h_x = -float(_xlog2x(px / px.sum()).sum())
    if h_x <= 0:
        raise ValueError("H(X) = 0: no information stored at this threshold")
    return mutual_information(ch) / h_x


@dataclass
class BinaryChannel:
    """Sign-quantization baseline: both sides keep only the sign, giving a
    binary symmetric channel."""

    rho: float
    p_flip: float        # arccos(rho) / pi
    info_bits: float     # 1 - H2(p_flip)
    entropy_bits: float  # always 1 per dimension

    @property
    def gain(self) -> float:
        return self.info_bits / self.entropy_bits


def binary_bsc(sigma2: float, noise2: float) -> BinaryChannel:
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if noise2 < 0:
        raise ValueError("noise2 must be non-negative")
    rho = np.sqrt(sigma2) / np.sqrt(sigma2 + noise2)
    p_flip = float(np.arccos(min(rho, 1.0)) / np.pi)
    return BinaryChannel(rho=float(rho), p_flip=p_flip,
                         info_bits=1.0 - binary_entropy(p_flip),
                         entropy_bits=1.0)


def optimize_lambda_y(sigma2: float, noise2: float, lam_x: float,
                      grid: int = 101) -> tuple[float, float]:
    """Grid-search the query-side threshold maximizing I(X; Y).

    Scans ``grid`` equispaced points over [0, 4 sqrt(sigma2 + noise2)].
    Returns (lam_y_star, info_bits); ties go to the smallest threshold.
    """
    if grid < 2:
        raise ValueError("grid must have at least 2 points")
    hi = 4.0 * np.sqrt(sigma2 + noise2)
    best_lam, best_i = 0.0, -1.0
    for lam_y in np.linspace(0.0, hi, grid):
        i_bits = mutual_information(build_channel(sigma2, noise2, lam_x, lam_y))
        if i_bits > best_i:
            best_lam, best_i = float(lam_y), i_bits
    return best_lam, best_i
