"""Two-stage similarity search over ternary codes.

Stage one never looks at a float: each database code is shredded into
per-position lookup tables (ids holding +1 and ids holding -1), and a query
accumulates votes only over the lists of its own active positions. Because
both query and database codes are sparse, the number of touched entries is a
small fraction of N and is tracked explicitly through counters. Stage two
re-ranks a shortlist by real reconstruction distance.

Also here: the exact (exhaustive) log-likelihood decoder used as a quality
ceiling, a sign-projection binary-hashing baseline with packed Hamming
scans, retrieval metrics, and the brute-force ground-truth oracle.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .info import TernaryChannel
from .numerics import make_rng
from .stc import MlStc
from .vq import ResidualVq

__all__ = [
    "SearchCounters", "SearchResult", "TernaryIndex",
    "layer_vote_weights", "build_index", "fast_decode", "aggregate_search",
    "ml_decode", "refine",
    "BinaryBaseline", "binary_baseline_train", "binary_encode",
    "binary_search", "hamming_distances",
    "average_precision", "evaluate", "exact_neighbors",
]

DEFAULT_NU_POS = 1.0
DEFAULT_NU_NEG = -4.0
DEFAULT_DECODE_LAYERS = 4


@dataclass
class SearchCounters:
    """Work accounting across a batch of queries.

    ``complexity_ratio`` compares against the N*n multiply-adds a
    brute-force float scan would spend on the same queries.
    """

    vote_touches: int = 0
    distance_evals: int = 0
    hamming_word_ops: int = 0

    def complexity_ratio(self, count: int, dim: int, queries: int) -> float:
        baseline = float(count) * dim * max(queries, 1)
        work = (self.vote_touches + self.distance_evals * float(dim)
                + self.hamming_word_ops)
        return work / baseline


@dataclass
class SearchResult:
    """Ranked shortlist; ``scores`` are votes (descending) for the initial
    stage and squared distances (ascending) after refinement. Ties are
    always broken toward the smaller id."""

    ids: np.ndarray
    scores: np.ndarray
    stage: str = "initial"


def _rank_descending(scores: np.ndarray, top: int) -> np.ndarray:
    # stable sort on the negated scores = ties resolve to the lower id
    return np.argsort(-scores, kind="stable")[:top]


def _rank_ascending(values: np.ndarray, top: int) -> np.ndarray:
    return np.argsort(values, kind="stable")[:top]


# ---------------------------------------------------------------------------
# Index construction

@dataclass
class TernaryIndex:
    """Per-layer, per-position posting lists of database ids.

    ``pos_lists[l][j]`` holds the ascending ids whose layer-l code is +1 at
    position j, ``neg_lists`` the -1 side; an id appears in at most one of
    the two. ``weights`` are the per-layer vote weights applied during
    aggregation.
    """

    pos_lists: list[list[np.ndarray]]
    neg_lists: list[list[np.ndarray]]
    weights: np.ndarray
    count: int

    @property
    def depth(self) -> int:
        return len(self.pos_lists)

    @property
    def code_length(self) -> int:
        return len(self.pos_lists[0]) if self.pos_lists else 0


def layer_vote_weights(train_distortions,
                       decode_layers: int = DEFAULT_DECODE_LAYERS) -> np.ndarray:
    """Vote weight of layer l is the distortion ratio D_l / D_{l-1} with
    D_0 = 1; layers past ``decode_layers`` get weight 0 (deep layers refine
    the reconstruction but add mostly noise to the votes)."""
    d = np.asarray(train_distortions, dtype=np.float64)
    prev = np.concatenate([[1.0], d[:-1]])
    w = np.divide(d, prev, out=np.zeros_like(d), where=prev > 0)
    w[decode_layers:] = 0.0
    return w


def build_index(codes: Sequence[np.ndarray], train_distortions,
                decode_layers: int = DEFAULT_DECODE_LAYERS) -> TernaryIndex:
    """Build posting lists from per-layer code matrices (m, N)."""
    if not codes:
        raise ValueError("no code layers given")
    count = codes[0].shape[1]
    pos_lists: list[list[np.ndarray]] = []
    neg_lists: list[list[np.ndarray]] = []
    for layer_codes in codes:
        if layer_codes.shape[1] != count:
            raise ValueError("code layers disagree on database size")
        pos_lists.append([np.flatnonzero(row == 1).astype(np.int64)
                          for row in layer_codes])
        neg_lists.append([np.flatnonzero(row == -1).astype(np.int64)
                          for row in layer_codes])
    weights = layer_vote_weights(train_distortions, decode_layers)
    if weights.size < len(codes):
        raise ValueError("fewer recorded distortions than code layers")
    return TernaryIndex(pos_lists=pos_lists, neg_lists=neg_lists,
                        weights=weights[:len(codes)], count=count)


# ---------------------------------------------------------------------------
# Query-side decoding

def fast_decode(y: np.ndarray, index: TernaryIndex, layer: int = 0,
                nu_pos: float = DEFAULT_NU_POS,
                nu_neg: float = DEFAULT_NU_NEG,
                counters: SearchCounters | None = None) -> np.ndarray:
    """Vote vector of one ternary query against one indexed layer.

    Every active query position rewards ids of the matching sign with
    ``nu_pos`` and penalizes the opposite sign with ``nu_neg``; ids with a
    zero code there are never touched, which is where the sub-linear cost
    comes from.
    """
    if nu_neg > 0:
        raise ValueError("nu_neg must penalize (require nu_neg <= 0)")
    y = np.asarray(y)
    if y.shape != (index.code_length,):
        raise ValueError(f"query code length {y.shape} != ({index.code_length},)")
    pos, neg = index.pos_lists[layer], index.neg_lists[layer]
    votes = np.zeros(index.count)
    touches = 0
    for j in np.flatnonzero(y):
        same, other = (pos[j], neg[j]) if y[j] > 0 else (neg[j], pos[j])
        votes[same] += nu_pos
        votes[other] += nu_neg
        touches += same.size + other.size
    if counters is not None:
        counters.vote_touches += touches
    return votes


def aggregate_search(y_layers: Sequence[np.ndarray], index: TernaryIndex,
                     nu_pos: float = DEFAULT_NU_POS,
                     nu_neg: float = DEFAULT_NU_NEG,
                     list_size: int = 10,
                     counters: SearchCounters | None = None) -> SearchResult:
    """Weighted sum of per-layer vote vectors, then the top ``list_size``.

    Layers whose vote weight is zero are skipped entirely (they would cost
    touches without moving any score).
    """
    if index.count == 0:
        raise ValueError("empty index")
    if len(y_layers) > index.depth:
        raise ValueError("more query layers than indexed layers")
    total = np.zeros(index.count)
    for layer, y in enumerate(y_layers):
        w = index.weights[layer]
        if w == 0.0:
            continue
        total += w * fast_decode(y, index, layer, nu_pos, nu_neg, counters)
    order = _rank_descending(total, list_size)
    return SearchResult(ids=order, scores=total[order], stage="initial")


def ml_decode(y: np.ndarray, codes: np.ndarray, channel: TernaryChannel,
              top: int = 10) -> SearchResult:
    """Exhaustive maximum-likelihood ranking of one query against a single
    code layer: score(i) = sum_j log P(y_j | x_j(i)) under the channel's
    transition matrix. Zero transitions are clamped to 1e-12."""
    trans = np.array(channel.transition, dtype=np.float64)
    if np.any(trans <= 0):
        warnings.warn("channel has zero transition probabilities; "
                      "clamping to 1e-12 for the likelihood",
                      RuntimeWarning, stacklevel=2)
        trans = np.maximum(trans, 1e-12)
    log_t = np.log(trans)
    # symbol s in {+1, 0, -1} -> row/col 1 - s
    iy = (1 - np.asarray(y, dtype=np.int64))
    ix = (1 - np.asarray(codes, dtype=np.int64))
    per_position = log_t[:, iy]                       # (3, m)
    scores = per_position[ix, np.arange(iy.size)[:, None]].sum(axis=0)
    order = _rank_descending(scores, top)
    return SearchResult(ids=order, scores=scores[order], stage="initial")


def refine(q: np.ndarray, initial: SearchResult,
           model: MlStc | ResidualVq, codes,
           list_size: int | None = None,
           counters: SearchCounters | None = None) -> SearchResult:
    """Re-rank a shortlist by squared Euclidean distance between the raw
    query and each candidate's full-depth reconstruction. Work scales with
    the shortlist, not the database."""
    ids = np.asarray(initial.ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("cannot refine an empty shortlist")
    if isinstance(model, MlStc):
        count = codes[0].shape[1]
        if ids.max() >= count:
            raise ValueError("shortlist id outside the stored codes")
        recon = model.decode([layer[:, ids] for layer in codes])
    elif isinstance(model, ResidualVq):
        count = codes.shape[1]
        if ids.max() >= count:
            raise ValueError("shortlist id outside the stored codes")
        recon = model.decode(codes[:, ids])
    else:
        raise TypeError(f"cannot refine with model of type {type(model)!r}")
    q = np.asarray(q, dtype=np.float64)
    dists = np.sum(np.square(recon - q[:, None]), axis=0)
    if counters is not None:
        counters.distance_evals += ids.size
    keep = _rank_ascending(dists, ids.size if list_size is None else list_size)
    return SearchResult(ids=ids[keep], scores=dists[keep], stage="refined")


# ---------------------------------------------------------------------------
# Binary-hashing baseline

if hasattr(np, "bitwise_count"):
    _popcount = np.bitwise_count
else:  # numpy < 2.0
    _POPCOUNT_TABLE = np.array([bin(i).count("1") for i in range(256)],
                               dtype=np.uint8)

    def _popcount(a: np.ndarray) -> np.ndarray:
        return _POPCOUNT_TABLE[a]


@dataclass
class BinaryBaseline:
    """Random sign projection x = sign(A f) with a scalar least-squares
    decode weight for the pseudo-inverse reconstruction beta * pinv(A) x."""

    projection: np.ndarray        # (m, n)
    weight: float
    pinv: np.ndarray              # (n, m)

    @property
    def code_length(self) -> int:
        return self.projection.shape[0]

    def reconstruct(self, signs: np.ndarray) -> np.ndarray:
        return self.weight * (self.pinv @ signs)


def binary_baseline_train(f: np.ndarray, m: int, rng=None) -> BinaryBaseline:
    n = f.shape[0]
    if m > n:
        raise ValueError("binary code length m must not exceed dimension n")
    rng = make_rng(rng)
    proj = rng.standard_normal((m, n)) / np.sqrt(n)
    pinv = np.linalg.pinv(proj)
    signs = np.sign(proj @ f)
    signs[signs == 0] = 1.0
    back = pinv @ signs
    denom = float(np.sum(back * back))
    weight = float(np.sum(back * f)) / denom if denom > 0 else 0.0
    return BinaryBaseline(projection=proj, weight=weight, pinv=pinv)


def binary_encode(model: BinaryBaseline, f: np.ndarray) -> np.ndarray:
    """Pack sign bits column-wise into uint8 words, (ceil(m/8), N)."""
    f = np.asarray(f, dtype=np.float64)
    single = f.ndim == 1
    mat = f[:, None] if single else f
    bits = (model.projection @ mat) > 0
    packed = np.packbits(bits, axis=0)
    return packed[:, 0] if single else packed


def hamming_distances(query_words: np.ndarray, db_words: np.ndarray,
                      counters: SearchCounters | None = None) -> np.ndarray:
    """Popcount of XOR between one packed query and all packed columns."""
    diff = np.bitwise_xor(db_words, query_words[:, None])
    if counters is not None:
        counters.hamming_word_ops += diff.size
    return _popcount(diff).sum(axis=0).astype(np.int64)


def binary_search(model: BinaryBaseline, db_words: np.ndarray,
                  query_words: np.ndarray, list_size: int = 10,
                  counters: SearchCounters | None = None) -> SearchResult:
    dists = hamming_distances(query_words, db_words, counters)
    order = _rank_ascending(dists, list_size)
    return SearchResult(ids=order, scores=dists[order].astype(np.float64),
                        stage="initial")


# ---------------------------------------------------------------------------
# Metrics and ground truth

def average_precision(retrieved: np.ndarray, relevant: np.ndarray,
                      top: int) -> float:
    """AP@top with the usual min(#relevant, top) normalizer."""
    relevant = np.asarray(relevant)
    if relevant.size == 0:
        raise ValueError("empty relevant set")
    retrieved = np.asarray(retrieved)[:top]
    rel_mask = np.isin(retrieved, relevant)
    if not rel_mask.any():
        return 0.0
    hits = np.cumsum(rel_mask)
    ranks = np.arange(1, retrieved.size + 1)
    precision_at_hit = hits[rel_mask] / ranks[rel_mask]
    return float(precision_at_hit.sum() / min(relevant.size, top))


def evaluate(results: Sequence[SearchResult],
             ground_truth: Sequence[np.ndarray], top: int,
             relevant_count: int = 1,
             counters: SearchCounters | None = None,
             count: int | None = None, dim: int | None = None) -> dict:
    """Batch retrieval metrics.

    ``ground_truth[i]`` is the exact neighbor list of query i (at least
    ``relevant_count`` long). Returns mAP@top, recall of the top
    ``relevant_count`` true neighbors within the returned top, the
    identification error P_id = 1 - Recall@1, and — when counters plus the
    database geometry are supplied — the work ratio against a brute-force
    float scan.
    """
    if not results:
        raise ValueError("no query results to evaluate")
    if len(results) != len(ground_truth):
        raise ValueError("results and ground truth differ in length")
    ap, recall, hit1 = [], [], []
    for res, gt in zip(results, ground_truth):
        gt = np.asarray(gt)
        rel = gt[:relevant_count]
        got = np.asarray(res.ids)[:top]
        ap.append(average_precision(got, rel, top))
        recall.append(np.isin(rel, got).mean())
        hit1.append(1.0 if got.size and got[0] == gt[0] else 0.0)
    out = {
        "map": float(np.mean(ap)),
        "recall": float(np.mean(recall)),
        "recall_at_1": float(np.mean(hit1)),
        "p_id": 1.0 - float(np.mean(hit1)),
        "queries": len(results),
    }
    if counters is not None:
        out.update(vote_touches=counters.vote_touches,
                   distance_evals=counters.distance_evals,
                   hamming_word_ops=counters.hamming_word_ops)
        if count is not None and dim is not None:
            out["complexity_ratio"] = counters.complexity_ratio(
                count, dim, len(results))
    return out


def _dataset_digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:32]


def exact_neighbors(db: np.ndarray, queries: np.ndarray, top: int,
                    cache_dir: str | Path | None = None,
                    chunk: int = 128) -> np.ndarray:
    """Brute-force nearest neighbors, (top, Q) ids; optionally cached on
    disk keyed by a digest of both datasets."""
    cache_path = None
    if cache_dir is not None:
        digest = _dataset_digest(db, queries)
        cache_path = Path(cache_dir) / f"gt-{digest}-t{top}.npy"
        if cache_path.exists():
            return np.load(cache_path)
    db = np.asarray(db, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    db_sq = np.sum(np.square(db), axis=0)
    out = np.empty((top, queries.shape[1]), dtype=np.int64)
    for start in range(0, queries.shape[1], chunk):
        q = queries[:, start:start + chunk]
        d2 = db_sq[:, None] - 2.0 * (db.T @ q)
        out[:, start:start + chunk] = np.argsort(d2, axis=0,
                                                 kind="stable")[:top]
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        np.save(cache_path, out)
    return out
