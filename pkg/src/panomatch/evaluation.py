"""Recall@N, sparse query sampling and the 2-D democratization demo."""

import csv
import hashlib
import io
from dataclasses import dataclass

import numpy as np

from ._validation import check_count, check_matrix
from .corpus import LocationGroup, geo_distance
from .exceptions import ValidationError
from .memvec import cross_weight_matrix, pinv_vector, similarity_pinv
from .retrieval import run_mode

DEFAULT_THRESHOLD_M = 25.0
DEFAULT_N_VALUES = tuple(range(1, 21))


@dataclass
class RecallCurve:
    n_values: list
    recall: list
    query_count: int

    def __post_init__(self):
        if len(self.n_values) != len(self.recall):
            raise ValidationError("n_values and recall lengths differ")

    def at(self, n):
        return self.recall[self.n_values.index(n)]

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["N", "recall", "query_count"])
        for n, r in zip(self.n_values, self.recall):
            writer.writerow([n, repr(float(r)), self.query_count])
        return buf.getvalue()


def _check_n_values(n_values):
    n_values = [check_count(n, "N") for n in n_values]
    if not n_values:
        raise ValidationError("n_values is empty")
    return n_values


def _positions(source):
    return source.positions() if hasattr(source, "positions") else dict(source)


def first_hits(ranked, queries, dataset, threshold_m=DEFAULT_THRESHOLD_M):
    """Zero-based rank of the first target within ``threshold_m`` of each query.

    Queries without any hit in their (possibly truncated) ranking get
    ``len(ranking)``; callers compare against N.  ``queries`` and
    ``dataset`` are corpora or ``{id: GeoPosition}`` mappings.
    """
    qpos = _positions(queries)
    tpos = _positions(dataset)
    hits = np.empty(len(ranked), dtype=np.int64)
    for i, r in enumerate(ranked):
        if r.query_id not in qpos:
            raise ValidationError(f"unknown query id {r.query_id!r}")
        origin = qpos[r.query_id]
        hits[i] = len(r.target_ids)
        for rank, tid in enumerate(r.target_ids):
            if tid not in tpos:
                raise ValidationError(f"unresolvable target id {tid!r}")
            if geo_distance(origin, tpos[tid]) <= threshold_m:
                hits[i] = rank
                break
    return hits


def recall_at_n(ranked, queries, dataset, n_values=DEFAULT_N_VALUES,
                threshold_m=DEFAULT_THRESHOLD_M):
    """Fraction of queries with a correct target among the top N.

    A target is correct when its position (image or location) lies within
    ``threshold_m`` meters of the query position.
    """
    n_values = _check_n_values(n_values)
    if not ranked:
        raise ValidationError("no ranked lists to evaluate")
    hits = first_hits(ranked, queries, dataset, threshold_m)
    recall = [float(np.mean(hits < n)) for n in n_values]
    return RecallCurve(n_values, recall, len(ranked))


# -- sparse panoramas -------------------------------------------------------


@dataclass
class SampleEvalConfig:
    """``l`` may be one count or a sequence of counts."""

    l: object = 4
    repetitions: int = 10
    seed: int = 0
    n_values: tuple = DEFAULT_N_VALUES
    threshold_m: float = DEFAULT_THRESHOLD_M

    @property
    def l_values(self):
        ls = [self.l] if np.isscalar(self.l) else list(self.l)
        return [check_count(v, "l") for v in ls]

    def validate(self):
        self.l_values
        check_count(self.repetitions, "repetitions")
        check_count(self.seed, "seed", minimum=0)
        _check_n_values(self.n_values)
        return self


@dataclass
class SparseResult:
    l: int
    curve: RecallCurve
    std: list
    repetitions: int


def sample_rng(seed, repetition, location_id):
    """Counter-based generator keyed by ``(seed, repetition, location_id)``."""
    digest = hashlib.sha256(f"{seed}\x1f{repetition}\x1f{location_id}".encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def sample_queries(queries, l, seed, repetition):
    """Keep ``l`` members of every query group, drawn without replacement.

    Kept members stay in their original order, so ``l == len(group)``
    reproduces the group exactly.
    """
    groups = []
    for g in queries.groups:
        if l > len(g):
            raise ValidationError(f"l={l} exceeds size {len(g)} of query location {g.location_id}")
        idx = np.sort(sample_rng(seed, repetition, g.location_id).choice(len(g), l, replace=False))
        groups.append(LocationGroup(g.location_id, g.position, tuple(g.members[i] for i in idx)))
    return queries.with_groups(groups)


def sparse_eval(queries, index, config, agg_method="pinv", dataset=None, ridge="auto"):
    """Recall of pan2pan matching with ``l`` sampled views per query.

    ``dataset`` provides target positions (corpus or mapping).  Returns one
    :class:`SparseResult` per ``l`` with the mean curve over repetitions
    and the per-N standard deviation.
    """
    config.validate()
    if dataset is None:
        raise ValidationError("dataset positions are required to score recall")
    n_values = _check_n_values(config.n_values)
    top_n = max(n_values)
    tpos = _positions(dataset)
    results = []
    for l in config.l_values:
        counts = []
        for rep in range(config.repetitions):
            sampled = sample_queries(queries, l, config.seed, rep)
            ranked = run_mode("pan2pan", sampled, index, agg_method, ridge, top_n)
            hits = first_hits(ranked, queries, tpos, config.threshold_m)
            counts.append([int(np.sum(hits < n)) for n in n_values])
        counts = np.array(counts)
        # integer totals keep l == group size bit-identical to the full run
        total = config.repetitions * len(queries)
        mean = RecallCurve(n_values, [float(c) / total for c in counts.sum(axis=0)], len(queries))
        std = (counts / len(queries)).std(axis=0)
        results.append(SparseResult(l, mean, std.tolist(), config.repetitions))
    return results


def sparse_results_csv(results):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["l", "N", "mean_recall", "std_recall", "repetitions"])
    for res in results:
        for n, m, s in zip(res.curve.n_values, res.curve.recall, res.std):
            writer.writerow([res.l, n, repr(float(m)), repr(float(s)), res.repetitions])
    return buf.getvalue()


# -- toy democratization demo -----------------------------------------------


@dataclass
class ToyLayout:
    """Two labelled 2-D point sets. Equal labels mark the same cluster."""

    x_points: np.ndarray
    y_points: np.ndarray
    x_labels: list
    y_labels: list


def figure_layout():
    """Sixteen points on a 2.2 x 2.2 square, three bursty clusters."""
    x = np.array([(1.2, 9.2), (2, 9.2), (2.8, 9.2), (9, 9),
                  (5, 4.2), (5, 5), (5, 5.8), (9.2, 1)]) / 5
    y = np.array([(2, 10), (5.8, 4.2), (5.8, 5), (5.8, 5.8),
                  (10, 1), (1.2, 1), (2, 1), (2, 1.8)]) / 5
    x_labels = ["top", "top", "top", "corner", "mid", "mid", "mid", "right"]
    y_labels = ["top", "mid", "mid", "mid", "right", "low", "low", "low"]
    return ToyLayout(x, y, x_labels, y_labels)


def bursty_layout(seed=0, spread=0.02):
    """Three clusters; X has four near-duplicates in each, Y has one or two."""
    rng = np.random.default_rng(seed)
    centers = np.array([(0.3, 0.3), (1.5, 0.4), (0.8, 1.6)])
    x, xl, y, yl = [], [], [], []
    for c, (center, ny) in enumerate(zip(centers, (1, 2, 1))):
        x.extend(center + spread * rng.standard_normal((4, 2)))
        xl.extend([f"c{c}"] * 4)
        y.extend(center + 0.1 + spread * rng.standard_normal((ny, 2)))
        yl.extend([f"c{c}"] * ny)
    return ToyLayout(np.array(x), np.array(y), xl, yl)


def kernel_features(layout, kernel_bandwidth=0.04):
    """Embed both point sets so inner products equal ``exp(-|x - y|^2 / bandwidth)``.

    The joint kernel matrix is factored as ``F F^T`` with an eigendecomposition;
    rows of ``F`` are the features.  Returns ``(X, Y)`` in ``d x n`` layout.
    """
    if kernel_bandwidth <= 0:
        raise ValidationError("kernel_bandwidth must be > 0")
    xp = check_matrix(layout.x_points, "x_points")
    yp = check_matrix(layout.y_points, "y_points")
    if xp.shape[1] != 2 or yp.shape[1] != 2:
        raise ValidationError("toy points must be 2-D")
    P = np.vstack([xp, yp])
    sq = ((P[:, None, :] - P[None, :, :]) ** 2).sum(axis=-1)
    K = np.exp(-sq / kernel_bandwidth)
    w, V = np.linalg.eigh(K)
    F = V * np.sqrt(np.clip(w, 0.0, None))
    n = xp.shape[0]
    return F[:n].T.copy(), F[n:].T.copy()


@dataclass
class ToyResult:
    unweighted: np.ndarray
    weighted: np.ndarray
    csv: str
    x_features: np.ndarray
    y_features: np.ndarray


def toy_demo(layout=None, kernel_bandwidth=0.04, ridge="off"):
    """Unweighted and pinv-weighted cross-matching of two 2-D point sets.

    Similarity between points is the Gaussian kernel of
    :func:`kernel_features`; ``unweighted[i, j]`` is the plain pair
    similarity and ``weighted`` the Gram-weighted version whose grand sum is
    the pinv panorama similarity.
    """
    layout = figure_layout() if layout is None else layout
    X, Y = kernel_features(layout, kernel_bandwidth)
    unweighted = X.T @ Y
    weighted = cross_weight_matrix(X, Y, ridge)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["i", "j", "unweighted", "weighted"])
    for i in range(unweighted.shape[0]):
        for j in range(unweighted.shape[1]):
            writer.writerow([i + 1, j + 1, f"{unweighted[i, j]:.6f}", f"{weighted[i, j]:.6f}"])
    return ToyResult(unweighted, weighted, buf.getvalue(), X, Y)


def toy_pinv_similarity(result, ridge="off"):
    return similarity_pinv(pinv_vector(result.x_features, ridge), pinv_vector(result.y_features, ridge))


def within_cluster_means(result, layout):
    """Mean (unweighted, weighted) contribution over same-cluster pairs.

    Only clusters holding at least two X points (bursty ones) count.
    """
    xl = np.array(layout.x_labels)
    yl = np.array(layout.y_labels)
    labels, counts = np.unique(xl, return_counts=True)
    bursty = set(labels[counts >= 2])
    mask = (xl[:, None] == yl[None, :]) & np.isin(xl, list(bursty))[:, None]
    if not mask.any():
        raise ValidationError("layout has no bursty cluster shared by both sets")
    return float(result.unweighted[mask].mean()), float(result.weighted[mask].mean())
