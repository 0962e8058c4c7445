"""Memory indexes, exhaustive search and the four matching regimes.

============  =======================  ============================
mode          query side               dataset side
============  =======================  ============================
``im2im``     each image descriptor    every image descriptor
``im2pan``    each image descriptor    one memory vector / location
``pan2im``    one memory vector / loc  every image descriptor
``pan2pan``   one memory vector / loc  one memory vector / location
============  =======================  ============================

Scores are raw inner products and ties are broken by ascending target id,
so rankings are reproducible bit for bit.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_vector, parse_ridge
from .corpus import Corpus
from .exceptions import FormatError, SingularityError, ValidationError
from .memvec import MemoryVector, Method, aggregate

logger = logging.getLogger(__name__)

MODES = ("im2im", "im2pan", "pan2im", "pan2pan")

INDEX_MAGIC = b"PMIX"
INDEX_VERSION = 1
_INDEX_HEADER = struct.Struct("<4sIBIQ")
_ENTRY_META = struct.Struct("<If")
_U16 = struct.Struct("<H")
_METHOD_CODES = {Method.SUM: 0, Method.PINV: 1, Method.PRECOMPUTED: 2}
_CODE_METHODS = {v: k for k, v in _METHOD_CODES.items()}


class _Targets:
    """Row-major target matrix with a precomputed id order for tie-breaks."""

    def _init_targets(self, ids, vectors):
        self.ids = list(ids)
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("duplicate target ids")
        self.vectors = vectors
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[np.argsort(np.array(self.ids, dtype=object), kind="stable")] = np.arange(
            len(self.ids)
        )

    def __len__(self):
        return len(self.ids)

    @property
    def d(self):
        return self.vectors.shape[1]


class MemoryIndex(_Targets):
    """One memory vector per dataset location."""

    def __init__(self, method, entries):
        self.method = Method.parse(method)
        self.entries = list(entries)
        if not self.entries:
            raise ValidationError("empty index")
        dims = {mv.dim for _, mv in self.entries}
        if len(dims) != 1:
            raise ValidationError(f"index entries have inconsistent dimensions {sorted(dims)}")
        for loc, mv in self.entries:
            if mv.method is not self.method:
                raise ValidationError(f"{loc}: entry method {mv.method.value} != {self.method.value}")
            if self.method is Method.PRECOMPUTED and mv.source_count != 1:
                raise ValidationError(f"{loc}: precomputed entries must have source_count 1")
        self._init_targets(
            [loc for loc, _ in self.entries], np.stack([mv.values for _, mv in self.entries])
        )

    def report(self):
        sizes = [mv.source_count for _, mv in self.entries]
        retries = [(loc, mv.ridge_used) for loc, mv in self.entries if mv.ridge_used > 0]
        return {
            "method": self.method.value,
            "d": self.d,
            "locations": len(self),
            "group_size_min": min(sizes),
            "group_size_max": max(sizes),
            "group_size_total": sum(sizes),
            "ridge_retries": len(retries),
            "ridge_locations": [loc for loc, _ in retries],
            "rank_deficient": [loc for loc, mv in self.entries if mv.rank_deficient],
        }


class ImageIndex(_Targets):
    """Flat list of every dataset image descriptor."""

    def __init__(self, ids, vectors, location_of=None):
        vectors = check_matrix(vectors, "vectors")
        if len(ids) != vectors.shape[0]:
            raise ValidationError(f"{len(ids)} ids for {vectors.shape[0]} vectors")
        self.location_of = dict(location_of or {})
        self._init_targets(ids, vectors)

    @classmethod
    def from_corpus(cls, corpus, normalize=False):
        ids, M = corpus.image_matrix()
        V = M.T
        if normalize:
            V = _normalize_rows(V)
        return cls(ids, V, {r.image_id: r.location_id for r in corpus.records()})


@dataclass(eq=False)
class RankedList:
    query_id: str
    target_ids: list
    scores: np.ndarray
    comparisons: int
    query_level: str = field(default="image")

    @property
    def items(self):
        return list(zip(self.target_ids, self.scores.tolist()))

    def __len__(self):
        return len(self.target_ids)


def _normalize_rows(V):
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return V / norms


def build_index(corpus, method="pinv", ridge="auto", normalize=False):
    """Aggregate every location group of ``corpus`` into a :class:`MemoryIndex`."""
    method = Method.parse(method)
    parse_ridge(ridge)
    entries = []
    for g in corpus.groups:
        try:
            mv = aggregate(g.matrix, method, ridge)
        except SingularityError as exc:
            exc.location_id = g.location_id
            raise
        if mv.ridge_used > 0:
            logger.info("location %s: ridge %.3g used (n=%d)", g.location_id, mv.ridge_used, len(g))
        entries.append((g.location_id, mv.normalized() if normalize else mv))
    return MemoryIndex(method, entries)


def _query_vector(query, targets):
    if isinstance(query, MemoryVector):
        if isinstance(targets, MemoryIndex) and query.method is not targets.method:
            raise ValidationError(
                f"cannot compare {query.method.value}-vector with {targets.method.value} index"
            )
        return query.values
    return check_vector(query, "query")


def search_many(Q, query_ids, targets, top_n=None, query_level="image"):
    """Score each row of ``Q`` against every target and rank."""
    Q = check_matrix(Q, "Q", allow_empty=True)
    if Q.shape[0] != len(query_ids):
        raise ValidationError(f"{len(query_ids)} query ids for {Q.shape[0]} queries")
    if Q.shape[0] and Q.shape[1] != targets.d:
        raise ValidationError(f"dimension mismatch: query {Q.shape[1]} vs index {targets.d}")
    if top_n is not None and top_n < 1:
        raise ValidationError(f"top_n must be >= 1, got {top_n}")
    n_targets = len(targets)
    keep = n_targets if top_n is None else min(top_n, n_targets)
    S = Q @ targets.vectors.T
    out = []
    for qid, row in zip(query_ids, S):
        order = np.lexsort((targets._id_rank, -row))[:keep]
        out.append(
            RankedList(qid, [targets.ids[i] for i in order], row[order], n_targets, query_level)
        )
    return out


def search(query, targets, top_n=None, query_id="query"):
    """Exhaustive inner-product search for a single query."""
    v = _query_vector(query, targets)
    level = "location" if isinstance(query, MemoryVector) else "image"
    return search_many(v[None, :], [query_id], targets, top_n, level)[0]


def _aggregate_queries(queries, method, ridge, normalize):
    vectors = []
    for g in queries.groups:
        try:
            mv = aggregate(g.matrix, method, ridge)
        except SingularityError as exc:
            exc.location_id = g.location_id
            raise
        vectors.append(mv.normalized() if normalize else mv)
    return vectors


def run_mode(mode, queries, dataset, agg_method="pinv", ridge="auto", top_n=None,
             normalize=False):
    """Run one matching regime and return a :class:`RankedList` per query unit.

    ``dataset`` may be a :class:`Corpus`, or a prebuilt :class:`MemoryIndex`
    (``im2pan``/``pan2pan``) or :class:`ImageIndex` (``im2im``/``pan2im``).
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r} (choose from {', '.join(MODES)})")
    method = Method.parse(agg_method)
    image_queries = mode.startswith("im2")
    image_targets = mode.endswith("2im")

    if image_targets:
        if isinstance(dataset, Corpus):
            targets = ImageIndex.from_corpus(dataset, normalize)
        elif isinstance(dataset, ImageIndex):
            targets = dataset
        else:
            raise ValidationError(f"{mode} needs the dataset images, not a memory index")
    else:
        if isinstance(dataset, Corpus):
            targets = build_index(dataset, method, ridge, normalize)
        elif isinstance(dataset, MemoryIndex):
            targets = dataset
            if targets.method is not method:
                raise ValidationError(
                    f"aggregation mismatch: queries use {method.value}, "
                    f"index was built with {targets.method.value}"
                )
        else:
            raise ValidationError(f"{mode} needs a memory index or a dataset corpus")

    if image_queries:
        ids, M = queries.image_matrix()
        Q = M.T
        if normalize:
            Q = _normalize_rows(Q)
        return search_many(Q, ids, targets, top_n, "image")
    vectors = _aggregate_queries(queries, method, ridge, normalize)
    Q = np.stack([mv.values for mv in vectors])
    return search_many(Q, queries.location_ids, targets, top_n, "location")


def total_comparisons(ranked):
    return sum(r.comparisons for r in ranked)


# -- index files ------------------------------------------------------------


def save_index(index, path):
    with open(path, "wb") as fh:
        fh.write(_INDEX_HEADER.pack(
            INDEX_MAGIC, INDEX_VERSION, _METHOD_CODES[index.method], index.d, len(index)
        ))
        for loc, mv in index.entries:
            raw = loc.encode("utf-8")
            if not raw or len(raw) > 0xFFFF:
                raise ValidationError(f"location id {loc!r}: length must be 1..65535 bytes")
            fh.write(_U16.pack(len(raw)))
            fh.write(raw)
            fh.write(_ENTRY_META.pack(mv.source_count, mv.ridge_used))
            fh.write(np.asarray(mv.values, dtype="<f4").tobytes())


def load_index(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _INDEX_HEADER.size:
        raise FormatError("truncated header", offset=len(buf), path=path)
    magic, version, code, d, count = _INDEX_HEADER.unpack_from(buf)
    if magic != INDEX_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {INDEX_MAGIC!r}", offset=0, path=path)
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, path=path)
    if code not in _CODE_METHODS:
        raise FormatError(f"unknown method code {code}", offset=8, path=path)
    if d == 0:
        raise FormatError("index dimension is zero", offset=9, path=path)
    if count == 0:
        raise FormatError("index has no entries", offset=13, path=path)
    method = _CODE_METHODS[code]
    pos = _INDEX_HEADER.size
    entries = []
    for i in range(count):
        if pos + 2 > len(buf):
            raise FormatError(f"truncated entry {i}", offset=pos, path=path)
        (n,) = _U16.unpack_from(buf, pos)
        pos += 2
        if pos + n + _ENTRY_META.size + 4 * d > len(buf):
            raise FormatError(f"truncated entry {i}", offset=pos, path=path)
        try:
            loc = buf[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"entry {i}: invalid UTF-8 id", offset=pos, path=path) from exc
        pos += n
        source_count, ridge_used = _ENTRY_META.unpack_from(buf, pos)
        pos += _ENTRY_META.size
        vec = np.frombuffer(buf, dtype="<f4", count=d, offset=pos)
        if not np.all(np.isfinite(vec)):
            bad = int(np.flatnonzero(~np.isfinite(vec))[0])
            raise FormatError(f"entry {i}: non-finite value", offset=pos + 4 * bad, path=path)
        pos += 4 * d
        try:
            mv = MemoryVector(vec.astype(np.float64), method, source_count, float(ridge_used),
                              method is Method.PINV and source_count >= d)
        except ValidationError as exc:
            raise FormatError(f"entry {i}: {exc}", offset=pos, path=path) from exc
        entries.append((loc, mv))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", offset=pos, path=path)
    return MemoryIndex(method, entries)


class PanoramaRetriever(BaseEstimator):
    """Estimator wrapper around :func:`run_mode`.

    ``fit`` takes the dataset :class:`Corpus` and builds whatever the mode
    searches over; ``predict`` takes the query :class:`Corpus` and returns
    one :class:`RankedList` per query unit.

    Parameters
    ----------
    mode : {"im2im", "im2pan", "pan2im", "pan2pan"}
    agg : {"sum", "pinv", "precomputed"}
    ridge : "auto", "off" or float
    normalize : bool, default=False
        Cosine instead of raw inner-product scores (ablation).
    top_n : int or None
        Truncate rankings; ``None`` keeps every target.
    """

    def __init__(self, mode="pan2pan", agg="pinv", ridge="auto", normalize=False, top_n=None):
        self.mode = mode
        self.agg = agg
        self.ridge = ridge
        self.normalize = normalize
        self.top_n = top_n

    def fit(self, dataset, y=None):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.mode.endswith("2im"):
            self.index_ = ImageIndex.from_corpus(dataset, self.normalize)
        else:
            self.index_ = build_index(dataset, self.agg, self.ridge, self.normalize)
        self.dataset_ = dataset
        return self

    def predict(self, queries):
        check_is_fitted(self, "index_")
        return run_mode(self.mode, queries, self.index_, self.agg, self.ridge, self.top_n,
                        self.normalize)

    def score(self, queries, y=None, n=1, threshold_m=25.0):
        """Recall@``n`` of :meth:`predict` on ``queries``."""
        from .evaluation import recall_at_n

        curve = recall_at_n(self.predict(queries), queries, self.dataset_, [n], threshold_m)
        return curve.recall[0]
