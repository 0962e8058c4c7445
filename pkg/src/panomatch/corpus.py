"""Image records, location groups, file formats and a synthetic benchmark."""

import csv
import enum
import logging
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._validation import check_count, check_matrix
from .exceptions import FormatError, ValidationError

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0

DESCRIPTOR_MAGIC = b"PMDV"
DESCRIPTOR_VERSION = 1
_DESC_HEADER = struct.Struct("<4sIIQ")
_U16 = struct.Struct("<H")


class Side(enum.Enum):
    DATASET = "dataset"
    QUERY = "query"


@dataclass(frozen=True)
class GeoPosition:
    """Either latitude/longitude in degrees or planar coordinates in meters."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("latlon", "planar"):
            raise ValidationError(f"unknown position kind {self.kind!r}")
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValidationError("position coordinates must be finite")
        if self.kind == "latlon" and not (-90 <= self.a <= 90 and -180 <= self.b <= 180):
            raise ValidationError(f"lat/lon out of range: ({self.a}, {self.b})")

    @classmethod
    def latlon(cls, lat, lon):
        return cls("latlon", float(lat), float(lon))

    @classmethod
    def planar(cls, x, y):
        return cls("planar", float(x), float(y))


def geo_distance(p, q):
    """Distance in meters.

    Planar positions use the Euclidean distance; lat/lon positions use the
    equirectangular approximation ``R * sqrt(dphi^2 + (cos(phi_mean) dlambda)^2)``.
    """
    if p.kind != q.kind:
        raise ValidationError(f"cannot measure distance between {p.kind} and {q.kind} positions")
    if p.kind == "planar":
        return math.hypot(p.a - q.a, p.b - q.b)
    phi1, phi2 = math.radians(p.a), math.radians(q.a)
    dphi = phi2 - phi1
    dlam = math.radians(q.b - p.b)
    x = math.cos(0.5 * (phi1 + phi2)) * dlam
    return EARTH_RADIUS_M * math.hypot(dphi, x)


@dataclass(frozen=True, eq=False)
class ImageRecord:
    image_id: str
    location_id: str
    position: GeoPosition
    descriptor: np.ndarray

    def __post_init__(self):
        if not self.image_id or not self.location_id:
            raise ValidationError("image_id and location_id must be non-empty")
        if self.descriptor.ndim != 1 or not np.all(np.isfinite(self.descriptor)):
            raise ValidationError(f"{self.image_id}: descriptor must be a finite 1-D vector")


@dataclass(eq=False)
class LocationGroup:
    location_id: str
    position: GeoPosition
    members: tuple

    def __len__(self):
        return len(self.members)

    @property
    def image_ids(self):
        return [r.image_id for r in self.members]

    @cached_property
    def matrix(self):
        """``d x n`` float64 view of the member descriptors."""
        return np.stack([r.descriptor for r in self.members], axis=1).astype(np.float64)


@dataclass(eq=False)
class Corpus:
    groups: list
    d: int
    side: Side = Side.DATASET
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        ids = [g.location_id for g in self.groups]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate location ids in corpus")

    def __len__(self):
        return len(self.groups)

    @property
    def location_ids(self):
        return [g.location_id for g in self.groups]

    @property
    def n_images(self):
        return sum(len(g) for g in self.groups)

    def records(self):
        for g in self.groups:
            yield from g.members

    def image_matrix(self):
        """Return ``(image_ids, d x N matrix)`` over all images, group order."""
        recs = list(self.records())
        M = np.stack([r.descriptor for r in recs], axis=1).astype(np.float64)
        return [r.image_id for r in recs], M

    def positions(self):
        """Map image ids and location ids to positions."""
        out = {g.location_id: g.position for g in self.groups}
        for r in self.records():
            out[r.image_id] = r.position
        return out

    def with_groups(self, groups):
        return Corpus(list(groups), self.d, self.side)


def group_by_location(records, side=Side.DATASET, spread_tolerance_m=1.0):
    """Partition records into location groups, preserving input order."""
    buckets = {}
    d = None
    for rec in records:
        dim = rec.descriptor.shape[0]
        if d is None:
            d = dim
        elif dim != d:
            raise ValidationError(
                f"{rec.image_id}: descriptor dimension {dim} differs from {d}"
            )
        buckets.setdefault(rec.location_id, []).append(rec)
    if d is None:
        raise ValidationError("no records to group")
    groups, warnings = [], []
    for loc, members in buckets.items():
        pos = members[0].position
        spread = max(geo_distance(pos, m.position) for m in members)
        if spread > spread_tolerance_m:
            msg = f"location {loc}: member positions spread over {spread:.2f} m"
            logger.warning(msg)
            warnings.append(msg)
        groups.append(LocationGroup(loc, pos, tuple(members)))
    return Corpus(groups, d, Side(side), warnings)


# -- descriptor files -------------------------------------------------------


def save_descriptors(path, ids, M):
    """Write ``ids`` and the matching ``d x count`` matrix ``M``."""
    M = check_matrix(M, "M", allow_empty=True)
    d, count = M.shape
    if len(ids) != count:
        raise ValidationError(f"{len(ids)} ids for {count} descriptors")
    cols = np.asarray(M.T, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_DESC_HEADER.pack(DESCRIPTOR_MAGIC, DESCRIPTOR_VERSION, d, count))
        for ident, col in zip(ids, cols):
            raw = str(ident).encode("utf-8")
            if not raw or len(raw) > 0xFFFF:
                raise ValidationError(f"id {ident!r}: length must be 1..65535 bytes")
            fh.write(_U16.pack(len(raw)))
            fh.write(raw)
            fh.write(col.tobytes())


def load_descriptors(path):
    """Read a ``PMDV`` file and return ``(ids, d x count float32 matrix)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _DESC_HEADER.size:
        raise FormatError("truncated header", offset=len(buf), path=path)
    magic, version, d, count = _DESC_HEADER.unpack_from(buf)
    if magic != DESCRIPTOR_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DESCRIPTOR_MAGIC!r}", offset=0, path=path)
    if version != DESCRIPTOR_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, path=path)
    if d == 0:
        raise FormatError("descriptor dimension is zero", offset=8, path=path)
    if count == 0:
        raise ValidationError(f"{path}: empty corpus (0 descriptors)")
    nbytes = 4 * d
    ids = []
    out = np.empty((count, d), dtype=np.float32)
    pos = _DESC_HEADER.size
    for i in range(count):
        if pos + 2 > len(buf):
            raise FormatError(f"truncated record {i}", offset=pos, path=path)
        (n,) = _U16.unpack_from(buf, pos)
        pos += 2
        if pos + n + nbytes > len(buf):
            raise FormatError(f"truncated record {i}", offset=pos, path=path)
        try:
            ids.append(buf[pos:pos + n].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"record {i}: invalid UTF-8 id", offset=pos, path=path) from exc
        pos += n
        vec = np.frombuffer(buf, dtype="<f4", count=d, offset=pos)
        if not np.all(np.isfinite(vec)):
            bad = int(np.flatnonzero(~np.isfinite(vec))[0])
            raise FormatError(f"record {i}: non-finite value", offset=pos + 4 * bad, path=path)
        out[i] = vec
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", offset=pos, path=path)
    return ids, out.T


# -- metadata CSV -----------------------------------------------------------

_PLANAR_HEADER = ["image_id", "location_id", "x", "y"]
_LATLON_HEADER = ["image_id", "location_id", "lat", "lon"]


def read_metadata(path):
    """Return ``{image_id: (location_id, GeoPosition)}`` in file order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError("empty metadata file", offset=0, path=path)
        if header == _LATLON_HEADER:
            kind = "latlon"
        elif header == _PLANAR_HEADER:
            kind = "planar"
        else:
            raise FormatError(f"unexpected header {header}", offset=0, path=path)
        out = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"line {lineno}: expected 4 fields, got {len(row)}", path=path)
            image_id, loc, a, b = row
            try:
                pos = GeoPosition(kind, float(a), float(b))
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}", path=path) from exc
            if image_id in out:
                raise FormatError(f"line {lineno}: duplicate image id {image_id!r}", path=path)
            out[image_id] = (loc, pos)
    return out


def write_metadata(path, records):
    records = list(records)
    kinds = {r.position.kind for r in records}
    if len(kinds) > 1:
        raise ValidationError("mixed position kinds in one metadata file")
    header = _LATLON_HEADER if kinds == {"latlon"} else _PLANAR_HEADER
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            writer.writerow([r.image_id, r.location_id, repr(r.position.a), repr(r.position.b)])


def load_corpus(descriptors_path, metadata_path, side=Side.DATASET):
    ids, M = load_descriptors(descriptors_path)
    meta = read_metadata(metadata_path)
    records = []
    for j, ident in enumerate(ids):
        if ident not in meta:
            raise ValidationError(f"descriptor {ident!r} has no metadata row")
        loc, pos = meta[ident]
        records.append(ImageRecord(ident, loc, pos, np.ascontiguousarray(M[:, j])))
    return group_by_location(records, side)


def save_corpus(corpus, descriptors_path, metadata_path):
    recs = list(corpus.records())
    M = np.stack([r.descriptor for r in recs], axis=1)
    save_descriptors(descriptors_path, [r.image_id for r in recs], M)
    write_metadata(metadata_path, recs)


# -- synthetic benchmark ----------------------------------------------------


@dataclass
class SynthConfig:
    """Parameters of :func:`synth_benchmark`.

    Every location owns ``views_per_location + 1`` random unit "scene"
    directions in a chain; view ``j`` mixes direction ``j`` with direction
    ``j + 1`` (weight ``view_overlap``), then gets isotropic noise of norm
    about ``scene_noise`` and is L2-normalized.  A closed ring would make
    the mixing matrix singular for an even view count at overlap 0.5.
    """

    num_locations: int = 200
    views_per_location: int = 8
    d: int = 64
    scene_noise: float = 1.1
    view_overlap: float = 0.5
    seed: int = 0
    spacing_m: float = 50.0
    query_offset_m: float = 4.0

    def validate(self):
        check_count(self.num_locations, "num_locations")
        check_count(self.views_per_location, "views_per_location")
        check_count(self.d, "d")
        check_count(self.seed, "seed", minimum=0)
        if not (math.isfinite(self.scene_noise) and self.scene_noise >= 0):
            raise ValidationError("scene_noise must be finite and >= 0")
        if not 0 <= self.view_overlap <= 1:
            raise ValidationError("view_overlap must lie in [0, 1]")
        if self.spacing_m < 50:
            raise ValidationError("spacing_m must be >= 50")
        if not 0 <= self.query_offset_m <= 5:
            raise ValidationError("query_offset_m must lie in [0, 5]")
        return self


def synth_benchmark(config=None, **overrides):
    """Generate ``(dataset, queries)`` corpora on a planar grid.

    Query location ``i`` sits within ``query_offset_m`` of dataset
    location ``i`` and sees the same scene with independent noise.
    """
    if config is None:
        config = SynthConfig(**overrides)
    elif overrides:
        config = SynthConfig(**{**config.__dict__, **overrides})
    cfg = config.validate()
    L, V, d = cfg.num_locations, cfg.views_per_location, cfg.d
    rng = np.random.default_rng(cfg.seed)

    scenes = rng.standard_normal((L, d, V + 1))
    scenes /= np.linalg.norm(scenes, axis=1, keepdims=True)
    mix = (1.0 - cfg.view_overlap) * scenes[:, :, :-1] + cfg.view_overlap * scenes[:, :, 1:]
    mix = mix / np.maximum(np.linalg.norm(mix, axis=1, keepdims=True), 1e-300)

    def noisy_views(noise):
        out = mix + cfg.scene_noise * noise / math.sqrt(d)
        return (out / np.linalg.norm(out, axis=1, keepdims=True)).astype(np.float32)

    db_views = noisy_views(rng.standard_normal((L, d, V)))
    q_views = noisy_views(rng.standard_normal((L, d, V)))
    angles = rng.uniform(0.0, 2 * math.pi, size=L)
    radii = cfg.query_offset_m * np.sqrt(rng.uniform(0.0, 1.0, size=L))

    side = math.ceil(math.sqrt(L))
    db_records, q_records = [], []
    for i in range(L):
        x, y = (i % side) * cfg.spacing_m, (i // side) * cfg.spacing_m
        db_pos = GeoPosition.planar(x, y)
        q_pos = GeoPosition.planar(
            x + radii[i] * math.cos(angles[i]), y + radii[i] * math.sin(angles[i])
        )
        for j in range(V):
            db_records.append(
                ImageRecord(f"db{i:05d}_{j:03d}", f"L{i:05d}", db_pos, db_views[i, :, j].copy())
            )
            q_records.append(
                ImageRecord(f"q{i:05d}_{j:03d}", f"Q{i:05d}", q_pos, q_views[i, :, j].copy())
            )
    return group_by_location(db_records, Side.DATASET), group_by_location(q_records, Side.QUERY)
