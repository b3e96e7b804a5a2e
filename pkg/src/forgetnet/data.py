"""Dataset ingestion and synthesis.

Tabular loaders parse the UCI income and credit files, image data comes
from IDX files with on-the-fly rotation, and two generators synthesize
controlled testbeds: a biased tabular mixture with a known Bayes rate
and a multi-factor shapes corpus for multi-task runs. All loaders and
generators are deterministic functions of their inputs and seeds.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .checkpoint import (CheckpointChecksumError, CheckpointTruncatedError,
                         CheckpointVersionError, decode_blocks, encode_blocks)

DATASET_MAGIC = b"FRGTD"
DATASET_VERSION = 1

S_KINDS = ("nuisance", "bias")


class DataFormatError(ValueError):
    """Raised for unparseable input files."""


@dataclass
class DatasetManifest:
    """Everything needed to reproduce a dataset's preprocessing."""

    name: str
    feature_width: int
    y_cardinality: list
    s_cardinality: list
    s_kind: list
    split_sizes: dict = field(default_factory=dict)
    recipe_hash: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for kind in self.s_kind:
            if kind not in S_KINDS:
                raise ValueError(f"s_kind must be one of {S_KINDS}, got {kind!r}")
        if not (len(self.y_cardinality) == len(self.s_cardinality) == len(self.s_kind)):
            raise ValueError("per-task cardinality lists must have equal length")

    def to_json(self):
        return json.dumps({"name": self.name, "feature_width": self.feature_width,
                           "y_cardinality": list(self.y_cardinality),
                           "s_cardinality": list(self.s_cardinality),
                           "s_kind": list(self.s_kind),
                           "split_sizes": self.split_sizes,
                           "recipe_hash": self.recipe_hash,
                           "extra": self.extra}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


class Dataset:
    """Feature matrix plus per-task y and s label vectors."""

    def __init__(self, x, y_tasks, s_tasks, manifest, aux=None):
        self.x = np.asarray(x, dtype=np.float64)
        self.y_tasks = [np.asarray(y, dtype=np.int64) for y in y_tasks]
        self.s_tasks = [np.asarray(s, dtype=np.int64) for s in s_tasks]
        self.manifest = manifest
        self.aux = dict(aux) if aux else {}
        if self.x.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if self.x.shape[1] != manifest.feature_width:
            raise ValueError(f"feature width {self.x.shape[1]} does not match "
                             f"manifest width {manifest.feature_width}")
        if len(self.y_tasks) != len(manifest.y_cardinality):
            raise ValueError("y task count does not match manifest")
        if len(self.s_tasks) != len(manifest.s_cardinality):
            raise ValueError("s task count does not match manifest")
        n = self.x.shape[0]
        labeled = [(l, c, "y") for l, c in zip(self.y_tasks, manifest.y_cardinality)]
        labeled += [(l, c, "s") for l, c in zip(self.s_tasks, manifest.s_cardinality)]
        for labels, card, what in labeled:
            if labels.shape != (n,):
                raise ValueError(f"{what} labels must be one per row")
            if n and (labels.min() < 0 or labels.max() >= card):
                raise ValueError(f"{what} label outside declared cardinality {card}")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def feature_width(self):
        return self.x.shape[1]

    @property
    def task_count(self):
        return len(self.y_tasks)

    @property
    def y(self):
        if self.task_count != 1:
            raise ValueError("multi-task dataset: use y_tasks[j]")
        return self.y_tasks[0]

    @property
    def s(self):
        if self.task_count != 1:
            raise ValueError("multi-task dataset: use s_tasks[j]")
        return self.s_tasks[0]

    def subset(self, indices):
        idx = np.asarray(indices)
        return Dataset(self.x[idx], [y[idx] for y in self.y_tasks],
                       [s[idx] for s in self.s_tasks], self.manifest,
                       aux={k: np.asarray(v)[idx] for k, v in self.aux.items()})

    def content_hash(self):
        digest = hashlib.sha256()
        digest.update(self.manifest.to_json().encode())
        digest.update(self.x.tobytes())
        for arr in self.y_tasks + self.s_tasks:
            digest.update(arr.tobytes())
        return digest.hexdigest()


def stratified_split(keys, fraction, seed):
    """Split indices into (first, second) parts, first getting ``fraction``
    of every key group (rounded); deterministic for a fixed seed."""
    keys = [tuple(np.atleast_1d(k)) for k in keys]
    if not 0 < fraction < 1:
        raise ValueError("fraction must be strictly between 0 and 1")
    groups = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    rng = np.random.default_rng(seed)
    first, second = [], []
    for k in sorted(groups):
        idx = np.array(groups[k])
        perm = idx[rng.permutation(len(idx))]
        cut = int(round(fraction * len(idx)))
        first.extend(perm[:cut])
        second.extend(perm[cut:])
    return np.array(sorted(first)), np.array(sorted(second))


# ---------------------------------------------------------------- tabular

def _zscore(train_col, test_col):
    mean = train_col.mean()
    std = train_col.std()
    if std < 1e-12:
        std = 1.0
    return (train_col - mean) / std, (test_col - mean) / std, mean, std


def _encode_tabular(train_rows, test_rows, numeric_cols, cat_cols):
    """One-hot categoricals (categories from the training rows only) and
    z-score numerics with training statistics. Returns both matrices and
    a recipe hash covering every fitted statistic."""
    recipe = hashlib.sha256()
    blocks_train, blocks_test = [], []
    for c in numeric_cols:
        tr = np.array([float(r[c]) for r in train_rows])
        te = np.array([float(r[c]) for r in test_rows])
        tr_z, te_z, mean, std = _zscore(tr, te)
        blocks_train.append(tr_z[:, None])
        blocks_test.append(te_z[:, None])
        recipe.update(struct.pack("<idd", c, mean, std))
    for c in cat_cols:
        cats = sorted({r[c] for r in train_rows})
        index = {v: i for i, v in enumerate(cats)}
        tr = np.zeros((len(train_rows), len(cats)))
        for i, r in enumerate(train_rows):
            tr[i, index[r[c]]] = 1.0
        te = np.zeros((len(test_rows), len(cats)))
        for i, r in enumerate(test_rows):
            if r[c] in index:  # unseen categories encode as all zeros
                te[i, index[r[c]]] = 1.0
        blocks_train.append(tr)
        blocks_test.append(te)
        recipe.update(repr((c, cats)).encode())
    x_train = np.hstack(blocks_train) if blocks_train else np.zeros((len(train_rows), 0))
    x_test = np.hstack(blocks_test) if blocks_test else np.zeros((len(test_rows), 0))
    return x_train, x_test, recipe


def _read_delimited(path, n_fields, sep):
    """Parse rows, returning (rows, malformed_count, missing_count).
    Rows containing '?' fields count as missing and are dropped."""
    rows, malformed, missing = [], 0, 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            parts = [p.strip() for p in (line.split(sep) if sep else line.split())]
            if len(parts) != n_fields:
                malformed += 1
                continue
            if "?" in parts:
                missing += 1
                continue
            rows.append(parts)
    if malformed:
        warnings.warn(f"{path}: skipped {malformed} malformed rows")
    return rows, malformed, missing


ADULT_NUMERIC = [0, 2, 4, 10, 11, 12]
ADULT_CATEGORICAL = [1, 3, 5, 6, 7, 8, 9, 13]
ADULT_TARGET_SHARE = 0.67


def _adult_age_threshold(ages, target=ADULT_TARGET_SHARE):
    """Integer age cut whose majority share is closest to the target."""
    best_t, best_gap = None, np.inf
    for t in range(int(ages.min()), int(ages.max())):
        p_over = float(np.mean(ages > t))
        gap = abs(max(p_over, 1.0 - p_over) - target)
        if gap < best_gap - 1e-12:
            best_t, best_gap = t, gap
    return best_t


def load_adult(train_path, test_path):
    """UCI income data: y = income above 50K, s = age binarized so the
    majority s share on the training split lands near 0.67."""
    train_rows, bad_tr, miss_tr = _read_delimited(train_path, 15, ",")
    test_rows, bad_te, miss_te = _read_delimited(test_path, 15, ",")
    if not train_rows or not test_rows:
        raise DataFormatError("income data: no usable rows parsed")

    def labels(rows):
        out = []
        for r in rows:
            tag = r[14].rstrip(".")  # the test file suffixes labels with '.'
            if tag not in (">50K", "<=50K"):
                raise DataFormatError(f"income data: unknown label {r[14]!r}")
            out.append(1 if tag == ">50K" else 0)
        return np.array(out)

    y_train, y_test = labels(train_rows), labels(test_rows)
    ages_train = np.array([float(r[0]) for r in train_rows])
    ages_test = np.array([float(r[0]) for r in test_rows])
    threshold = _adult_age_threshold(ages_train)
    s_train = (ages_train > threshold).astype(int)
    s_test = (ages_test > threshold).astype(int)

    x_train, x_test, recipe = _encode_tabular(train_rows, test_rows,
                                              ADULT_NUMERIC, ADULT_CATEGORICAL)
    recipe.update(struct.pack("<i", threshold))
    share = float(max(s_train.mean(), 1 - s_train.mean()))
    manifest = DatasetManifest(
        name="adult", feature_width=x_train.shape[1], y_cardinality=[2],
        s_cardinality=[2], s_kind=["bias"],
        split_sizes={"train": len(train_rows), "test": len(test_rows)},
        recipe_hash=recipe.hexdigest(),
        extra={"age_threshold": threshold, "s_majority_share": share,
               "rows_malformed": bad_tr + bad_te,
               "rows_dropped_missing": miss_tr + miss_te})
    train = Dataset(x_train, [y_train], [s_train], manifest)
    test = Dataset(x_test, [y_test], [s_test], manifest)
    return train, test, manifest


GERMAN_AGE_COLUMN = 12       # attribute 13 of the credit file
GERMAN_STATUS_COLUMN = 8     # attribute 9, personal status codes A91..A95
GERMAN_FEMALE_CODES = {"A92", "A95"}


def load_german(path, s_attr="age", split_seed=0):
    """UCI credit data: y = good credit; s defaults to age binarized at 25
    (majority share near 0.8), with ``s_attr='gender'`` deriving s from the
    personal-status codes instead. 70/30 stratified train/test split."""
    rows, bad, miss = _read_delimited(path, 21, None)
    if not rows:
        raise DataFormatError("credit data: no usable rows parsed")
    y = np.array([1 if r[20] == "1" else 0 for r in rows])
    for r in rows:
        if r[20] not in ("1", "2"):
            raise DataFormatError(f"credit data: unknown label {r[20]!r}")
    if s_attr == "age":
        s = np.array([1 if float(r[GERMAN_AGE_COLUMN]) > 25 else 0 for r in rows])
    elif s_attr == "gender":
        s = np.array([0 if r[GERMAN_STATUS_COLUMN] in GERMAN_FEMALE_CODES else 1
                      for r in rows])
    else:
        raise ValueError(f"s_attr must be 'age' or 'gender', got {s_attr!r}")

    def is_numeric(col):
        try:
            for r in rows:
                float(r[col])
            return True
        except ValueError:
            return False

    numeric_cols = [c for c in range(20) if is_numeric(c)]
    cat_cols = [c for c in range(20) if c not in numeric_cols]
    train_idx, test_idx = stratified_split(list(zip(y, s)), 0.7, split_seed)
    train_rows = [rows[i] for i in train_idx]
    test_rows = [rows[i] for i in test_idx]
    x_train, x_test, recipe = _encode_tabular(train_rows, test_rows,
                                              numeric_cols, cat_cols)
    recipe.update(f"s_attr={s_attr};split_seed={split_seed}".encode())
    share = float(max(s.mean(), 1 - s.mean()))
    manifest = DatasetManifest(
        name="german", feature_width=x_train.shape[1], y_cardinality=[2],
        s_cardinality=[2], s_kind=["bias"],
        split_sizes={"train": len(train_idx), "test": len(test_idx)},
        recipe_hash=recipe.hexdigest(),
        extra={"s_attr": s_attr, "s_majority_share": share,
               "rows_malformed": bad, "rows_dropped_missing": miss,
               "rows_parsed": len(rows)})
    train = Dataset(x_train, [y[train_idx]], [s[train_idx]], manifest)
    test = Dataset(x_test, [y[test_idx]], [s[test_idx]], manifest)
    return train, test, manifest


# ------------------------------------------------------------------ images

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path, expected_magic, rank):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 + 4 * rank:
        raise DataFormatError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: wrong IDX magic {magic:#010x}, "
                              f"expected {expected_magic:#010x}")
    dims = struct.unpack(f">{rank}I", buf[4:4 + 4 * rank])
    count = int(np.prod(dims))
    payload = buf[4 + 4 * rank:]
    if len(payload) != count:
        raise DataFormatError(f"{path}: truncated IDX payload, expected "
                              f"{count} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path):
    """Parse big-endian IDX image/label files; pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"IDX pair mismatch: {images.shape[0]} images "
                              f"vs {labels.shape[0]} labels")
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def rotate_image(image, angle_degrees):
    """Bilinear rotation about the center with zero padding."""
    if angle_degrees == 0:
        return image.copy()
    return ndimage.rotate(image, angle_degrees, reshape=False, order=1,
                          mode="constant", cval=0.0, prefilter=False)


def make_rot(images, labels, angles, rng, n_classes=None, jitter=0.0):
    """Rotate each image by one angle chosen uniformly; s = angle index.

    With jitter > 0 the applied angle is the bin angle plus a uniform
    offset in (-jitter, +jitter) degrees, so s labels a bin and every
    image passes through interpolation; at jitter 0 the zero-degree bin
    is an exact copy, which a probe can spot by its crispness alone.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1] != images.shape[2]:
        raise ValueError("rotation requires square images shaped (n, h, h)")
    angles = list(angles)
    if not angles:
        raise ValueError("need at least one angle")
    n = images.shape[0]
    s = rng.integers(0, len(angles), size=n)
    offsets = rng.uniform(-jitter, jitter, size=n) if jitter else np.zeros(n)
    out = np.empty((n, images.shape[1] * images.shape[2]))
    for i in range(n):
        out[i] = rotate_image(images[i], angles[s[i]] + offsets[i]).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if n else 1
    manifest = DatasetManifest(
        name="rot", feature_width=out.shape[1], y_cardinality=[n_classes],
        s_cardinality=[len(angles)], s_kind=["nuisance"],
        split_sizes={"all": n},
        recipe_hash=hashlib.sha256(repr((angles, jitter)).encode()).hexdigest(),
        extra={"angles": [float(a) for a in angles], "jitter": float(jitter)})
    return Dataset(out, [labels], [s], manifest)


# ------------------------------------------------------------- generators

@dataclass
class ShapesSpec:
    """Multi-factor shapes corpus: 3 shapes x 2 scales x 4 orientations x
    4 anchor positions, rendered with supersampled anti-aliasing.

    Centers are drawn uniformly within ``jitter`` of their anchor, so the
    position factor labels a quadrant bin rather than a fixed pixel
    location. jitter <= 0.08 keeps every shape fully inside the frame and
    every center strictly on its anchor's side of the axes.
    """

    count: int = 1000
    image_size: int = 32
    supersample: int = 2
    scales: tuple = (0.13, 0.20)
    angles: tuple = (0.0, 22.5, 45.0, 67.5)
    anchor: float = 0.2
    jitter: float = 0.07


def _render_shape(shape_idx, half_extent, angle_degrees, center, size, ss):
    grid = size * ss
    xs = (np.arange(grid) + 0.5) / grid - 0.5
    ys = 0.5 - (np.arange(grid) + 0.5) / grid
    px = xs[None, :] - center[0]
    py = ys[:, None] - center[1]
    theta = math.radians(angle_degrees)
    u = math.cos(theta) * px + math.sin(theta) * py
    v = -math.sin(theta) * px + math.cos(theta) * py
    r = half_extent
    if shape_idx == 0:    # square
        inside = (np.abs(u) <= r) & (np.abs(v) <= r)
    elif shape_idx == 1:  # ellipse
        inside = (u / r) ** 2 + (v / (0.62 * r)) ** 2 <= 1.0
    else:                 # triangle
        ax, ay = 0.0, 1.1 * r
        bx, by = -r, -0.8 * r
        cx, cy = r, -0.8 * r
        d1 = (bx - ax) * (v - ay) - (by - ay) * (u - ax)
        d2 = (cx - bx) * (v - by) - (cy - by) * (u - bx)
        d3 = (ax - cx) * (v - cy) - (ay - cy) * (u - cx)
        inside = (d1 >= 0) & (d2 >= 0) & (d3 >= 0)
    mask = inside.astype(np.float64)
    return mask.reshape(size, ss, size, ss).mean(axis=(1, 3))


def gen_shapes(spec, rng):
    """Two-task dataset: task 1 predicts shape with position as s (binned
    to 2 classes), task 2 predicts scale with orientation as s. Each image
    is rendered at a fresh jittered center, so samples sharing a factor
    combination still differ in pixel space and position cannot be read
    off as template identity."""
    a = spec.anchor
    anchors = np.array([(-a, -a), (-a, a), (a, -a), (a, a)])
    n = spec.count
    shape_f = rng.integers(0, 3, size=n)
    scale_f = rng.integers(0, 2, size=n)
    angle_f = rng.integers(0, 4, size=n)
    pos_f = rng.integers(0, 4, size=n)
    centers = anchors[pos_f]
    if spec.jitter:
        centers = centers + rng.uniform(-spec.jitter, spec.jitter, size=(n, 2))
    x = np.empty((n, spec.image_size ** 2))
    for i in range(n):
        img = _render_shape(int(shape_f[i]), spec.scales[scale_f[i]],
                            spec.angles[angle_f[i]], centers[i],
                            spec.image_size, spec.supersample)
        x[i] = img.reshape(-1)
    s1 = (pos_f >= 2).astype(np.int64)  # anchor x side: 2 position classes
    manifest = DatasetManifest(
        name="shapes", feature_width=spec.image_size ** 2,
        y_cardinality=[3, 2], s_cardinality=[2, 4],
        s_kind=["nuisance", "nuisance"], split_sizes={"all": n},
        recipe_hash=hashlib.sha256(repr(spec).encode()).hexdigest(),
        extra={"factors": ["shape", "scale", "orientation", "position"]})
    return Dataset(x, [shape_f, scale_f], [s1, angle_f], manifest,
                   aux={"position4": pos_f, "orientation": angle_f})


def bayes_rate_without_s(a_y, sigma):
    """Best possible accuracy on y when only the y channel is informative:
    Phi(a_y / sigma) for the symmetric two-class Gaussian mixture."""
    return 0.5 * (1.0 + math.erf(a_y / sigma / math.sqrt(2.0)))


def gen_biased_tabular(correlation, n, rng, a_y=1.0, a_s=1.0, sigma=1.0,
                       noise_dims=4, p_y=0.5):
    """Two correlated binary factors in a noisy linear mixture.

    s agrees with y with probability ``correlation``; channel 0 carries y
    at strength a_y, channel 1 carries s at strength a_s, remaining
    channels are pure noise. The no-s Bayes rate is known in closed form.
    """
    if not 0.0 <= correlation <= 1.0:
        raise ValueError("correlation must lie in [0, 1]")
    if n < 1:
        raise ValueError("need at least one sample")
    y = (rng.random(n) < p_y).astype(np.int64)
    agree = rng.random(n) < correlation
    s = np.where(agree, y, 1 - y).astype(np.int64)
    d = 2 + noise_dims
    x = sigma * rng.standard_normal((n, d))
    x[:, 0] += a_y * (2 * y - 1)
    x[:, 1] += a_s * (2 * s - 1)
    manifest = DatasetManifest(
        name="biased_tabular", feature_width=d, y_cardinality=[2],
        s_cardinality=[2], s_kind=["bias"], split_sizes={"all": n},
        recipe_hash=hashlib.sha256(
            repr((correlation, a_y, a_s, sigma, noise_dims, p_y)).encode()
        ).hexdigest(),
        extra={"correlation": correlation, "a_y": a_y, "a_s": a_s,
               "sigma": sigma, "p_y": p_y,
               "bayes_rate_without_s": bayes_rate_without_s(a_y, sigma)})
    return Dataset(x, [y], [s], manifest)


# ----------------------------------------------------------------- cache

def save_dataset(dataset, path):
    """Persist a dataset as manifest JSON plus checkpoint-encoded arrays."""
    header = json.dumps({"manifest": json.loads(dataset.manifest.to_json()),
                         "aux_keys": sorted(dataset.aux)}, sort_keys=True)
    blocks = [("x", dataset.x)]
    blocks += [(f"y{j}", arr) for j, arr in enumerate(dataset.y_tasks)]
    blocks += [(f"s{j}", arr) for j, arr in enumerate(dataset.s_tasks)]
    blocks += [(f"aux.{k}", np.asarray(dataset.aux[k], dtype=np.float64))
               for k in sorted(dataset.aux)]
    encoded = encode_blocks(blocks)
    header_bytes = header.encode("utf-8")
    payload = struct.pack("<I", len(header_bytes)) + header_bytes + encoded
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<B", DATASET_VERSION))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_dataset(path):
    """Read a dataset cache file; validates magic, version, and checksum."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < len(DATASET_MAGIC) + 1 + 4 + 4:
        raise CheckpointTruncatedError(f"{path}: file too short to be a dataset cache")
    if buf[:len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise CheckpointVersionError(f"{path}: bad magic, not a dataset cache")
    version = buf[len(DATASET_MAGIC)]
    if version != DATASET_VERSION:
        raise CheckpointVersionError(f"{path}: cache version {version}, "
                                     f"expected {DATASET_VERSION}")
    payload = buf[len(DATASET_MAGIC) + 1:-4]
    (stored_crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(payload) != stored_crc:
        raise CheckpointChecksumError(f"{path}: checksum mismatch, file is corrupt")
    (header_len,) = struct.unpack("<I", payload[:4])
    header = json.loads(payload[4:4 + header_len].decode("utf-8"))
    arrays = dict(decode_blocks(payload[4 + header_len:], origin=str(path)))
    manifest = DatasetManifest(**header["manifest"])
    tasks = len(manifest.y_cardinality)
    y_tasks = [arrays[f"y{j}"].astype(np.int64) for j in range(tasks)]
    s_tasks = [arrays[f"s{j}"].astype(np.int64) for j in range(tasks)]
    aux = {k: arrays[f"aux.{k}"] for k in header["aux_keys"]}
    return Dataset(arrays["x"], y_tasks, s_tasks, manifest, aux=aux)
