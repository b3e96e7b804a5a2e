"""Loaders, generators, and the dataset cache."""

import math
import struct
from pathlib import Path

import numpy as np
import pytest

from forgetnet.checkpoint import (CheckpointChecksumError,
                                  CheckpointVersionError)
from forgetnet.data import (DataFormatError, Dataset, DatasetManifest,
                            ShapesSpec, bayes_rate_without_s,
                            gen_biased_tabular, gen_shapes, load_adult,
                            load_dataset, load_german, load_idx, make_rot,
                            rotate_image, save_dataset, stratified_split)

FIXTURES = Path(__file__).parent / "fixtures"


# ------------------------------------------------------------- container

def tiny_manifest(width=3, y=2, s=2):
    return DatasetManifest(name="t", feature_width=width, y_cardinality=[y],
                           s_cardinality=[s], s_kind=["nuisance"])


def test_dataset_validates_label_ranges():
    m = tiny_manifest()
    with pytest.raises(ValueError, match="cardinality"):
        Dataset(np.zeros((2, 3)), [np.array([0, 2])], [np.array([0, 1])], m)


def test_dataset_validates_width():
    with pytest.raises(ValueError, match="width"):
        Dataset(np.zeros((2, 4)), [np.zeros(2, int)], [np.zeros(2, int)],
                tiny_manifest(width=3))


def test_bad_s_kind_rejected():
    with pytest.raises(ValueError, match="s_kind"):
        DatasetManifest(name="t", feature_width=1, y_cardinality=[2],
                        s_cardinality=[2], s_kind=["protected"])


def test_subset_and_hash_stability():
    ds = gen_biased_tabular(0.8, 50, np.random.default_rng(0))
    again = gen_biased_tabular(0.8, 50, np.random.default_rng(0))
    assert ds.content_hash() == again.content_hash()
    sub = ds.subset(np.arange(10))
    assert sub.n == 10
    assert np.array_equal(sub.y, ds.y[:10])


def test_stratified_split_preserves_class_balance():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, size=1000)
    a, b = stratified_split(list(y), 0.7, seed=3)
    assert len(a) + len(b) == 1000
    assert set(a).isdisjoint(b)
    assert abs(y[a].mean() - y.mean()) < 0.01
    a2, b2 = stratified_split(list(y), 0.7, seed=3)
    assert np.array_equal(a, a2) and np.array_equal(b, b2)


# --------------------------------------------------------------- tabular

ADULT_CATS = {1: ["Private", "Self-emp"], 3: ["HS-grad", "Bachelors"],
              5: ["Married", "Never-married"], 6: ["Sales", "Tech"],
              7: ["Husband", "Wife"], 8: ["White", "Black"],
              9: ["Male", "Female"], 13: ["United-States", "Mexico"]}


def write_adult_files(tmp_path, n_train=400, n_test=100, with_missing=0,
                      with_malformed=0):
    rng = np.random.default_rng(7)

    def rows(n, test_file):
        lines = []
        if test_file:
            lines.append("|1x3 Cross validator")
        for i in range(n):
            age = int(rng.integers(17, 80))
            fields = [""] * 15
            fields[0] = str(age)
            fields[2] = str(int(rng.integers(10000, 99999)))
            fields[4] = str(int(rng.integers(1, 16)))
            fields[10] = "0"
            fields[11] = "0"
            fields[12] = str(int(rng.integers(20, 60)))
            for c, cats in ADULT_CATS.items():
                fields[c] = cats[int(rng.integers(0, len(cats)))]
            label = ">50K" if rng.random() < 0.25 else "<=50K"
            fields[14] = label + ("." if test_file else "")
            lines.append(", ".join(fields))
        return lines

    train_lines = rows(n_train, False)
    for _ in range(with_missing):
        train_lines.append(train_lines[-1].replace("Private", "?", 1)
                           if "Private" in train_lines[-1]
                           else "?, " + train_lines[-1].split(", ", 1)[1])
    for _ in range(with_malformed):
        train_lines.append("this, is, not, enough, fields")
    train_path = tmp_path / "adult.data"
    test_path = tmp_path / "adult.test"
    train_path.write_text("\n".join(train_lines) + "\n")
    test_path.write_text("\n".join(rows(n_test, True)) + "\n")
    return train_path, test_path


def test_adult_loader_basics(tmp_path):
    train_path, test_path = write_adult_files(tmp_path)
    train, test, manifest = load_adult(train_path, test_path)
    assert train.n == 400 and test.n == 100
    # 6 z-scored numerics + 8 binary categorical pairs
    assert manifest.feature_width == 6 + 16
    assert set(np.unique(train.y)) <= {0, 1}
    share = max(train.s.mean(), 1 - train.s.mean())
    assert abs(share - 0.67) < 0.06  # tuned threshold on a random fixture
    # z-scoring used train statistics
    assert train.x[:, 0].mean() == pytest.approx(0.0, abs=1e-9)
    assert train.x[:, 0].std() == pytest.approx(1.0, abs=1e-9)


def test_adult_test_label_dot_variant(tmp_path):
    train_path, test_path = write_adult_files(tmp_path)
    _, test, _ = load_adult(train_path, test_path)
    assert set(np.unique(test.y)) <= {0, 1}


def test_adult_counts_missing_and_malformed(tmp_path):
    train_path, test_path = write_adult_files(tmp_path, with_missing=3,
                                              with_malformed=2)
    with pytest.warns(UserWarning, match="malformed"):
        _, _, manifest = load_adult(train_path, test_path)
    assert manifest.extra["rows_dropped_missing"] == 3
    assert manifest.extra["rows_malformed"] == 2


def test_adult_deterministic(tmp_path):
    train_path, test_path = write_adult_files(tmp_path)
    a, _, _ = load_adult(train_path, test_path)
    b, _, _ = load_adult(train_path, test_path)
    assert a.content_hash() == b.content_hash()


def test_adult_missing_file_rejected(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_adult(tmp_path / "nope.data", tmp_path / "nope.test")


GERMAN_CODES = {0: ["A11", "A12"], 2: ["A30", "A32"], 3: ["A40", "A42"],
                5: ["A61", "A65"], 6: ["A71", "A73"], 8: ["A91", "A92", "A93"],
                9: ["A101", "A103"], 11: ["A121", "A124"], 13: ["A141", "A143"],
                14: ["A151", "A152"], 16: ["A171", "A173"], 18: ["A191", "A192"],
                19: ["A201", "A202"]}


def write_german_file(tmp_path, n=1000, over25_share=0.8):
    rng = np.random.default_rng(11)
    lines = []
    for i in range(n):
        fields = [""] * 21
        for c in range(20):
            if c in GERMAN_CODES:
                codes = GERMAN_CODES[c]
                fields[c] = codes[int(rng.integers(0, len(codes)))]
            elif c == 12:
                over = i < int(round(over25_share * n))
                fields[c] = str(int(rng.integers(26, 70)) if over
                                else int(rng.integers(19, 26)))
            else:
                fields[c] = str(int(rng.integers(1, 100)))
        fields[20] = "1" if rng.random() < 0.7 else "2"
        lines.append(" ".join(fields))
    path = tmp_path / "german.data"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_german_loader_split_and_share(tmp_path):
    path = write_german_file(tmp_path)
    train, test, manifest = load_german(path)
    assert manifest.extra["rows_parsed"] == 1000
    assert train.n + test.n == 1000
    assert abs(train.n - 700) <= 5  # stratified rounding
    share = manifest.extra["s_majority_share"]
    assert 0.78 <= share <= 0.82
    combined = np.concatenate([train.s, test.s])
    assert max(combined.mean(), 1 - combined.mean()) == pytest.approx(share)


def test_german_split_deterministic(tmp_path):
    path = write_german_file(tmp_path)
    a_train, a_test, _ = load_german(path, split_seed=5)
    b_train, b_test, _ = load_german(path, split_seed=5)
    assert a_train.content_hash() == b_train.content_hash()
    assert a_test.content_hash() == b_test.content_hash()


def test_german_gender_derivation(tmp_path):
    path = write_german_file(tmp_path)
    train, test, manifest = load_german(path, s_attr="gender")
    assert manifest.extra["s_attr"] == "gender"
    s_all = np.concatenate([train.s, test.s])
    assert set(np.unique(s_all)) <= {0, 1}
    with pytest.raises(ValueError, match="s_attr"):
        load_german(path, s_attr="zodiac")


# ---------------------------------------------------------------- images

def test_idx_fixture_parses_to_scaled_bytes():
    images, labels = load_idx(FIXTURES / "tiny-images.idx",
                              FIXTURES / "tiny-labels.idx")
    assert images.shape == (10, 2, 2)
    assert np.array_equal(labels, np.arange(10))
    expected = np.arange(40, dtype=np.float64).reshape(10, 2, 2) / 255.0
    assert np.array_equal(images, expected)


def test_idx_wrong_magic(tmp_path):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(struct.pack(">IIII", 0x9999, 1, 2, 2) + bytes(4))
    with pytest.raises(DataFormatError, match="magic"):
        load_idx(bad, FIXTURES / "tiny-labels.idx")


def test_idx_truncated_payload(tmp_path):
    bad = tmp_path / "short.idx"
    bad.write_bytes(struct.pack(">IIII", 0x803, 10, 2, 2) + bytes(39))
    with pytest.raises(DataFormatError, match="truncated"):
        load_idx(bad, FIXTURES / "tiny-labels.idx")


def test_idx_count_mismatch(tmp_path):
    labels = tmp_path / "labels.idx"
    labels.write_bytes(struct.pack(">II", 0x801, 3) + bytes(3))
    with pytest.raises(DataFormatError, match="mismatch"):
        load_idx(FIXTURES / "tiny-images.idx", labels)


def gaussian_blob(size=28, sigma=4.0):
    c = (size - 1) / 2
    xs = np.arange(size)
    g = np.exp(-((xs - c) ** 2) / (2 * sigma ** 2))
    return np.outer(g, g)


def test_rotation_zero_angle_is_identity():
    img = gaussian_blob()
    rng = np.random.default_rng(0)
    ds = make_rot(img[None], np.array([3]), [0.0], rng)
    assert np.array_equal(ds.x[0], img.reshape(-1))


def test_rotation_roundtrip_error_bounded():
    img = gaussian_blob()
    back = rotate_image(rotate_image(img, 45.0), -45.0)
    assert np.max(np.abs(back - img)) <= 0.15


def test_make_rot_five_angles():
    rng = np.random.default_rng(2)
    images = np.stack([gaussian_blob()] * 500)
    labels = rng.integers(0, 10, size=500)
    ds = make_rot(images, labels, [0, 22.5, -22.5, 45, -45],
                  np.random.default_rng(3), n_classes=10)
    assert ds.manifest.s_cardinality == [5]
    counts = np.bincount(ds.s, minlength=5)
    assert counts.min() > 0
    assert ds.manifest.s_kind == ["nuisance"]


def test_make_rot_rejects_non_square():
    with pytest.raises(ValueError, match="square"):
        make_rot(np.zeros((3, 4, 5)), np.zeros(3, int), [0],
                 np.random.default_rng(0))


# ------------------------------------------------------------ generators

def test_shapes_factor_marginals():
    spec = ShapesSpec(count=100_000, image_size=4, supersample=1)
    ds = gen_shapes(spec, np.random.default_rng(1))
    n = spec.count
    for labels, k in ((ds.y_tasks[0], 3), (ds.y_tasks[1], 2),
                      (ds.s_tasks[0], 2), (ds.s_tasks[1], 4),
                      (ds.aux["position4"], 4)):
        freq = np.bincount(labels, minlength=k) / n
        se = math.sqrt((1 / k) * (1 - 1 / k) / n)
        assert np.all(np.abs(freq - 1 / k) <= 2 * se + 1e-12), (k, freq)


def test_shapes_deterministic_and_distinct():
    spec = ShapesSpec(count=200)
    a = gen_shapes(spec, np.random.default_rng(5))
    b = gen_shapes(spec, np.random.default_rng(5))
    assert a.content_hash() == b.content_hash()
    # different factor combinations give different images
    combo = (a.y_tasks[0], a.y_tasks[1], a.aux["orientation"], a.aux["position4"])
    keys = list(zip(*[np.asarray(c) for c in combo]))
    for i in range(1, len(keys)):
        if keys[i] != keys[0]:
            assert not np.array_equal(a.x[i], a.x[0])
            break


def test_shapes_pixels_in_unit_range_and_nonempty():
    ds = gen_shapes(ShapesSpec(count=96), np.random.default_rng(1))
    assert ds.x.min() >= 0.0 and ds.x.max() <= 1.0
    assert np.all(ds.x.sum(axis=1) > 0)  # every image shows a shape


def test_shapes_task_one_s_is_position_side():
    ds = gen_shapes(ShapesSpec(count=500), np.random.default_rng(2))
    assert np.array_equal(ds.s_tasks[0], (ds.aux["position4"] >= 2).astype(int))


def test_biased_tabular_independent_case_mi_near_zero():
    n = 100_000
    ds = gen_biased_tabular(0.5, n, np.random.default_rng(3))
    joint = np.zeros((2, 2))
    for yv, sv in zip(ds.y, ds.s):
        joint[yv, sv] += 1
    joint /= n
    py, ps = joint.sum(1), joint.sum(0)
    mi = sum(joint[i, j] * math.log(joint[i, j] / (py[i] * ps[j]))
             for i in range(2) for j in range(2) if joint[i, j] > 0)
    mi_corrected = mi - 1.0 / (2 * n)  # remove plug-in bias
    se = math.sqrt(2.0) / (2 * n)      # sd of chi-square(1) / 2n
    assert abs(mi_corrected) <= 3 * se


def test_biased_tabular_perfect_coupling():
    ds = gen_biased_tabular(1.0, 1000, np.random.default_rng(4))
    assert np.array_equal(ds.y, ds.s)


def test_biased_tabular_bayes_rate_helper():
    # channel value is +-a_y plus sigma noise; optimal rule thresholds at 0
    assert bayes_rate_without_s(1.0, 1.0) == pytest.approx(0.8413, abs=5e-4)
    rng = np.random.default_rng(5)
    ds = gen_biased_tabular(0.5, 200_000, rng, a_y=1.0, sigma=1.0)
    empirical = np.mean((ds.x[:, 0] > 0).astype(int) == ds.y)
    assert abs(empirical - bayes_rate_without_s(1.0, 1.0)) < 0.005


def test_biased_tabular_rejects_bad_args():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        gen_biased_tabular(1.5, 10, rng)
    with pytest.raises(ValueError):
        gen_biased_tabular(0.5, 0, rng)


# ----------------------------------------------------------------- cache

def test_dataset_cache_roundtrip(tmp_path):
    ds = gen_shapes(ShapesSpec(count=50), np.random.default_rng(8))
    path = tmp_path / "shapes.cache"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.content_hash() == ds.content_hash()
    assert np.array_equal(back.aux["position4"], ds.aux["position4"])
    assert back.manifest.name == "shapes"


def test_dataset_cache_corruption_detected(tmp_path):
    ds = gen_biased_tabular(0.7, 20, np.random.default_rng(9))
    path = tmp_path / "ds.cache"
    save_dataset(ds, path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x55
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointChecksumError):
        load_dataset(path)


def test_dataset_cache_wrong_magic(tmp_path):
    path = tmp_path / "ds.cache"
    path.write_bytes(b"WRONG" + bytes(30))
    with pytest.raises(CheckpointVersionError):
        load_dataset(path)
