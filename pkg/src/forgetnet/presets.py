"""Named datasets and tuned default configurations.

Each dataset name maps to a builder returning (train, test, extras);
extras may carry additional evaluation splits such as unseen rotation
angles. File-backed datasets read canonical UCI/IDX file names from
--data-dir; synthetic ones are generated with fixed seeds so a name
always denotes the same data.
"""

from __future__ import annotations

import numpy as np

from .data import (Dataset, ShapesSpec, gen_biased_tabular, gen_shapes,
                   load_adult, load_german, load_idx, make_rot,
                   stratified_split)
from .train import config_from_mapping

SEEN_ANGLES = (0.0, 22.5, -22.5, 45.0, -45.0)
UNSEEN_ANGLES_55 = (55.0, -55.0)
UNSEEN_ANGLES_65 = (65.0, -65.0)

# Tuned winning weights per dataset (desk scale, powers-of-10 search).
PRESETS = {
    "shapes": {"dataset": "shapes", "rho": 0.1, "delta": 10.0, "lam": 0.1,
               "epochs": 40, "learning_rate": 1e-3, "latent_dim": 8,
               "hidden": 64, "encoder_layers": 1, "decoder_layers": 2},
    "adult-like": {"dataset": "adult-like", "rho": 0.1, "delta": 20.0,
                   "lam": 0.1, "k": 10, "epochs": 150, "patience": 100,
                   "learning_rate": 1e-3, "latent_dim": 8, "hidden": 64,
                   "encoder_layers": 2},
    # a two-dim latent leaves no spare channel for the s leak to hide in;
    # small batches with a 20:1 schedule keep the tiny-corpus adversary fresh
    "german-like": {"dataset": "german-like", "rho": 0.1, "delta": 15.0,
                    "lam": 0.1, "k": 20, "epochs": 140, "patience": 140,
                    "batch_size": 32, "learning_rate": 1e-3, "latent_dim": 2,
                    "hidden": 64, "encoder_layers": 2},
    # the post-hoc probe is an MLP, so the training adversary needs the
    # extra layer to see (and squeeze out) everything the audit will see
    "digits-rot": {"dataset": "digits-rot", "rho": 0.1, "delta": 1.0,
                   "lam": 0.1, "k": 10, "epochs": 100, "patience": 100,
                   "learning_rate": 1e-3, "latent_dim": 16, "hidden": 64,
                   "encoder_layers": 2, "discriminator_layers": 3},
    "adult": {"dataset": "adult", "rho": 0.1, "delta": 20.0, "lam": 0.1,
              "k": 10, "epochs": 150, "patience": 100,
              "learning_rate": 1e-3, "latent_dim": 8, "hidden": 64,
              "encoder_layers": 2},
    "german": {"dataset": "german", "rho": 0.1, "delta": 15.0, "lam": 0.1,
               "k": 20, "epochs": 140, "patience": 140, "batch_size": 32,
               "learning_rate": 1e-3, "latent_dim": 2, "hidden": 64,
               "encoder_layers": 2},
    "mnist-rot": {"dataset": "mnist-rot", "rho": 0.1, "delta": 1.0,
                  "lam": 0.1, "k": 10, "epochs": 100, "patience": 100,
                  "learning_rate": 1e-3, "latent_dim": 16, "hidden": 64,
                  "encoder_layers": 2, "discriminator_layers": 3},
}


def preset_config(name):
    """Tuned TrainConfig for a named dataset."""
    if name not in PRESETS:
        raise KeyError(f"no preset for dataset {name!r}; "
                       f"known: {sorted(PRESETS)}")
    return config_from_mapping(PRESETS[name])


def _split(data, fraction, seed):
    cols = data.y_tasks + data.s_tasks
    keys = [tuple(r) for r in np.stack(cols, axis=1)]
    tr, te = stratified_split(keys, fraction, np.random.SeedSequence(seed))
    return data.subset(tr), data.subset(te)


def _build_shapes(data_dir, seed):
    # jittered rendering wants enough samples that shape recognition
    # generalises across positions instead of memorising exemplars
    data = gen_shapes(ShapesSpec(count=6000), np.random.default_rng(42 + seed))
    train, test = _split(data, 0.7, 7 + seed)
    return train, test, {}


def _build_adult_like(data_dir, seed):
    # p_y and the agreement rate put the s majority near 0.67 while the
    # y-channel alone cannot beat majority prediction of s
    data = gen_biased_tabular(correlation=0.7, n=6000,
                              rng=np.random.default_rng(5 + seed),
                              a_y=1.0, a_s=1.5, sigma=1.0, p_y=0.925)
    train, test = _split(data, 2 / 3, 11 + seed)
    return train, test, {}


def _build_german_like(data_dir, seed):
    # correlation and p_y chosen so the s majority lands near 0.79 while
    # a probe that merely copies its y-estimate cannot beat that majority
    data = gen_biased_tabular(correlation=0.82, n=1000,
                              rng=np.random.default_rng(6 + seed),
                              a_y=1.0, a_s=1.0, sigma=1.0, p_y=0.953)
    train, test = _split(data, 0.7, 12 + seed)
    return train, test, {}


def _rotated(images, labels, angles, rng, n_classes, copies=1, jitter=0.0):
    if copies > 1:
        images = np.tile(images, (copies, 1, 1))
        labels = np.tile(labels, copies)
    return make_rot(images, labels, list(angles), rng, n_classes=n_classes,
                    jitter=jitter)


def _build_digits_rot(data_dir, seed):
    from scipy import ndimage
    from sklearn.datasets import load_digits
    raw = load_digits()
    # 8x8 is too coarse for rotation to be a clean nuisance factor: digit
    # identity and angle alias into the same few pixels. Upsample to 16x16
    # before rotating so the two factors separate geometrically.
    images = np.stack([ndimage.zoom(im, 2, order=1) for im in raw.images])
    images = np.clip(images / 16.0, 0.0, 1.0)
    tr_idx, te_idx = stratified_split([int(v) for v in raw.target], 0.7,
                                      np.random.SeedSequence(13))
    rng = np.random.default_rng(14 + seed)
    train = _rotated(images[tr_idx], raw.target[tr_idx], SEEN_ANGLES, rng,
                     n_classes=10, copies=5)
    test = _rotated(images[te_idx], raw.target[te_idx], SEEN_ANGLES, rng,
                    n_classes=10, copies=5)
    unseen = _rotated(images[te_idx], raw.target[te_idx], UNSEEN_ANGLES_55,
                      rng, n_classes=10)
    return train, test, {"unseen_55": unseen}


def _require(data_dir, names):
    if data_dir is None:
        raise FileNotFoundError(f"this dataset reads {names}; pass --data-dir")
    paths = [data_dir / n for n in names]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise FileNotFoundError(f"missing dataset files: {missing}")
    return paths


def _build_adult(data_dir, seed):
    train_path, test_path = _require(data_dir, ["adult.data", "adult.test"])
    train, test = load_adult(train_path, test_path)
    return train, test, {}


def _build_german(data_dir, seed):
    (path,) = _require(data_dir, ["german.data"])
    train, test = load_german(path, split_seed=seed)
    return train, test, {}


def _build_mnist_rot(data_dir, seed):
    paths = _require(data_dir, ["train-images-idx3-ubyte",
                                "train-labels-idx1-ubyte",
                                "t10k-images-idx3-ubyte",
                                "t10k-labels-idx1-ubyte"])
    images, labels = load_idx(paths[0], paths[1])
    test_images, test_labels = load_idx(paths[2], paths[3])
    take, _ = stratified_split([int(v) for v in labels], 10_000 / len(labels),
                               np.random.SeedSequence(21))
    rng = np.random.default_rng(22 + seed)
    train = _rotated(images[take], labels[take], SEEN_ANGLES, rng, 10)
    test = _rotated(test_images, test_labels, SEEN_ANGLES, rng, 10)
    extras = {
        "unseen_55": _rotated(test_images, test_labels, UNSEEN_ANGLES_55,
                              rng, 10),
        "unseen_65": _rotated(test_images, test_labels, UNSEEN_ANGLES_65,
                              rng, 10)}
    return train, test, extras


DATASETS = {
    "shapes": _build_shapes,
    "adult-like": _build_adult_like,
    "german-like": _build_german_like,
    "digits-rot": _build_digits_rot,
    "adult": _build_adult,
    "german": _build_german,
    "mnist-rot": _build_mnist_rot,
}


def build_dataset(name, data_dir=None, seed=0):
    """(train, test, extras) for a named dataset."""
    if name not in DATASETS:
        raise KeyError(f"unknown dataset {name!r}; known: {sorted(DATASETS)}")
    return DATASETS[name](data_dir, seed)
