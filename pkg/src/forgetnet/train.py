"""Adversarial min-max training schedule and grid search.

Each optimization cycle runs k discriminator updates on ground-truth s
(everything else frozen) followed by one main update of the encoder,
gates, predictors, and decoder (discriminators frozen) in which the
discriminator targets are resampled per example from the empirical
s-distribution, driving the adversary toward chance. Discriminator
state persists across cycles. Freezing is implemented by giving every
network its own Adam state and only stepping the active side's
optimizers.
"""

from __future__ import annotations

import hashlib
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import stratified_split
from .nets import ForgettingModel, ObjectiveWeights, discriminator_loss, objective
from .tensor import Adam, Tensor, TrainingDiverged

LOG_COLUMNS = ("cycle", "L_y", "L_x", "L_s_disc_phase", "L_s_main_phase",
               "mask_reg", "val_Ay", "val_As_probe")


@dataclass
class TrainConfig:
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    k: int = 10
    learning_rate: float = 1e-4
    decay: float = 1e-4
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    dataset: str = ""
    latent_dim: int = 8
    hidden: int = 64
    encoder_layers: int = 2
    predictor_layers: int = 1
    decoder_layers: int = 2
    discriminator_layers: int = 2
    val_fraction: float = 0.1
    patience: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def config_hash(self):
        return hashlib.sha256(repr(self).encode()).hexdigest()[:16]


class EmpiricalSDistribution:
    """Class frequencies of s on the training split."""

    def __init__(self, labels):
        labels = np.asarray(labels)
        if labels.size == 0:
            raise ValueError("empty label set")
        self.classes, counts = np.unique(labels, return_counts=True)
        self.probs = counts / counts.sum()

    @property
    def majority_share(self):
        return float(self.probs.max())


def sample_random_s(dist, count, rng):
    """I.i.d. draws from the empirical s-distribution."""
    return rng.choice(dist.classes, size=count, p=dist.probs)


def build_model(config, dataset, rng):
    manifest = dataset.manifest
    return ForgettingModel.build(
        manifest.feature_width, config.latent_dim,
        list(manifest.y_cardinality), list(manifest.s_cardinality), rng,
        hidden=config.hidden, encoder_layers=config.encoder_layers,
        predictor_layers=config.predictor_layers,
        decoder_layers=config.decoder_layers,
        discriminator_layers=config.discriminator_layers)


def make_optimizers(model, config):
    """One Adam per network so freezing is just not stepping."""
    def adam(net):
        return Adam(net.named_params(), learning_rate=config.learning_rate,
                    decay=config.decay)

    main = [adam(model.encoder), adam(model.decoder)]
    main += [adam(net) for net in model.gates + model.predictors]
    disc = [adam(net) for net in model.discriminators]
    return main, disc


def _zero_all_grads(model):
    for _, p in model.named_params():
        p.grad = None


def discriminator_step(model, disc_optimizers, x, s_tasks):
    """One adversary update against ground-truth s; returns the loss."""
    tape = T.Tape()
    loss, _ = discriminator_loss(model, Tensor(x), s_tasks, tape)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDiverged("non-finite discriminator loss")
    _zero_all_grads(model)
    T.backward(tape, loss)
    for opt in disc_optimizers:
        opt.step()
    return value


def main_step(model, main_optimizers, x, y_tasks, s_targets, weights):
    """One update of encoder, gates, predictors, and decoder; the
    discriminators are frozen. Returns the objective components."""
    tape = T.Tape()
    j_total, parts, _ = objective(model, Tensor(x), y_tasks, weights,
                                  s_targets, tape)
    if not all(np.isfinite(v) for v in parts.values()):
        raise TrainingDiverged("non-finite training objective")
    _zero_all_grads(model)
    T.backward(tape, j_total)
    for opt in main_optimizers:
        opt.step()
    return parts


def _index_stream(n, rng):
    while True:
        yield from rng.permutation(n)


def _accuracy(pred, true):
    return float(np.mean(pred == true))


def _validation_metrics(model, val_split):
    """Mean predictor accuracy and per-task discriminator accuracy."""
    ay = np.mean([_accuracy(model.predict(val_split.x, task=j),
                            val_split.y_tasks[j])
                  for j in range(model.task_count)])
    bundles = model.multi_task_forward(Tensor(val_split.x),
                                       with_reconstruction=False,
                                       with_prediction=False)
    d_acc = [_accuracy(b.s_logits.data.argmax(axis=1), val_split.s_tasks[j])
             for j, b in enumerate(bundles)]
    return float(ay), d_acc


@dataclass
class TrainResult:
    model: ForgettingModel
    log: list
    config: TrainConfig
    diverged: bool = False
    early_stopped: bool = False
    epochs_run: int = 0
    n_disc_updates: int = 0
    n_main_updates: int = 0
    val_ay_history: list = field(default_factory=list)
    val_dacc_history: list = field(default_factory=list)
    d_floor: list = field(default_factory=list)


def train(config, data):
    """Run the k:1 adversarial schedule; returns the model and a log with
    one row per cycle. On a non-finite loss the model is rolled back to
    the last healthy epoch and training aborts with ``diverged`` set.
    """
    if data.n == 0:
        raise ValueError("empty dataset")
    seeds = np.random.SeedSequence(config.seed).spawn(5)
    init_rng = np.random.default_rng(seeds[0])
    batch_rng = np.random.default_rng(seeds[2])
    dstream_rng = np.random.default_rng(seeds[3])
    resample_rng = np.random.default_rng(seeds[4])

    if config.val_fraction > 0:
        keys = list(zip(*[list(t) for t in data.y_tasks + data.s_tasks]))
        fit_idx, val_idx = stratified_split(keys, 1.0 - config.val_fraction,
                                            seeds[1])
        fit, val = data.subset(fit_idx), data.subset(val_idx)
        if val.n == 0:
            val = None
    else:
        fit, val = data, None

    model = build_model(config, data, init_rng)
    main_opts, disc_opts = make_optimizers(model, config)
    dists = [EmpiricalSDistribution(s) for s in fit.s_tasks]
    d_floor = []
    if val is not None:
        d_floor = [EmpiricalSDistribution(s).majority_share
                   for s in val.s_tasks]

    result = TrainResult(model=model, log=[], config=config, d_floor=d_floor)
    d_stream = _index_stream(fit.n, dstream_rng)
    snapshot = model.param_arrays()
    best_val, best_epoch = -np.inf, -1
    cycle = 0

    for epoch in range(config.epochs):
        order = batch_rng.permutation(fit.n)
        epoch_rows = []
        try:
            for start in range(0, fit.n, config.batch_size):
                idx = order[start:start + config.batch_size]
                d_losses = []
                for _ in range(config.k):
                    d_idx = np.array(list(itertools.islice(d_stream, len(idx))))
                    d_losses.append(discriminator_step(
                        model, disc_opts, fit.x[d_idx],
                        [s[d_idx] for s in fit.s_tasks]))
                    result.n_disc_updates += 1
                s_random = [sample_random_s(dist, len(idx), resample_rng)
                            for dist in dists]
                parts = main_step(model, main_opts, fit.x[idx],
                                  [y[idx] for y in fit.y_tasks], s_random,
                                  config.weights)
                result.n_main_updates += 1
                cycle += 1
                epoch_rows.append({
                    "cycle": cycle, "L_y": parts["l_y"], "L_x": parts["l_x"],
                    "L_s_disc_phase": float(np.mean(d_losses)),
                    "L_s_main_phase": parts["l_s"],
                    "mask_reg": parts["mask_reg"],
                    "val_Ay": "", "val_As_probe": ""})
        except TrainingDiverged:
            model.load_param_arrays(snapshot)
            result.diverged = True
            result.log.extend(epoch_rows)
            break

        if val is not None:
            val_ay, val_dacc = _validation_metrics(model, val)
            result.val_ay_history.append(val_ay)
            result.val_dacc_history.append(val_dacc)
            if epoch_rows:
                epoch_rows[-1]["val_Ay"] = val_ay
                epoch_rows[-1]["val_As_probe"] = float(np.mean(val_dacc))
        result.log.extend(epoch_rows)
        result.epochs_run = epoch + 1
        snapshot = model.param_arrays()

        if val is not None:
            val_ay = result.val_ay_history[-1]
            if val_ay > best_val + 1e-6:
                best_val, best_epoch = val_ay, epoch
            plateaued = epoch - best_epoch >= config.patience
            at_floor = all(abs(acc - floor) <= 0.02 for acc, floor
                           in zip(result.val_dacc_history[-1], d_floor))
            if plateaued and at_floor:
                result.early_stopped = True
                break

    return result


GRID_KEYS = ("rho", "delta", "lam")


@dataclass
class GridResult:
    config: TrainConfig
    reports: list
    a_s_gap: float
    a_y: float
    param_arrays: list


def _grid_point(args):
    config, fit, rank, probe = args
    from .evaluate import ProbeSpec, evaluate_all
    result = train(config, fit)
    reports = evaluate_all(result.model, fit, rank,
                           probe=probe or ProbeSpec(),
                           config_hash=config.config_hash())
    gap = float(np.mean([r.a_s_gap for r in reports]))
    a_y = float(np.mean([r.a_y for r in reports]))
    return GridResult(config=config, reports=reports, a_s_gap=gap, a_y=a_y,
                      param_arrays=result.model.param_arrays())


def grid_search(base, grids, data, rank_fraction=0.2, jobs=1, probe=None):
    """Train every combination of the weight grids and rank the results
    by invariance gap (|a_s - optimal|, ascending) then accuracy."""
    if not grids:
        raise ValueError("empty grid")
    for key, values in grids.items():
        if key not in GRID_KEYS:
            raise ValueError(f"unknown grid key {key!r}; valid: {GRID_KEYS}")
        if not values:
            raise ValueError(f"empty value list for grid key {key!r}")
    keys = sorted(grids)
    combos = [dict(zip(keys, values))
              for values in itertools.product(*(grids[k] for k in keys))]

    label_keys = list(zip(*[list(t) for t in data.y_tasks + data.s_tasks]))
    fit_idx, rank_idx = stratified_split(label_keys, 1.0 - rank_fraction,
                                         seed=base.seed)
    fit, rank = data.subset(fit_idx), data.subset(rank_idx)

    tasks = []
    for combo in combos:
        weights = ObjectiveWeights(**{**vars(base.weights), **combo})
        tasks.append((replace(base, weights=weights), fit, rank, probe))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_grid_point, tasks))
    else:
        results = [_grid_point(t) for t in tasks]
    return sorted(results, key=lambda r: (r.a_s_gap, -r.a_y))


# ----------------------------------------------------------- config files

_CONFIG_FLOAT = ("rho", "delta", "lam", "learning_rate", "decay",
                 "val_fraction")
_CONFIG_INT = ("k", "epochs", "batch_size", "seed", "latent_dim", "hidden",
               "encoder_layers", "predictor_layers", "decoder_layers",
               "discriminator_layers", "patience")
_CONFIG_STR = ("dataset",)
CONFIG_KEYS = _CONFIG_FLOAT + _CONFIG_INT + _CONFIG_STR


def config_from_mapping(pairs):
    """Build a TrainConfig from flat key=value pairs; unknown keys are
    rejected rather than ignored so typos cannot silently change runs."""
    weights = {}
    fields = {}
    for key, raw in pairs.items():
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        if key in ("rho", "delta", "lam"):
            weights[key] = float(raw)
        elif key in _CONFIG_FLOAT:
            fields[key] = float(raw)
        elif key in _CONFIG_INT:
            fields[key] = int(raw)
        else:
            fields[key] = str(raw)
    return TrainConfig(weights=ObjectiveWeights(**weights), **fields)


def parse_config_text(text):
    """Flat key=value lines; '#' starts a comment; blanks ignored."""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {lineno}: expected key=value, got {body!r}")
        key, value = body.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ValueError(f"line {lineno}: empty key or value")
        if key in pairs:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def config_from_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_mapping(parse_config_text(fh.read()))


def config_to_mapping(config):
    """Flat key=value view of a config; round-trips config_from_mapping."""
    out = {"rho": config.weights.rho, "delta": config.weights.delta,
           "lam": config.weights.lam}
    for key in _CONFIG_FLOAT + _CONFIG_INT + _CONFIG_STR:
        if key not in ("rho", "delta", "lam"):
            out[key] = getattr(config, key)
    return out
