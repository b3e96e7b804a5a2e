"""The five-network forgetting model and its training objective.

An encoder maps inputs to a latent code z while a forget-gate maps the
same inputs to a mask m with components in (0, 1); the invariant code is
z_tilde = z * m. A decoder reconstructs the input from z (never from
z_tilde), a predictor reads z_tilde, and a discriminator reads a detached
copy of z_tilde so its gradients reach only the gate, never the encoder.
Multi-task models share one encoder and decoder across per-task
(gate, predictor, discriminator) triples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def glorot_uniform(fan_in, fan_out, rng):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class MLP:
    """Fully connected stack; hidden layers use relu unless stated."""

    def __init__(self, name, widths, rng, output_activation="linear",
                 hidden_activation="relu", params=None):
        if len(widths) < 2:
            raise ValueError(f"{name}: need at least input and output widths")
        self.name = name
        self.widths = list(widths)
        self.activations = [hidden_activation] * (len(widths) - 2) + [output_activation]
        if params is not None:
            self.layers = params
        else:
            self.layers = []
            for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
                w = Tensor(glorot_uniform(fan_in, fan_out, rng), requires_grad=True)
                b = Tensor(np.zeros(fan_out), requires_grad=True)
                self.layers.append((w, b))

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def output_dim(self):
        return self.widths[-1]

    def __call__(self, x, tape=None):
        h = x
        for (w, b), act in zip(self.layers, self.activations):
            h = T.add(T.matmul(h, w, tape), b, tape)
            if act == "relu":
                h = T.relu(h, tape)
            elif act == "sigmoid":
                h = T.sigmoid(h, tape)
            elif act != "linear":
                raise ValueError(f"unknown activation {act!r}")
        return h

    def named_params(self):
        out = []
        for i, (w, b) in enumerate(self.layers):
            out.append((f"{self.name}.L{i}.W", w))
            out.append((f"{self.name}.L{i}.b", b))
        return out


@dataclass
class ObjectiveWeights:
    """Loss weights: rho scales reconstruction, delta the adversarial term,
    lam the mask push toward {0, 1}. Grid searches step these in powers of 10."""

    rho: float = 0.0
    delta: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if min(self.rho, self.delta, self.lam) < 0:
            raise ValueError("objective weights must be nonnegative")


@dataclass
class ForwardBundle:
    """One task's view of a forward pass.

    z_tilde and z_tilde_detached are bitwise equal in value; gradients of
    anything computed from the detached copy never reach encoder weights.
    """

    z: Tensor
    m: Tensor
    z_tilde: Tensor
    z_tilde_detached: Tensor
    x_hat: Tensor | None
    y_logits: Tensor | None
    s_logits: Tensor | None


class ForgettingModel:
    """Encoder E, per-task forget-gates F, predictors P, discriminators D,
    and a shared decoder R, all sized from one architecture description."""

    def __init__(self, encoder, decoder, gates, predictors, discriminators):
        self.encoder = encoder
        self.decoder = decoder
        self.gates = gates
        self.predictors = predictors
        self.discriminators = discriminators
        if not (len(gates) == len(predictors) == len(discriminators)):
            raise ValueError("per-task network lists must have equal length")
        for g in gates:
            if g.output_dim != encoder.output_dim:
                raise ValueError("gate output width must equal the latent width")
            if g.activations[-1] != "sigmoid":
                raise ValueError("forget-gate output layer must be sigmoid")

    @classmethod
    def build(cls, input_dim, latent_dim, y_classes, s_classes, rng, hidden=64,
              encoder_layers=2, predictor_layers=1, decoder_layers=2,
              discriminator_layers=2):
        """Construct all networks with Glorot-uniform weights.

        ``y_classes`` / ``s_classes`` are ints for single-task models or
        equal-length lists for multi-task ones. A depth of n means n weight
        layers; hidden layers all use ``hidden`` units and relu.
        """
        y_list = [y_classes] if isinstance(y_classes, int) else list(y_classes)
        s_list = [s_classes] if isinstance(s_classes, int) else list(s_classes)
        if len(y_list) != len(s_list):
            raise ValueError("y_classes and s_classes must declare the same task count")

        def widths(n_layers, d_in, d_out):
            return [d_in] + [hidden] * (n_layers - 1) + [d_out]

        enc = MLP("encoder", widths(encoder_layers, input_dim, latent_dim), rng)
        dec = MLP("decoder", widths(decoder_layers, latent_dim, input_dim), rng)
        gates, preds, discs = [], [], []
        for j, (ny, ns) in enumerate(zip(y_list, s_list)):
            gates.append(MLP(f"gate{j}", widths(encoder_layers, input_dim, latent_dim),
                             rng, output_activation="sigmoid"))
            preds.append(MLP(f"predictor{j}", widths(predictor_layers, latent_dim, ny), rng))
            discs.append(MLP(f"discriminator{j}", widths(discriminator_layers, latent_dim, ns), rng))
        return cls(enc, dec, gates, preds, discs)

    @property
    def task_count(self):
        return len(self.gates)

    @property
    def input_dim(self):
        return self.encoder.input_dim

    @property
    def latent_dim(self):
        return self.encoder.output_dim

    def _check_input(self, x):
        if x.data.ndim != 2 or x.data.shape[1] != self.input_dim:
            raise ShapeError(f"input width {x.data.shape} does not match encoder "
                             f"input {self.input_dim}")

    def multi_task_forward(self, x, tape=None, with_reconstruction=True,
                           with_prediction=True, noise=None):
        """One bundle per task, sharing z and the reconstruction.

        ``noise`` (optional, same shape as z) is added to both z_tilde
        copies; used only by the information diagnostics.
        """
        x = T._as_tensor(x)
        self._check_input(x)
        z = self.encoder(x, tape)
        z_detached = T.stop_gradient(z)
        x_hat = self.decoder(z, tape) if with_reconstruction else None
        bundles = []
        for j in range(self.task_count):
            m = self.gates[j](x, tape)
            z_tilde = T.mul(z, m, tape)
            z_tilde_det = T.mul(z_detached, m, tape)
            if noise is not None:
                eps = Tensor(noise)
                z_tilde = T.add(z_tilde, eps, tape)
                z_tilde_det = T.add(z_tilde_det, eps, tape)
            y_logits = self.predictors[j](z_tilde, tape) if with_prediction else None
            s_logits = self.discriminators[j](z_tilde_det, tape)
            bundles.append(ForwardBundle(z=z, m=m, z_tilde=z_tilde,
                                         z_tilde_detached=z_tilde_det,
                                         x_hat=x_hat, y_logits=y_logits,
                                         s_logits=s_logits))
        return bundles

    def forward(self, x, tape=None, task=0, **kw):
        bundles = self.multi_task_forward(x, tape, **kw)
        if not 0 <= task < self.task_count:
            raise IndexError(f"task index {task} out of range for {self.task_count} tasks")
        return bundles[task]

    # parameter groups; the trainer steps these independently so freezing
    # one side of the adversarial game is just not stepping its optimizer
    def named_params(self):
        nets = [self.encoder, self.decoder]
        for j in range(self.task_count):
            nets += [self.gates[j], self.predictors[j], self.discriminators[j]]
        out = []
        for net in nets:
            out.extend(net.named_params())
        return out

    def main_named_params(self):
        nets = [self.encoder, self.decoder] + self.gates + self.predictors
        out = []
        for net in nets:
            out.extend(net.named_params())
        return out

    def discriminator_named_params(self):
        out = []
        for net in self.discriminators:
            out.extend(net.named_params())
        return out

    def param_arrays(self):
        return [p.data.copy() for _, p in self.named_params()]

    def load_param_arrays(self, arrays):
        params = self.named_params()
        if len(arrays) != len(params):
            raise ValueError("parameter count mismatch")
        for (_, p), a in zip(params, arrays):
            if p.data.shape != a.shape:
                raise ValueError("parameter shape mismatch")
            p.data = a.copy()

    # plain-array helpers used by evaluation and diagnostics
    def encode(self, x):
        """Return (z, [m per task], [z_tilde per task]) as plain arrays."""
        bundles = self.multi_task_forward(Tensor(np.asarray(x, dtype=np.float64)),
                                          tape=None, with_reconstruction=False,
                                          with_prediction=False)
        z = bundles[0].z.data
        return z, [b.m.data for b in bundles], [b.z_tilde.data for b in bundles]

    def predict_logits(self, x, task=0):
        b = self.forward(Tensor(np.asarray(x, dtype=np.float64)), task=task,
                         with_reconstruction=False)
        return b.y_logits.data

    def predict(self, x, task=0):
        return self.predict_logits(x, task).argmax(axis=1)


def objective(model, x, y_targets, weights, s_targets, tape=None, bundles=None,
              noise=None):
    """Full training objective and its components.

    J = L_y + rho * L_x + delta * L_s + lam * mean_batch(m^T (1 - m)),
    summed over tasks for the per-task terms. ``s_targets`` must be
    supplied by the caller (ground truth during discriminator updates,
    resampled labels during main updates).
    """
    if s_targets is None:
        raise ValueError("objective requires s targets (ground truth or resampled)")
    y_list = y_targets if isinstance(y_targets, (list, tuple)) else [y_targets]
    s_list = s_targets if isinstance(s_targets, (list, tuple)) else [s_targets]
    if len(y_list) != model.task_count or len(s_list) != model.task_count:
        raise ValueError("target list length must equal the task count")
    x = T._as_tensor(x)
    if bundles is None:
        bundles = model.multi_task_forward(x, tape, noise=noise)
    batch = x.data.shape[0]

    l_y = None
    l_s = None
    reg = None
    for b, y_t, s_t in zip(bundles, y_list, s_list):
        ly_j = T.cross_entropy_logits(b.y_logits, y_t, tape)
        ls_j = T.cross_entropy_logits(b.s_logits, s_t, tape)
        reg_j = T.scale(T.tsum(T.mul(b.m, T.sub(1.0, b.m, tape), tape), tape),
                        1.0 / batch, tape)
        l_y = ly_j if l_y is None else T.add(l_y, ly_j, tape)
        l_s = ls_j if l_s is None else T.add(l_s, ls_j, tape)
        reg = reg_j if reg is None else T.add(reg, reg_j, tape)
    l_x = T.mse(bundles[0].x_hat, x, tape)

    j_total = l_y
    if weights.rho:
        j_total = T.add(j_total, T.scale(l_x, weights.rho, tape), tape)
    if weights.delta:
        j_total = T.add(j_total, T.scale(l_s, weights.delta, tape), tape)
    if weights.lam:
        j_total = T.add(j_total, T.scale(reg, weights.lam, tape), tape)
    parts = {"l_y": float(l_y.data), "l_x": float(l_x.data),
             "l_s": float(l_s.data), "mask_reg": float(reg.data)}
    return j_total, parts, bundles


def discriminator_loss(model, x, s_targets, tape=None):
    """Cross-entropy of each discriminator against ground-truth s."""
    s_list = s_targets if isinstance(s_targets, (list, tuple)) else [s_targets]
    if len(s_list) != model.task_count:
        raise ValueError("target list length must equal the task count")
    bundles = model.multi_task_forward(T._as_tensor(x), tape,
                                       with_reconstruction=False,
                                       with_prediction=False)
    total = None
    for b, s_t in zip(bundles, s_list):
        ls = T.cross_entropy_logits(b.s_logits, s_t, tape)
        total = ls if total is None else T.add(total, ls, tape)
    return total, bundles


@dataclass
class MaskSummary:
    """Per-dimension mask behaviour over a data sample."""

    mean: np.ndarray
    variance: np.ndarray
    undecided_fraction: float  # fraction of dimensions with mean in (0.1, 0.9)


def mask_statistics(model, x):
    """Summarize each task's mask over a sample (1000+ rows recommended)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("mask_statistics requires a nonempty sample")
    _, masks, _ = model.encode(x)
    summaries = []
    for m in masks:
        mean = m.mean(axis=0)
        var = m.var(axis=0)
        undecided = float(np.mean((mean > 0.1) & (mean < 0.9)))
        summaries.append(MaskSummary(mean=mean, variance=var,
                                     undecided_fraction=undecided))
    return summaries
