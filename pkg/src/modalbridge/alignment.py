"""Adversarial alignment of source and target latent spaces.

Two 1D-convolutional autoencoders (one per sensing technology) are
pretrained on reconstruction, then a small discriminator is trained to
tell source latents (label 1) from target latents (label 0). Encoders
are updated through the frozen discriminator with flipped labels; the
loop stops once the discriminator's honest loss climbs to the confusion
threshold, leaving both encoders emitting technology-invariant
embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn

LATENT_LEN = 100
ENCODER_MID_LEN = 200
DISC_HIDDEN = (100, 100, 100)


class AlignmentError(RuntimeError):
    pass


@dataclass
class AutoencoderModel:
    encoder_spec: nn.NetworkSpec
    encoder_weights: nn.NetworkWeights
    decoder_spec: nn.NetworkSpec
    decoder_weights: nn.NetworkWeights
    input_len: int
    latent_len: int = LATENT_LEN

    def encode(self, x) -> np.ndarray:
        out, _ = nn.forward(self.encoder_spec, self.encoder_weights, x)
        return out

    def reconstruct(self, x) -> np.ndarray:
        out, _ = nn.forward(self.decoder_spec, self.decoder_weights, self.encode(x))
        return out


@dataclass
class DiscriminatorModel:
    spec: nn.NetworkSpec
    weights: nn.NetworkWeights

    def raw(self, latent) -> float:
        out, _ = nn.forward(self.spec, self.weights, latent)
        return float(out[0])

    def predict(self, latent) -> float:
        """Mapped output (1 + tanh) / 2, inside (0, 1)."""
        return 0.5 * (1.0 + self.raw(latent))


@dataclass
class AlignmentSchedule:
    pretrain_epochs: int = 1000
    disc_low_threshold: float = 0.01
    disc_high_threshold: float = 0.5
    max_adversarial_iterations: int = 20
    total_epoch_budget: int = 1200
    disc_max_epochs: int = 400
    pretrain_lr: float = 0.05
    disc_lr: float = 0.02
    adversarial_lr: float = 0.02
    adversarial_passes: int = 1
    maintain_recon_epochs: int = 1
    maintain_lr: float = 0.02
    momentum: float = 0.0
    reconstruction_loss: str = "mse"
    flip_both_sides: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.disc_low_threshold < self.disc_high_threshold < 1.0):
            raise ValueError("need 0 < low threshold < high threshold < 1")
        if self.pretrain_epochs < 0 or self.max_adversarial_iterations < 0:
            raise ValueError("budgets must be non-negative")
        if self.total_epoch_budget <= 0 or self.disc_max_epochs <= 0:
            raise ValueError("budgets must be positive")


@dataclass
class IterationRecord:
    iteration: int
    disc_epochs: int
    disc_loss: float
    honest_loss: float
    mmd: float


@dataclass
class AlignmentReport:
    iterations: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = "cap"
    epochs_consumed: int = 0
    pre_align_mmd: float = float("nan")
    bandwidth: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "stop_reason": self.stop_reason,
            "epochs_consumed": self.epochs_consumed,
            "pre_align_mmd": self.pre_align_mmd,
            "bandwidth": self.bandwidth,
            "iterations": [
                {
                    "iteration": r.iteration,
                    "disc_epochs": r.disc_epochs,
                    "disc_loss": r.disc_loss,
                    "honest_loss": r.honest_loss,
                    "mmd": r.mmd,
                }
                for r in self.iterations
            ],
        }


def build_autoencoder(
    input_len: int,
    latent_len: int = LATENT_LEN,
    seed: int = 0,
    layer1_kernel: int | None = None,
    layer1_stride: int | None = None,
) -> AutoencoderModel:
    """Encoder input_len -> 200 -> latent; decoder is its mirror image.

    Geometry is auto-solved per layer (for 800 inputs: kernel 9, stride 4,
    then kernel 5, stride 2), overridable for the first layer. The conv
    layers use tanh: with a single shared kernel, zero biases and
    all-positive [0, 1] features, a relu layer dies outright whenever the
    kernel draw sums negative. (Relu on the input layer itself would be an
    identity on [0, 1] features.)
    """
    if input_len < 8:
        raise nn.ConfigError(f"autoencoder input length {input_len} too small")
    layer1 = nn.conv_layer(
        input_len, ENCODER_MID_LEN, "tanh", kernel_size=layer1_kernel, stride=layer1_stride
    )
    layer2 = nn.conv_layer(ENCODER_MID_LEN, latent_len, "tanh")
    enc_spec = nn.NetworkSpec((layer1, layer2))
    dec_spec = nn.NetworkSpec(
        (nn.mirror_layer(layer2, "tanh"), nn.mirror_layer(layer1, "identity"))
    )
    return AutoencoderModel(
        enc_spec,
        nn.init_weights(enc_spec, seed),
        dec_spec,
        nn.init_weights(dec_spec, seed + 1),
        input_len,
        latent_len,
    )


def build_discriminator(latent_len: int = LATENT_LEN, seed: int = 0) -> DiscriminatorModel:
    """Three relu layers of width 100 and a single tanh output unit."""
    layers = []
    prev = latent_len
    for width in DISC_HIDDEN:
        layers.append(nn.LayerSpec("dense", prev, width, activation="relu"))
        prev = width
    layers.append(nn.LayerSpec("dense", prev, 1, activation="tanh"))
    spec = nn.NetworkSpec(tuple(layers))
    return DiscriminatorModel(spec, nn.init_weights(spec, seed))


def encode_batch(model: AutoencoderModel, vectors) -> np.ndarray:
    return np.stack([model.encode(v) for v in vectors])


def pretrain_autoencoder(
    model: AutoencoderModel, data, schedule: AlignmentSchedule
) -> list[float]:
    """Reconstruction training over `data` (feature vectors in [0, 1]).

    Returns the per-epoch mean loss trace; the model is updated in place.
    """
    data = [np.ascontiguousarray(v, dtype=float) for v in data]
    if schedule.pretrain_epochs == 0:
        return []
    if len(data) < 1:
        raise AlignmentError("pretraining needs at least one instance")
    loss_kind = schedule.reconstruction_loss
    enc_state = nn.OptimizerState(schedule.pretrain_lr, schedule.momentum)
    dec_state = nn.OptimizerState(schedule.pretrain_lr, schedule.momentum)
    trace = []
    for epoch in range(schedule.pretrain_epochs):
        total = 0.0
        for vec in data:
            latent, enc_cache = nn.forward(model.encoder_spec, model.encoder_weights, vec)
            recon, dec_cache = nn.forward(model.decoder_spec, model.decoder_weights, latent)
            step_loss = nn.loss(loss_kind, recon, vec)
            if not math.isfinite(step_loss):
                raise AlignmentError(f"non-finite reconstruction loss at epoch {epoch}")
            dec_grads, dlatent = nn.backward(
                model.decoder_spec, model.decoder_weights, dec_cache, loss_kind, vec
            )
            enc_grads, _ = nn.backward_from(
                model.encoder_spec, model.encoder_weights, enc_cache, dlatent
            )
            nn.optimizer_step(model.decoder_weights, dec_grads, dec_state)
            nn.optimizer_step(model.encoder_weights, enc_grads, enc_state)
            total += step_loss
        trace.append(total / len(data))
    return trace


def disc_output_and_cache(disc: DiscriminatorModel, latent):
    out, cache = nn.forward(disc.spec, disc.weights, latent)
    return 0.5 * (1.0 + float(out[0])), cache


def disc_loss(disc: DiscriminatorModel, latents, labels) -> float:
    """Mean squared error of the mapped output against 0/1 labels."""
    total = 0.0
    for vec, label in zip(latents, labels):
        pred = disc.predict(vec)
        total += (pred - label) ** 2
    return total / len(latents)


def honest_disc_loss(disc, source_latents, target_latents) -> float:
    latents = list(source_latents) + list(target_latents)
    labels = [1.0] * len(source_latents) + [0.0] * len(target_latents)
    return disc_loss(disc, latents, labels)


def train_discriminator(
    disc: DiscriminatorModel, source_latents, target_latents, schedule: AlignmentSchedule
) -> tuple[float, int]:
    """Step-wise SGD until the source-vs-target mse drops to the low
    threshold or the epoch cap is hit. Returns (final loss, epochs used)."""
    if len(source_latents) < 1 or len(target_latents) < 1:
        raise AlignmentError("need latents on both sides")
    samples = []
    for i in range(max(len(source_latents), len(target_latents))):
        if i < len(source_latents):
            samples.append((np.ascontiguousarray(source_latents[i]), 1.0))
        if i < len(target_latents):
            samples.append((np.ascontiguousarray(target_latents[i]), 0.0))
    state = nn.OptimizerState(schedule.disc_lr, schedule.momentum)
    final = honest_disc_loss(disc, source_latents, target_latents)
    epochs = 0
    for _ in range(schedule.disc_max_epochs):
        if final <= schedule.disc_low_threshold:
            break
        for vec, label in samples:
            pred, cache = disc_output_and_cache(disc, vec)
            # d mse / d raw output: (pred - label) for the (1+tanh)/2 map
            grads, _ = nn.backward_from(
                disc.spec, disc.weights, cache, np.array([pred - label])
            )
            nn.optimizer_step(disc.weights, grads, state)
        epochs += 1
        final = disc_loss(disc, [s for s, _ in samples], [l for _, l in samples])
    return final, epochs


def adversarial_loss(disc, source_latents, target_latents) -> float:
    """Step-3 loss with the labels exchanged (source 0, target 1)."""
    latents = list(source_latents) + list(target_latents)
    labels = [0.0] * len(source_latents) + [1.0] * len(target_latents)
    return disc_loss(disc, latents, labels)


def _reconstruction_epoch(model: AutoencoderModel, batch, schedule: AlignmentSchedule,
                          enc_state: nn.OptimizerState, dec_state: nn.OptimizerState) -> None:
    """One reconstruction pass, keeping latents informative between
    adversarial updates (each training epoch also backpropagates the two
    autoencoders)."""
    kind = schedule.reconstruction_loss
    for vec in batch:
        vec = np.ascontiguousarray(vec, dtype=float)
        latent, enc_cache = nn.forward(model.encoder_spec, model.encoder_weights, vec)
        recon, dec_cache = nn.forward(model.decoder_spec, model.decoder_weights, latent)
        if not math.isfinite(nn.loss(kind, recon, vec)):
            raise AlignmentError("non-finite reconstruction loss during alignment")
        dec_grads, dlatent = nn.backward(
            model.decoder_spec, model.decoder_weights, dec_cache, kind, vec
        )
        enc_grads, _ = nn.backward_from(
            model.encoder_spec, model.encoder_weights, enc_cache, dlatent
        )
        nn.optimizer_step(model.decoder_weights, dec_grads, dec_state)
        nn.optimizer_step(model.encoder_weights, enc_grads, enc_state)


def adversarial_round(
    src_ae: AutoencoderModel,
    tgt_ae: AutoencoderModel,
    disc: DiscriminatorModel,
    source_batch,
    target_batch,
    schedule: AlignmentSchedule,
    src_state: nn.OptimizerState | None = None,
    tgt_state: nn.OptimizerState | None = None,
) -> None:
    """One encoder update pass through the frozen discriminator.

    Source features are pushed toward discriminator output 0 and target
    features toward 1 (flipped labels); discriminator weights are not
    touched. A zero learning rate is a no-op.
    """
    if schedule.adversarial_lr == 0.0:
        return
    src_state = src_state or nn.OptimizerState(schedule.adversarial_lr, schedule.momentum)
    tgt_state = tgt_state or nn.OptimizerState(schedule.adversarial_lr, schedule.momentum)
    work = []
    if schedule.flip_both_sides:
        work.append((src_ae, src_state, source_batch, 0.0))
        work.append((tgt_ae, tgt_state, target_batch, 1.0))
    else:
        work.append((src_ae, src_state, source_batch, 0.0))
    for _ in range(schedule.adversarial_passes):
        for model, state, batch, flipped in work:
            for vec in batch:
                vec = np.ascontiguousarray(vec, dtype=float)
                latent, enc_cache = nn.forward(
                    model.encoder_spec, model.encoder_weights, vec
                )
                pred, disc_cache = disc_output_and_cache(disc, latent)
                _, dlatent = nn.backward_from(
                    disc.spec, disc.weights, disc_cache, np.array([pred - flipped])
                )
                enc_grads, _ = nn.backward_from(
                    model.encoder_spec, model.encoder_weights, enc_cache, dlatent
                )
                nn.optimizer_step(model.encoder_weights, enc_grads, state)


class BatchCycler:
    """Per-class instance cycling: users round-robin, then replications.

    Instances are (vector, class_id, user_id, rep) tuples; each next()
    yields one vector per class, advancing through (rep, user) order with
    wraparound.
    """

    def __init__(self, instances):
        self.groups: dict[str, list] = {}
        for vec, class_id, user_id, rep in instances:
            self.groups.setdefault(class_id, []).append((rep, user_id, vec))
        for class_id in self.groups:
            self.groups[class_id].sort(key=lambda t: (t[0], t[1]))
        self.calls = 0

    def next(self) -> list[np.ndarray]:
        batch = [
            group[self.calls % len(group)][2]
            for _, group in sorted(self.groups.items())
        ]
        self.calls += 1
        return batch


def mmd(latents_a, latents_b, bandwidth: float | None = None, variant: str = "unbiased") -> float:
    """Squared maximum mean discrepancy with the Gaussian kernel
    exp(-||x - y||^2 / bandwidth^2).

    The unbiased estimator drops self-pairs (and may go slightly
    negative); the biased variant keeps them and is exactly zero on
    identical sample sets.
    """
    a = np.asarray(latents_a, dtype=float)
    b = np.asarray(latents_b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] < 2 or b.shape[0] < 2:
        raise AlignmentError("mmd needs at least 2 samples per side")
    if bandwidth is None:
        bandwidth = median_bandwidth(a, b)
    if bandwidth <= 0:
        raise AlignmentError("bandwidth must be positive")
    bw2 = bandwidth * bandwidth

    def gram(u, v):
        d2 = ((u[:, None, :] - v[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-d2 / bw2)

    kaa, kbb, kab = gram(a, a), gram(b, b), gram(a, b)
    m, n = a.shape[0], b.shape[0]
    if variant == "unbiased":
        term_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
        term_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    elif variant == "biased":
        term_a = kaa.sum() / (m * m)
        term_b = kbb.sum() / (n * n)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return float(term_a + term_b - 2.0 * kab.mean())


def median_bandwidth(latents_a, latents_b) -> float:
    """Median pairwise distance over the pooled sample (1.0 when degenerate)."""
    pooled = np.vstack([latents_a, latents_b])
    d = np.sqrt(((pooled[:, None, :] - pooled[None, :, :]) ** 2).sum(axis=2))
    vals = d[np.triu_indices(d.shape[0], k=1)]
    med = float(np.median(vals)) if vals.size else 0.0
    return med if med > 0 else 1.0


def align(
    src_ae: AutoencoderModel,
    tgt_ae: AutoencoderModel,
    disc: DiscriminatorModel,
    source_instances,
    target_instances,
    schedule: AlignmentSchedule,
) -> AlignmentReport:
    """Alternate discriminator training and adversarial encoder updates.

    `source_instances` / `target_instances` are (vector, class_id,
    user_id, rep) tuples covering the labeled class set on both sides.
    Stops when the honest discriminator loss on the freshest batches
    reaches the high threshold, or at the iteration/epoch cap.
    """
    src_classes = {c for _, c, _, _ in source_instances}
    tgt_classes = {c for _, c, _, _ in target_instances}
    if src_classes != tgt_classes:
        raise AlignmentError(
            f"labeled class sets differ: {sorted(src_classes)} vs {sorted(tgt_classes)}"
        )
    report = AlignmentReport()
    src_cycler = BatchCycler(source_instances)
    tgt_cycler = BatchCycler(target_instances)

    all_src = [vec for vec, *_ in source_instances]
    all_tgt = [vec for vec, *_ in target_instances]
    pre_src = encode_batch(src_ae, all_src)
    pre_tgt = encode_batch(tgt_ae, all_tgt)
    report.bandwidth = median_bandwidth(pre_src, pre_tgt)
    report.pre_align_mmd = mmd(pre_src, pre_tgt, report.bandwidth)

    src_state = nn.OptimizerState(schedule.adversarial_lr, schedule.momentum)
    tgt_state = nn.OptimizerState(schedule.adversarial_lr, schedule.momentum)
    maintain_states = None
    if schedule.maintain_recon_epochs and schedule.maintain_lr > 0:
        maintain_states = {
            "src": (
                nn.OptimizerState(schedule.maintain_lr, schedule.momentum),
                nn.OptimizerState(schedule.maintain_lr, schedule.momentum),
            ),
            "tgt": (
                nn.OptimizerState(schedule.maintain_lr, schedule.momentum),
                nn.OptimizerState(schedule.maintain_lr, schedule.momentum),
            ),
        }

    for iteration in range(schedule.max_adversarial_iterations):
        src_batch = [np.ascontiguousarray(v) for v in src_cycler.next()]
        tgt_batch = [np.ascontiguousarray(v) for v in tgt_cycler.next()]
        src_lat = encode_batch(src_ae, src_batch)
        tgt_lat = encode_batch(tgt_ae, tgt_batch)
        dloss, depochs = train_discriminator(disc, src_lat, tgt_lat, schedule)
        report.epochs_consumed += depochs

        src_batch2 = [np.ascontiguousarray(v) for v in src_cycler.next()]
        tgt_batch2 = [np.ascontiguousarray(v) for v in tgt_cycler.next()]
        adversarial_round(
            src_ae, tgt_ae, disc, src_batch2, tgt_batch2, schedule, src_state, tgt_state
        )
        report.epochs_consumed += 1
        if maintain_states is not None:
            for _ in range(schedule.maintain_recon_epochs):
                _reconstruction_epoch(src_ae, src_batch2, schedule, *maintain_states["src"])
                _reconstruction_epoch(tgt_ae, tgt_batch2, schedule, *maintain_states["tgt"])
                report.epochs_consumed += 1

        honest = honest_disc_loss(
            disc, encode_batch(src_ae, src_batch2), encode_batch(tgt_ae, tgt_batch2)
        )
        cur_mmd = mmd(
            encode_batch(src_ae, all_src),
            encode_batch(tgt_ae, all_tgt),
            report.bandwidth,
        )
        report.iterations.append(
            IterationRecord(iteration + 1, depochs, dloss, honest, cur_mmd)
        )
        if honest >= schedule.disc_high_threshold:
            report.stop_reason = "threshold"
            return report
        if report.epochs_consumed >= schedule.total_epoch_budget:
            report.stop_reason = "cap"
            return report
    report.stop_reason = "cap"
    return report
