"""SGD training of the speaker model under four loss modes.

Modes: plain multi-head cross entropy (``ce``), CE plus the weighted
cross-modal interaction terms (``interaction``), CE on a 1:1 mix of clean
and adversarial inputs (``adversarial``), and the combination of both
(``interaction+adversarial``). One batch is one clip; adversarial batches
average the clean and the attacked loss, with the attack crafted against
the current parameters.

With all interaction weights at zero the ``interaction`` mode builds
exactly the CE graph, so its training trajectory is bit-identical to
``ce`` under the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, craft
from .data import AVDataset
from .interaction import InteractionWeights, interaction_objective, interaction_terms
from .model import DivergenceError, ModelParams, forward, multi_head_cross_entropy

LOSS_MODES = ("ce", "interaction", "adversarial", "interaction+adversarial")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.01
    momentum: float = 0.9
    loss_mode: str = "ce"
    weights: InteractionWeights = field(default_factory=InteractionWeights)
    embedding_source: str = "encoder"
    attack: AttackConfig | None = None
    # in interaction+adversarial mode, whether the geometry terms also see
    # the attacked copies (CE always sees both halves of the batch)
    interaction_on_adversarial: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if "adversarial" in self.loss_mode and self.attack is None:
            raise ValueError(f"loss_mode {self.loss_mode!r} needs an attack config")


@dataclass
class TrainResult:
    params: ModelParams
    loss_curve: list
    skipped_terms: int = 0


def _batch_loss(pt, sample, adv_inputs, cfg: TrainConfig, skipped):
    """Loss of one batch (one clip, plus its attacked copy when mixing)."""
    use_interaction = cfg.loss_mode in ("interaction", "interaction+adversarial")
    trace = forward(pt, sample.audio, sample.visual)
    if adv_inputs is None:
        if use_interaction:
            return interaction_objective(trace, sample.labels, cfg.weights,
                                         cfg.embedding_source, skipped)
        return multi_head_cross_entropy(trace, sample.labels)

    adv_trace = forward(pt, adv_inputs[0], adv_inputs[1])
    loss = (multi_head_cross_entropy(trace, sample.labels)
            + multi_head_cross_entropy(adv_trace, sample.labels)) * 0.5
    if use_interaction:
        if cfg.interaction_on_adversarial:
            # geometry over the mixed batch: both halves contribute equally
            parts = [interaction_terms(t, sample.labels, cfg.weights,
                                       cfg.embedding_source, skipped)
                     for t in (trace, adv_trace)]
            parts = [p for p in parts if p is not None]
            if parts:
                mixed = parts[0] if len(parts) == 1 else (parts[0] + parts[1]) * 0.5
                loss = loss + mixed
        else:
            # geometry anchored on the clean half at full weight
            terms = interaction_terms(trace, sample.labels, cfg.weights,
                                      cfg.embedding_source, skipped)
            if terms is not None:
                loss = loss + terms
    return loss


def train(params: ModelParams, dataset, cfg: TrainConfig) -> TrainResult:
    """Run SGD with momentum over per-clip batches; returns updated params.

    The input ``params`` object is not modified. Raises
    :class:`DivergenceError` if the epoch loss stops being finite.
    """
    samples = list(dataset.samples) if isinstance(dataset, AVDataset) else list(dataset)
    if not samples:
        raise ValueError("train needs a non-empty dataset")
    params = params.copy()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([0x7121A17, cfg.seed])))
    velocity = {name: np.zeros_like(arr) for name, arr in params.values.items()}
    adversarial = "adversarial" in cfg.loss_mode
    lr = np.float32(cfg.learning_rate)
    mom = np.float32(cfg.momentum)

    curve = []
    skipped: list = []
    order = np.arange(len(samples))
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        for j in order:
            sample = samples[j]
            adv_sample = None
            if adversarial:
                attack_rng = np.random.Generator(np.random.PCG64(
                    np.random.SeedSequence([cfg.seed, epoch, int(j)])))
                pair = craft(params, sample.audio, sample.visual, sample.labels,
                             cfg.attack, rng=attack_rng)
                adv_sample = (pair.x_adv_a, pair.x_adv_v)

            pt = params.as_tensors(requires_grad=True)
            loss = _batch_loss(pt, sample, adv_sample, cfg, skipped)
            loss.backward()
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"training loss became non-finite at epoch {epoch}, "
                                      f"sample {int(j)} (loss={value!r})")
            epoch_loss += value
            for name, arr in params.values.items():
                grad = getattr(pt, name).grad
                if grad is None:
                    continue
                velocity[name] = mom * velocity[name] + grad
                params.values[name] = arr - lr * velocity[name]
        mean_loss = epoch_loss / len(samples)
        if not np.isfinite(mean_loss):
            raise DivergenceError(f"epoch {epoch} mean loss is non-finite")
        curve.append(mean_loss)
    return TrainResult(params=params, loss_curve=curve, skipped_terms=len(skipped))
