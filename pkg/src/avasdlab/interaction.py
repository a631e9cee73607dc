"""Cross-modal interaction losses over per-frame embeddings.

Four differentiable terms shape the embedding geometry of a batch (one
clip): within each modality the speech and non-speech class centers are
pushed apart, members are pulled toward their own center, and across
modalities the paired audio/visual embeddings of each class are pulled
together, both center-wise (cosine) and sample-wise (euclidean).

Centers are the arithmetic means of the class members within the batch.
A batch can lack one class entirely (an all-speech or all-silent clip);
affected terms are then skipped, contribute zero, and are reported through
the optional ``skipped`` list rather than producing NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .model import ForwardTrace, multi_head_cross_entropy

TERM_NAMES = ("dispersion", "compactness", "alignment", "pair_distance")


@dataclass(frozen=True)
class InteractionWeights:
    """Nonnegative weights of the four terms in the combined objective."""

    dispersion: float = 0.0
    compactness: float = 0.0
    alignment: float = 0.0
    pair_distance: float = 0.0

    def __post_init__(self):
        for name in TERM_NAMES:
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"interaction weight {name} must be finite and >= 0, got {v}")

    def as_tuple(self):
        return (self.dispersion, self.compactness, self.alignment, self.pair_distance)

    @classmethod
    def uniform(cls, value: float) -> "InteractionWeights":
        return cls(value, value, value, value)


@dataclass
class Centers:
    """Per-batch class/modality centroids; ``None`` marks an empty class."""

    audio_speech: Tensor | None
    audio_nonspeech: Tensor | None
    visual_speech: Tensor | None
    visual_nonspeech: Tensor | None
    speech_index: np.ndarray
    nonspeech_index: np.ndarray

    @property
    def n_speech(self) -> int:
        return int(self.speech_index.size)

    @property
    def n_nonspeech(self) -> int:
        return int(self.nonspeech_index.size)


def _check_embeddings(e_a: Tensor, e_v: Tensor, labels) -> np.ndarray:
    y = np.asarray(labels)
    if e_a.ndim != 2 or e_v.ndim != 2:
        raise ShapeError(f"expected 2-d embeddings, got {e_a.shape} and {e_v.shape}")
    if y.ndim != 1 or e_a.shape[0] != y.shape[0] or e_v.shape[0] != y.shape[0]:
        raise ShapeError(f"embedding/label length mismatch: {e_a.shape[0]}/{e_v.shape[0]} vs {y.shape}")
    return y


def compute_centers(e_a: Tensor, e_v: Tensor, labels) -> Centers:
    """Class means of each modality's embeddings; empty classes become None."""
    y = _check_embeddings(e_a, e_v, labels)
    idx_s = np.flatnonzero(y == 1)
    idx_n = np.flatnonzero(y == 0)

    def center(e, idx):
        if idx.size == 0:
            return None
        return ad.mean_rows(ad.take_rows(e, idx))

    return Centers(
        audio_speech=center(e_a, idx_s),
        audio_nonspeech=center(e_a, idx_n),
        visual_speech=center(e_v, idx_s),
        visual_nonspeech=center(e_v, idx_n),
        speech_index=idx_s,
        nonspeech_index=idx_n,
    )


def _skip(skipped, term: str, what: str):
    if skipped is not None:
        skipped.append((term, what))


def class_dispersion_loss(c: Centers, skipped: list | None = None) -> Tensor:
    """Similarity of the two class centers, per modality (range [-2, 2]).

    Minimizing drives the speech and non-speech centers apart within each
    modality. Modalities missing a center are skipped.
    """
    terms = []
    if c.audio_speech is not None and c.audio_nonspeech is not None:
        terms.append(ad.cosine_similarity(c.audio_speech, c.audio_nonspeech))
    else:
        _skip(skipped, "dispersion", "audio")
    if c.visual_speech is not None and c.visual_nonspeech is not None:
        terms.append(ad.cosine_similarity(c.visual_speech, c.visual_nonspeech))
    else:
        _skip(skipped, "dispersion", "visual")
    if not terms:
        return Tensor(0.0)
    return terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])


def center_compactness_loss(e_a: Tensor, e_v: Tensor, labels, c: Centers,
                            skipped: list | None = None) -> Tensor:
    """Negated mean member-to-own-center similarity (range [-4, 4]).

    For each class, averages cos(center, member) over both modalities'
    members; the negation makes compact clusters cheap. Empty classes are
    skipped.
    """
    _check_embeddings(e_a, e_v, labels)
    parts = []
    for cls, idx, ca, cv in (
            ("speech", c.speech_index, c.audio_speech, c.visual_speech),
            ("nonspeech", c.nonspeech_index, c.audio_nonspeech, c.visual_nonspeech)):
        if idx.size == 0 or ca is None or cv is None:
            _skip(skipped, "compactness", cls)
            continue
        sims = ad.add(ad.rows_cosine(ad.take_rows(e_a, idx), ca),
                      ad.rows_cosine(ad.take_rows(e_v, idx), cv))
        parts.append(ad.tmean(sims))
    if not parts:
        return Tensor(0.0)
    total = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])
    return ad.neg(total)


def modality_alignment_loss(c: Centers, skipped: list | None = None) -> Tensor:
    """Negated similarity of audio and visual centers per class (range [-2, 2])."""
    terms = []
    if c.audio_speech is not None and c.visual_speech is not None:
        terms.append(ad.cosine_similarity(c.audio_speech, c.visual_speech))
    else:
        _skip(skipped, "alignment", "speech")
    if c.audio_nonspeech is not None and c.visual_nonspeech is not None:
        terms.append(ad.cosine_similarity(c.audio_nonspeech, c.visual_nonspeech))
    else:
        _skip(skipped, "alignment", "nonspeech")
    if not terms:
        return Tensor(0.0)
    total = terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])
    return ad.neg(total)


def pair_distance_loss(e_a: Tensor, e_v: Tensor, labels, skipped: list | None = None) -> Tensor:
    """Mean per-frame distance between the two modalities' embeddings, per class (>= 0)."""
    y = _check_embeddings(e_a, e_v, labels)
    parts = []
    for cls, idx in (("speech", np.flatnonzero(y == 1)), ("nonspeech", np.flatnonzero(y == 0))):
        if idx.size == 0:
            _skip(skipped, "pair_distance", cls)
            continue
        dists = ad.row_l2_distance(ad.take_rows(e_v, idx), ad.take_rows(e_a, idx))
        parts.append(ad.tmean(dists))
    if not parts:
        return Tensor(0.0)
    return parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])


def interaction_terms(trace: ForwardTrace, labels, weights: InteractionWeights,
                      embedding_source: str = "encoder",
                      skipped: list | None = None) -> Tensor | None:
    """Weighted sum of the four geometry terms; None if every weight is zero.

    ``embedding_source`` selects whether the terms see the encoder outputs
    or the post-cross-attention embeddings.
    """
    if embedding_source == "encoder":
        e_a, e_v = trace.e_a, trace.e_v
    elif embedding_source == "fused":
        e_a, e_v = trace.z_a, trace.z_v
    else:
        raise ValueError(f"embedding_source must be 'encoder' or 'fused', got {embedding_source!r}")

    w = weights
    if all(v == 0.0 for v in w.as_tuple()):
        return None
    centers = None
    if w.dispersion != 0.0 or w.compactness != 0.0 or w.alignment != 0.0:
        centers = compute_centers(e_a, e_v, labels)
    total = None

    def accumulate(term, weight):
        nonlocal total
        scaled = ad.mul(term, weight)
        total = scaled if total is None else ad.add(total, scaled)

    if w.dispersion != 0.0:
        accumulate(class_dispersion_loss(centers, skipped), w.dispersion)
    if w.compactness != 0.0:
        accumulate(center_compactness_loss(e_a, e_v, labels, centers, skipped), w.compactness)
    if w.alignment != 0.0:
        accumulate(modality_alignment_loss(centers, skipped), w.alignment)
    if w.pair_distance != 0.0:
        accumulate(pair_distance_loss(e_a, e_v, labels, skipped), w.pair_distance)
    return total


def interaction_objective(trace: ForwardTrace, labels, weights: InteractionWeights,
                          embedding_source: str = "encoder",
                          skipped: list | None = None) -> Tensor:
    """Combined training objective: multi-head CE plus the weighted terms.

    Terms with a zero weight are not evaluated at all, so the all-zero
    setting builds exactly the plain CE graph.
    """
    loss = multi_head_cross_entropy(trace, labels)
    terms = interaction_terms(trace, labels, weights, embedding_source, skipped)
    return loss if terms is None else ad.add(loss, terms)
