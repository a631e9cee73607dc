"""Frame-level ranking metric and embedding-change diagnostics.

``average_precision`` ranks all frames of the evaluation set by their
fused-head score and sums precision at each positive's rank, weighted by
the recall increment (non-interpolated; ties keep their original order).
``ecr`` measures how much an attack moved the post-cross-attention
embeddings: the mean over frames of the relative l2 change.

``evaluate`` ties both together for one (model, dataset, attack config)
triple; passing substitute parameters for crafting turns it into a
black-box transfer evaluation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, craft
from .data import AVDataset, AVSample
from .model import ModelParams, forward

ECR_NORM_FLOOR = 1e-8


@dataclass
class EvalReport:
    """Outcome of one evaluation: ranking quality plus embedding-change ratios.

    ``ecr_a``/``ecr_v`` are None for clean (no-attack) evaluations.
    ``scores``/``labels`` hold the per-sample fused-head traces in dataset
    order. The fingerprint identifies the (attack config, seed, n) recipe
    that produced the report.
    """

    map: float
    ecr_a: float | None
    ecr_v: float | None
    n_samples: int
    n_frames: int
    fingerprint: str
    scores: list
    labels: list
    ecr_skipped: int = 0

    def to_json_dict(self) -> dict:
        return {
            "map": self.map,
            "ecr_a": self.ecr_a,
            "ecr_v": self.ecr_v,
            "n_samples": self.n_samples,
            "n_frames": self.n_frames,
            "fingerprint": self.fingerprint,
            "ecr_skipped": self.ecr_skipped,
            "per_sample": [
                {"scores": [float(s) for s in sc], "labels": [int(x) for x in lb]}
                for sc, lb in zip(self.scores, self.labels)
            ],
        }


def average_precision(scores, labels) -> float:
    """Non-interpolated AP of a score ranking against binary labels.

    Frames are ranked by descending score with ties broken by original
    order; AP accumulates precision at each positive's rank times the
    recall step. Requires at least one positive label.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.ndim != 1 or s.shape[0] != y.shape[0]:
        raise ValueError(f"average_precision: scores {s.shape} vs labels {y.shape}")
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise ValueError("average_precision is undefined without positive labels")
    order = np.argsort(-s, kind="stable")
    ranked = (y[order] == 1)
    tp = np.cumsum(ranked)
    ranks = np.arange(1, s.shape[0] + 1)
    precision_at_hit = tp[ranked] / ranks[ranked]
    return float(precision_at_hit.sum() / n_pos)


def ecr(z_clean: np.ndarray, z_adv: np.ndarray, return_skipped: bool = False):
    """Mean relative l2 change of per-frame embeddings.

    Rows whose clean norm is at most 1e-8 are skipped (and counted); if
    every row is degenerate the ratio is undefined and rejected.
    """
    zc = np.asarray(z_clean, dtype=np.float64)
    za = np.asarray(z_adv, dtype=np.float64)
    if zc.shape != za.shape or zc.ndim != 2:
        raise ValueError(f"ecr: shapes {zc.shape} and {za.shape} must match and be 2-d")
    norms = np.sqrt(np.square(zc).sum(axis=1))
    live = norms > ECR_NORM_FLOOR
    skipped = int((~live).sum())
    if not np.any(live):
        raise ValueError("ecr: every clean embedding row is degenerate (norm <= 1e-8)")
    change = np.sqrt(np.square(za - zc).sum(axis=1))
    ratio = float((change[live] / norms[live]).mean())
    if return_skipped:
        return ratio, skipped
    return ratio


def config_fingerprint(cfg: AttackConfig | None, n_samples: int) -> str:
    payload = {"attack": None if cfg is None else cfg.__dict__, "n": n_samples}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def _samples(dataset) -> list[AVSample]:
    if isinstance(dataset, AVDataset):
        return list(dataset.samples)
    return list(dataset)


def evaluate(params: ModelParams, dataset, attack: AttackConfig | None = None,
             craft_params: ModelParams | None = None) -> EvalReport:
    """Score a dataset, optionally under attack, and aggregate mAP and ECR.

    Attacks are crafted against ``craft_params`` (defaults to ``params``,
    i.e. white-box); scores and embedding changes always come from
    ``params``, so a different ``craft_params`` gives the transfer setting.
    When attacking, per-sample randomness derives from (attack.seed, index).
    """
    samples = _samples(dataset)
    if not samples:
        raise ValueError("evaluate needs a non-empty dataset")
    if craft_params is None:
        craft_params = params

    pt = params.as_tensors(False)
    all_scores, all_labels = [], []
    ratios_a, ratios_v = [], []
    skipped = 0
    for i, sample in enumerate(samples):
        clean = forward(pt, sample.audio, sample.visual)
        if attack is None:
            scores = clean.s_av.data
        else:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([attack.seed, i])))
            pair = craft(craft_params, sample.audio, sample.visual, sample.labels, attack, rng=rng)
            adv = forward(pt, pair.x_adv_a, pair.x_adv_v)
            scores = adv.s_av.data
            ra, sa = ecr(clean.z_a.data, adv.z_a.data, return_skipped=True)
            rv, sv = ecr(clean.z_v.data, adv.z_v.data, return_skipped=True)
            ratios_a.append((ra, sample.frames - sa))
            ratios_v.append((rv, sample.frames - sv))
            skipped += sa + sv
        all_scores.append(np.asarray(scores, dtype=np.float64))
        all_labels.append(np.asarray(sample.labels))

    flat_scores = np.concatenate(all_scores)
    flat_labels = np.concatenate(all_labels)
    report = EvalReport(
        map=average_precision(flat_scores, flat_labels),
        ecr_a=_frame_weighted(ratios_a) if attack is not None else None,
        ecr_v=_frame_weighted(ratios_v) if attack is not None else None,
        n_samples=len(samples),
        n_frames=int(flat_labels.shape[0]),
        fingerprint=config_fingerprint(attack, len(samples)),
        scores=all_scores,
        labels=all_labels,
        ecr_skipped=skipped,
    )
    return report


def _frame_weighted(pairs) -> float:
    total = sum(n for _, n in pairs)
    if total == 0:
        return 0.0
    return float(sum(r * n for r, n in pairs) / total)


def transfer_attack(substitute: ModelParams, target: ModelParams, dataset,
                    attack: AttackConfig) -> EvalReport:
    """Craft on the substitute, score on the target (black-box transfer).

    With ``substitute is target`` this reproduces the white-box report
    exactly.
    """
    return evaluate(target, dataset, attack, craft_params=substitute)


def frame_accuracy(params: ModelParams, sample: AVSample, threshold: float = 0.5) -> float:
    trace = forward(params.as_tensors(False), sample.audio, sample.visual)
    pred = (trace.s_av.data >= threshold).astype(np.int8)
    return float((pred == sample.labels).mean())


def filter_correct_predictions(models, dataset, threshold: float = 0.5,
                               min_frame_accuracy: float = 1.0) -> list[AVSample]:
    """Samples that every given model predicts (near-)perfectly when clean.

    This is the evaluation pre-filter applied identically to all models
    under comparison: per model, keep samples whose clean frame accuracy
    reaches ``min_frame_accuracy``, then intersect across models.
    """
    samples = _samples(dataset)
    keep = []
    for sample in samples:
        if all(frame_accuracy(m, sample, threshold) >= min_frame_accuracy for m in models):
            keep.append(sample)
    return keep
