"""Miniature audio-visual active-speaker model.

Per-frame audio and visual encoders, one cross-attention block per
direction (audio queries visual and vice versa), a temporal self-attention
block over the concatenated streams, and three sigmoid prediction heads:
audio-only, visual-only, and the fused audio-visual head used at inference.

Parameters live as plain float32 numpy arrays in :class:`ModelParams`;
``as_tensors`` wraps them for a forward pass, with or without gradient
tracking. Checkpoints are a text header followed by raw little-endian
float32 blocks in ``PARAM_FIELDS`` order.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace
from types import SimpleNamespace

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

# Weight on the two auxiliary (single-modality) head losses in the
# combined training objective.
AUX_HEAD_WEIGHT = 0.4

SCORE_EPS = 1e-7

CHECKPOINT_MAGIC = "avasdlab-checkpoint"
CHECKPOINT_VERSION = 1

# Serialization order of parameter blocks. Cross-attention fields are
# absent when the architecture variant without cross-attention is used.
PARAM_FIELDS = (
    "enc_a_w", "enc_a_b", "enc_v_w", "enc_v_b",
    "cross_q_a", "cross_k_a", "cross_v_a",
    "cross_q_v", "cross_k_v", "cross_v_v",
    "self_q", "self_k", "self_v",
    "head_a_w", "head_a_b", "head_v_w", "head_v_b", "head_av_w", "head_av_b",
)

_CROSS_FIELDS = ("cross_q_a", "cross_k_a", "cross_v_a", "cross_q_v", "cross_k_v", "cross_v_v")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters, fixed at construction.

    ``audio_input_gain`` / ``visual_input_gain`` are fixed per-modality input
    scalings that bring the raw feature ranges (see ``data``) to unit scale
    before the encoders; attacks always act on the raw, pre-gain features.
    """

    d_audio: int = 16
    d_visual: int = 64
    embed: int = 16
    cross_attention: bool = True
    audio_input_gain: float = 250.0
    visual_input_gain: float = 0.5
    seed: int = 0


@dataclass
class ModelParams:
    config: ModelConfig
    values: dict = field(default_factory=dict)

    def fields(self):
        """(name, array) pairs in checkpoint order."""
        return [(name, self.values[name]) for name in PARAM_FIELDS if name in self.values]

    def as_tensors(self, requires_grad: bool = False) -> SimpleNamespace:
        wrapped = {name: Tensor(arr, requires_grad=requires_grad) for name, arr in self.values.items()}
        wrapped["config"] = self.config
        return SimpleNamespace(**wrapped)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.values.items()})


@dataclass
class ForwardTrace:
    """All intermediate sequences of one forward pass (length-K each).

    ``e_a``/``e_v`` are the per-frame encoder embeddings, ``z_a``/``z_v`` the
    post-cross-attention embeddings, and ``s_av``/``s_a``/``s_v`` the three
    head score sequences in [0, 1].
    """

    e_a: Tensor
    e_v: Tensor
    z_a: Tensor
    z_v: Tensor
    s_av: Tensor
    s_a: Tensor
    s_v: Tensor


def init_params(config: ModelConfig) -> ModelParams:
    """Seeded initialization; weight scales follow 1/sqrt(fan_in)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([0xA5D, config.seed])))
    e = config.embed

    def w(shape):
        fan_in = shape[0]
        return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(np.float32)

    values = {
        "enc_a_w": w((config.d_audio, e)),
        "enc_a_b": np.zeros(e, dtype=np.float32),
        "enc_v_w": w((config.d_visual, e)),
        "enc_v_b": np.zeros(e, dtype=np.float32),
        "self_q": w((2 * e, 2 * e)),
        "self_k": w((2 * e, 2 * e)),
        "self_v": w((2 * e, 2 * e)),
        "head_a_w": w((e, 1)),
        "head_a_b": np.zeros(1, dtype=np.float32),
        "head_v_w": w((e, 1)),
        "head_v_b": np.zeros(1, dtype=np.float32),
        "head_av_w": w((2 * e, 1)),
        "head_av_b": np.zeros(1, dtype=np.float32),
    }
    if config.cross_attention:
        for name in _CROSS_FIELDS:
            values[name] = w((e, e))
    return ModelParams(config, values)


def forward(pt: SimpleNamespace, x_a, x_v) -> ForwardTrace:
    """Run the model on one clip.

    ``pt`` is the tensor view from :meth:`ModelParams.as_tensors`; ``x_a``
    and ``x_v`` are (K, d_audio) / (K, d_visual) arrays or Tensors with an
    equal frame count K.
    """
    xa = x_a if isinstance(x_a, Tensor) else Tensor(x_a)
    xv = x_v if isinstance(x_v, Tensor) else Tensor(x_v)
    if xa.ndim != 2 or xv.ndim != 2:
        raise ShapeError(f"forward: inputs must be 2-d, got {xa.shape} and {xv.shape}")
    if xa.shape[0] != xv.shape[0]:
        raise ShapeError(f"forward: frame counts differ, audio {xa.shape[0]} vs visual {xv.shape[0]}")
    cfg: ModelConfig = pt.config
    if xa.shape[1] != cfg.d_audio or xv.shape[1] != cfg.d_visual:
        raise ShapeError(f"forward: feature dims {xa.shape[1]}/{xv.shape[1]} do not match "
                         f"model dims {cfg.d_audio}/{cfg.d_visual}")

    # tanh keeps embeddings sign-symmetric (cosine geometry can disperse
    # classes antipodally) and bounded, which the interaction losses rely on
    e_a = ad.tanh(ad.add_bias(ad.matmul(ad.mul(xa, cfg.audio_input_gain), pt.enc_a_w), pt.enc_a_b))
    e_v = ad.tanh(ad.add_bias(ad.matmul(ad.mul(xv, cfg.visual_input_gain), pt.enc_v_w), pt.enc_v_b))

    if cfg.cross_attention:
        z_a = ad.add(e_a, ad.scaled_dot_attention(
            ad.matmul(e_a, pt.cross_q_a), ad.matmul(e_v, pt.cross_k_a), ad.matmul(e_v, pt.cross_v_a)))
        z_v = ad.add(e_v, ad.scaled_dot_attention(
            ad.matmul(e_v, pt.cross_q_v), ad.matmul(e_a, pt.cross_k_v), ad.matmul(e_a, pt.cross_v_v)))
    else:
        z_a, z_v = e_a, e_v

    joint = ad.concat([z_a, z_v], axis=1)
    fused = ad.add(joint, ad.scaled_dot_attention(
        ad.matmul(joint, pt.self_q), ad.matmul(joint, pt.self_k), ad.matmul(joint, pt.self_v)))

    k = xa.shape[0]
    s_av = ad.sigmoid(ad.reshape(ad.add_bias(ad.matmul(fused, pt.head_av_w), pt.head_av_b), (k,)))
    s_a = ad.sigmoid(ad.reshape(ad.add_bias(ad.matmul(z_a, pt.head_a_w), pt.head_a_b), (k,)))
    s_v = ad.sigmoid(ad.reshape(ad.add_bias(ad.matmul(z_v, pt.head_v_w), pt.head_v_b), (k,)))
    return ForwardTrace(e_a=e_a, e_v=e_v, z_a=z_a, z_v=z_v, s_av=s_av, s_a=s_a, s_v=s_v)


def frame_cross_entropy(scores: Tensor, labels) -> Tensor:
    """Mean binary cross entropy of a score sequence against 0/1 labels.

    Scores are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    y = np.asarray(labels, dtype=np.float32)
    if scores.ndim != 1 or y.ndim != 1 or scores.shape[0] != y.shape[0]:
        raise ShapeError(f"frame_cross_entropy: scores {scores.shape} vs labels {y.shape}")
    s = ad.clip(scores, SCORE_EPS, 1.0 - SCORE_EPS)
    pos = ad.mul(ad.log(s), y)
    negv = ad.mul(ad.log(ad.sub(1.0, s)), 1.0 - y)
    return ad.neg(ad.tmean(ad.add(pos, negv)))


def multi_head_cross_entropy(trace: ForwardTrace, labels) -> Tensor:
    """Fused-head loss plus 0.4-weighted audio and visual head losses."""
    loss_av = frame_cross_entropy(trace.s_av, labels)
    loss_a = frame_cross_entropy(trace.s_a, labels)
    loss_v = frame_cross_entropy(trace.s_v, labels)
    return ad.add(loss_av, ad.mul(ad.add(loss_a, loss_v), AUX_HEAD_WEIGHT))


# checkpoint io -------------------------------------------------------------

def checkpoint_bytes(params: ModelParams, train_meta: dict | None = None) -> bytes:
    """Serialize: text header, ``BINARY`` separator, raw little-endian float32 blocks."""
    cfg = params.config
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "d_audio": cfg.d_audio,
        "d_visual": cfg.d_visual,
        "embed": cfg.embed,
        "cross_attention": cfg.cross_attention,
        "audio_input_gain": cfg.audio_input_gain,
        "visual_input_gain": cfg.visual_input_gain,
        "seed": cfg.seed,
        "train": train_meta or {},
        "fields": [[name, list(arr.shape)] for name, arr in params.fields()],
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode("utf-8"))
    buf.write(b"\nBINARY\n")
    for _, arr in params.fields():
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(params: ModelParams, path, train_meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, train_meta))


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Inverse of :func:`save_checkpoint`; returns (params, train_meta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = b"\nBINARY\n"
    cut = raw.find(sep)
    if cut < 0:
        raise ValueError(f"{path}: not a checkpoint file (missing binary separator)")
    try:
        header = json.loads(raw[:cut].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: malformed checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: unrecognized checkpoint format {header.get('format')!r}")
    cfg = ModelConfig(
        d_audio=header["d_audio"], d_visual=header["d_visual"], embed=header["embed"],
        cross_attention=header["cross_attention"], audio_input_gain=header["audio_input_gain"],
        visual_input_gain=header["visual_input_gain"], seed=header["seed"])
    blob = raw[cut + len(sep):]
    values = {}
    offset = 0
    for name, shape in header["fields"]:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise ValueError(f"{path}: truncated checkpoint at field {name!r}")
        values[name] = np.frombuffer(blob[offset:offset + nbytes], dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes after parameter blocks")
    return ModelParams(cfg, values), header.get("train", {})


def variant_config(config: ModelConfig, *, cross_attention: bool | None = None,
                   seed: int | None = None) -> ModelConfig:
    """Derive a config for a substitute model (e.g. the no-cross-attention variant)."""
    out = config
    if cross_attention is not None:
        out = replace(out, cross_attention=cross_attention)
    if seed is not None:
        out = replace(out, seed=seed)
    return out
