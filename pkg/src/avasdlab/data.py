"""Deterministic synthetic audio-visual clips with per-frame speaking labels.

Each clip belongs to one of four scenario cases. A hidden two-state
activity chain decides which frames carry the "someone is speaking" cue;
the cue is a fixed random direction per dataset, injected into the audio
and/or visual features depending on the case:

    speech_with_speaker    cue in both modalities, active frames labeled 1
    speech_without_speaker cue in audio only (the visible face is silent)
    no_audible_speaker     cue in neither modality
    speaker_without_speech cue in visual only (mouthing without sound)

Labels are 1 only on active frames of ``speech_with_speaker`` clips.
Audio features sit at a much smaller numeric scale than visual features
(raw-amplitude-like vs. standardized-pixel-like), which is what makes the
fixed 1:1000 audio/visual attack budget ratio meaningful.

Everything is a pure function of (seed, generator version): regeneration
is bit-identical, and the text save format round-trips exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

GENERATOR_VERSION = 1
DATASET_MAGIC = "avasdlab-dataset"

CASES = (
    "speech_with_speaker",
    "speech_without_speaker",
    "no_audible_speaker",
    "speaker_without_speech",
)

# Which modalities carry the cue, per case.
_CUE = {
    "speech_with_speaker": (True, True),
    "speech_without_speaker": (True, False),
    "no_audible_speaker": (False, False),
    "speaker_without_speech": (False, True),
}

DEFAULT_CASE_MIX = (0.4, 0.2, 0.2, 0.2)


class DatasetFormatError(ValueError):
    """A dataset file failed to parse; the message carries the line position."""


@dataclass
class AVSample:
    """One synthetic clip: (T, d_a) audio, (T, d_v) visual, (T,) binary labels."""

    audio: np.ndarray
    visual: np.ndarray
    labels: np.ndarray
    case: str
    seed: int

    @property
    def frames(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class GeneratorSpec:
    """Everything that determines the generated bytes besides n and seed.

    Noise has two parts: isotropic per-coordinate noise, and a handful of
    label-independent "distractor" directions with boosted variance
    (orthogonalized against the cue), mimicking the correlated nuisance
    structure of real features. ``audio_scale`` is deliberately three
    orders of magnitude below ``visual_scale``: audio features live at
    raw-amplitude-like numeric ranges, which is what makes the fixed
    1:1000 audio/visual attack-budget ratio meaningful.
    """

    d_audio: int = 16
    d_visual: int = 64
    t_min: int = 5
    t_max: int = 20
    audio_scale: float = 0.004
    visual_scale: float = 2.0
    snr: float = 3.0
    stay_active: float = 0.85
    stay_silent: float = 0.55
    audio_distractors: int = 4
    visual_distractors: int = 8
    distractor_scale: float = 2.0


@dataclass
class AVDataset:
    seed: int
    case_mix: tuple
    spec: GeneratorSpec
    samples: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


def _case_counts(case_mix, n: int) -> list[int]:
    """Largest-remainder allocation of n samples to the four cases."""
    fracs = np.asarray(case_mix, dtype=np.float64)
    if fracs.shape != (4,):
        raise ValueError(f"case_mix needs exactly four fractions, got {len(fracs)}")
    if np.any(fracs < 0) or abs(fracs.sum() - 1.0) > 1e-9:
        raise ValueError(f"case_mix fractions must be nonnegative and sum to 1, got {list(case_mix)}")
    raw = fracs * n
    counts = np.floor(raw).astype(int)
    remainder = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    for j in range(remainder):
        counts[order[j]] += 1
    return counts.tolist()


def _activity_chain(rng: np.random.Generator, t: int, stay_active: float, stay_silent: float) -> np.ndarray:
    """Two-state chain; starts from the stationary distribution."""
    leave_total = (1.0 - stay_active) + (1.0 - stay_silent)
    # two absorbing states have no unique stationary point; start fair
    p_active = (1.0 - stay_silent) / leave_total if leave_total > 0 else 0.5
    state = 1 if rng.random() < p_active else 0
    out = np.empty(t, dtype=np.int8)
    for i in range(t):
        out[i] = state
        stay = stay_active if state == 1 else stay_silent
        if rng.random() >= stay:
            state = 1 - state
    return out


def generate_dataset(seed: int, n_samples: int, case_mix=DEFAULT_CASE_MIX,
                     spec: GeneratorSpec = GeneratorSpec()) -> AVDataset:
    """Generate ``n_samples`` clips; fully determined by (seed, version, spec)."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    counts = _case_counts(case_mix, n_samples)
    master = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([GENERATOR_VERSION, seed])))

    def unit(d):
        v = master.standard_normal(d)
        return v / np.sqrt((v * v).sum())

    def distractor_basis(d, count, cue):
        dirs = []
        for _ in range(count):
            v = master.standard_normal(d)
            v -= (v @ cue) * cue  # keep the label signal out of the nuisance span
            dirs.append(v / np.sqrt((v * v).sum()))
        return np.array(dirs) if dirs else np.zeros((0, d))

    cue_a = unit(spec.d_audio)
    cue_v = unit(spec.d_visual)
    dis_a = distractor_basis(spec.d_audio, spec.audio_distractors, cue_a)
    dis_v = distractor_basis(spec.d_visual, spec.visual_distractors, cue_v)

    case_ids = np.repeat(np.arange(4), counts)
    master.shuffle(case_ids)

    samples = []
    for i, cid in enumerate(case_ids):
        case = CASES[cid]
        sample_seed = seed * 1_000_003 + i
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([GENERATOR_VERSION, seed, i])))
        t = int(rng.integers(spec.t_min, spec.t_max + 1))
        active = _activity_chain(rng, t, spec.stay_active, spec.stay_silent)
        in_audio, in_visual = _CUE[case]

        noise_a = rng.standard_normal((t, spec.d_audio))
        noise_v = rng.standard_normal((t, spec.d_visual))
        if spec.audio_distractors:
            noise_a += spec.distractor_scale * rng.standard_normal((t, spec.audio_distractors)) @ dis_a
        if spec.visual_distractors:
            noise_v += spec.distractor_scale * rng.standard_normal((t, spec.visual_distractors)) @ dis_v
        amp = active.astype(np.float64) * spec.snr
        audio = spec.audio_scale * (noise_a + (amp[:, None] * cue_a if in_audio else 0.0))
        visual = spec.visual_scale * (noise_v + (amp[:, None] * cue_v if in_visual else 0.0))

        labels = active.copy() if case == "speech_with_speaker" else np.zeros(t, dtype=np.int8)
        samples.append(AVSample(
            audio=audio.astype(np.float32), visual=visual.astype(np.float32),
            labels=labels, case=case, seed=sample_seed))
    return AVDataset(seed=seed, case_mix=tuple(float(f) for f in case_mix), spec=spec, samples=samples)


# file io -------------------------------------------------------------------
#
# Textual container: one JSON header line, then one JSON record per sample.
# Floats are written in base-10 shortest-round-trip form, so float32 values
# reload bit-identically on any platform. Field names are documented in
# docs/dataset_format.md.

def _floats(arr: np.ndarray) -> list:
    return [[float(x) for x in row] for row in arr]


def save_dataset(ds: AVDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format": DATASET_MAGIC,
            "version": GENERATOR_VERSION,
            "seed": ds.seed,
            "n": len(ds.samples),
            "case_mix": list(ds.case_mix),
            "spec": asdict(ds.spec),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, s in enumerate(ds.samples):
            rec = {
                "index": i,
                "case": s.case,
                "seed": s.seed,
                "labels": [int(x) for x in s.labels],
                "audio": _floats(s.audio),
                "visual": _floats(s.visual),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path) -> AVDataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file (missing header line)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: line 1: bad header JSON: {exc}") from exc
    if header.get("format") != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: line 1: unrecognized format {header.get('format')!r}")
    spec = GeneratorSpec(**header["spec"])
    ds = AVDataset(seed=header["seed"], case_mix=tuple(header["case_mix"]), spec=spec)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: line {lineno}: bad record JSON: {exc}") from exc
        try:
            audio = np.asarray(rec["audio"], dtype=np.float32)
            visual = np.asarray(rec["visual"], dtype=np.float32)
            labels = np.asarray(rec["labels"], dtype=np.int8)
            case = rec["case"]
            sample_seed = rec["seed"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path}: line {lineno}: bad sample record: {exc}") from exc
        if case not in CASES:
            raise DatasetFormatError(f"{path}: line {lineno}: unknown case {case!r}")
        if audio.ndim != 2 or visual.ndim != 2 or audio.shape[0] != labels.shape[0] \
                or visual.shape[0] != labels.shape[0]:
            raise DatasetFormatError(f"{path}: line {lineno}: inconsistent frame counts")
        ds.samples.append(AVSample(audio=audio, visual=visual, labels=labels,
                                   case=case, seed=sample_seed))
    if len(ds.samples) != header["n"]:
        raise DatasetFormatError(f"{path}: header announces {header['n']} samples, found {len(ds.samples)}")
    return ds
