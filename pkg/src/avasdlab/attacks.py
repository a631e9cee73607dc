"""Joint l-infinity adversarial attacks on the audio-visual model.

Three iterative signed-gradient methods share one core loop: plain
iteration with elementwise clipping to the budget box (``bim``), the same
with an l1-normalized gradient accumulated into a velocity (``mim``), and
restarted iteration from random points inside the box keeping the
strongest candidate (``pgd``).

Budgets derive from one master knob: ``eps_a = eps_av * 1e-4`` and
``eps_v = eps_av * 1e-1``. A modality mask zeroes the other budget and
returns that input bit-unchanged. Both modality gradients come from a
single backward pass per iteration, so the perturbations are optimized
jointly rather than per modality.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import ShapeError, Tensor
from .model import ModelParams, forward, frame_cross_entropy, multi_head_cross_entropy

AUDIO_BUDGET_FACTOR = 1e-4
VISUAL_BUDGET_FACTOR = 1e-1

METHODS = ("bim", "mim", "pgd")
MODALITIES = ("audio", "visual", "both")
SCENARIOS = ("training-aware", "inference-aware")

class AttackError(RuntimeError):
    """Attack iteration hit a non-finite gradient or objective."""

@dataclass(frozen=True)
class AttackConfig:
    """Full specification of one attack run.

    ``alpha_a`` / ``alpha_v`` default to min(2.5 * eps / steps, eps) per
    modality. ``momentum_decay`` only matters for mim, ``restarts`` and
    ``random_start`` only for pgd. ``clamp_visual`` additionally keeps the
    perturbed visual features inside [0, 1] for realism experiments.
    """

    method: str = "pgd"
    eps_av: float = 5.0
    steps: int = 10
    alpha_a: float | None = None
    alpha_v: float | None = None
    momentum_decay: float = 1.0
    restarts: int = 3
    random_start: bool = True
    modality: str = "both"
    scenario: str = "training-aware"
    seed: int = 0
    clamp_visual: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"attack method must be one of {METHODS}, got {self.method!r}")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.eps_av < 0:
            raise ValueError(f"eps_av must be >= 0, got {self.eps_av}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.momentum_decay < 0:
            raise ValueError(f"momentum_decay must be >= 0, got {self.momentum_decay}")
        if self.alpha_a is not None and self.alpha_a > self.eps_a + 1e-12:
            raise ValueError(f"alpha_a={self.alpha_a} exceeds audio budget {self.eps_a}")
        if self.alpha_v is not None and self.alpha_v > self.eps_v + 1e-12:
            raise ValueError(f"alpha_v={self.alpha_v} exceeds visual budget {self.eps_v}")

    @property
    def eps_a(self) -> float:
        return 0.0 if self.modality == "visual" else self.eps_av * AUDIO_BUDGET_FACTOR

    @property
    def eps_v(self) -> float:
        return 0.0 if self.modality == "audio" else self.eps_av * VISUAL_BUDGET_FACTOR

    def step_size_a(self) -> float:
        if self.alpha_a is not None:
            return self.alpha_a
        steps = max(self.steps, 1)
        return min(2.5 * self.eps_a / steps, self.eps_a)

    def step_size_v(self) -> float:
        if self.alpha_v is not None:
            return self.alpha_v
        steps = max(self.steps, 1)
        return min(2.5 * self.eps_v / steps, self.eps_v)

@dataclass
class AdversarialPair:
    """Perturbed inputs plus the perturbations that produced them.

    ``x_adv_* == x_* + delta_*`` holds bitwise by construction; masked
    modalities carry an all-zero delta and a bit-identical copy of the
    input. ``objective_trace`` holds the attack objective at each visited
    iterate, ending with the final point.
    """

    x_adv_a: np.ndarray
    x_adv_v: np.ndarray
    delta_a: np.ndarray
    delta_v: np.ndarray
    objective_trace: list
    final_loss: float
    restart_losses: list | None = None

def attack_objective(params: ModelParams, x_a, x_v, labels, scenario: str) -> float:
    """Value of the attacked loss: fused-head CE (inference-aware) or the
    full three-head training loss (training-aware)."""
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    trace = forward(params.as_tensors(False), x_a, x_v)
    if scenario == "inference-aware":
        return frame_cross_entropy(trace.s_av, labels).item()
    return multi_head_cross_entropy(trace, labels).item()

def _objective_value_and_grads(params: ModelParams, x_a, x_v, labels, scenario,
                               need_a: bool, need_v: bool):
    """One joint forward/backward; returns (grad_a, grad_v, loss)."""
    pt = params.as_tensors(False)
    xa_t = Tensor(x_a, requires_grad=need_a)
    xv_t = Tensor(x_v, requires_grad=need_v)
    trace = forward(pt, xa_t, xv_t)
    if scenario == "inference-aware":
        loss = frame_cross_entropy(trace.s_av, labels)
    else:
        loss = multi_head_cross_entropy(trace, labels)
    loss.backward()
    ga = xa_t.grad if xa_t.grad is not None else np.zeros_like(xa_t.data)
    gv = xv_t.grad if xv_t.grad is not None else np.zeros_like(xv_t.data)
    return ga, gv, loss.item()

def _l1_normalized(g: np.ndarray) -> np.ndarray:
    n = float(np.abs(g, dtype=np.float64).sum())
    if n < 1e-20:
        return np.zeros_like(g)
    return (g.astype(np.float64) / n).astype(np.float32)

def _iterate(params, x_a, x_v, labels, cfg: AttackConfig,
             init_a: np.ndarray | None, init_v: np.ndarray | None):
    """Shared attack loop. Returns (delta_a, delta_v, trace, final_loss)."""
    attack_a = cfg.eps_a > 0.0
    attack_v = cfg.eps_v > 0.0
    eps_a = np.float32(cfg.eps_a)
    eps_v = np.float32(cfg.eps_v)
    alpha_a = np.float32(cfg.step_size_a())
    alpha_v = np.float32(cfg.step_size_v())
    use_momentum = cfg.method == "mim"
    mu = np.float32(cfg.momentum_decay)

    delta_a = (init_a if init_a is not None else np.zeros_like(x_a)).astype(np.float32)
    delta_v = (init_v if init_v is not None else np.zeros_like(x_v)).astype(np.float32)
    vel_a = np.zeros_like(x_a) if use_momentum and attack_a else None
    vel_v = np.zeros_like(x_v) if use_momentum and attack_v else None

    steps = cfg.steps if (attack_a or attack_v) else 0
    trace = []
    for _ in range(steps):
        ga, gv, loss = _objective_value_and_grads(
            params, x_a + delta_a, x_v + delta_v, labels, cfg.scenario, attack_a, attack_v)
        if not np.isfinite(loss) or not np.all(np.isfinite(ga)) or not np.all(np.isfinite(gv)):
            raise AttackError(f"non-finite gradient/objective during {cfg.method} iteration "
                              f"(objective={loss!r})")
        trace.append(loss)
        if attack_a:
            if use_momentum:
                vel_a = mu * vel_a + _l1_normalized(ga)
                step = np.sign(vel_a)
            else:
                step = np.sign(ga)
            delta_a = np.clip(delta_a + alpha_a * step, -eps_a, eps_a)
        if attack_v:
            if use_momentum:
                vel_v = mu * vel_v + _l1_normalized(gv)
                step = np.sign(vel_v)
            else:
                step = np.sign(gv)
            delta_v = np.clip(delta_v + alpha_v * step, -eps_v, eps_v)
            if cfg.clamp_visual:
                # keep x + delta inside [0, 1] where feasible; the budget box wins
                delta_v = np.clip(np.clip(delta_v, -x_v, 1.0 - x_v), -eps_v, eps_v).astype(np.float32)

    final = attack_objective(params, x_a + delta_a, x_v + delta_v, labels, cfg.scenario)
    if not np.isfinite(final):
        raise AttackError(f"non-finite final objective after {cfg.method} iteration")
    trace.append(final)
    return delta_a, delta_v, trace, final

def _finalize(x_a, x_v, cfg, delta_a, delta_v, trace, final, restart_losses=None) -> AdversarialPair:
    if cfg.eps_a > 0.0:
        adv_a = (x_a + delta_a).astype(np.float32)
    else:
        adv_a, delta_a = x_a.copy(), np.zeros_like(x_a)
    if cfg.eps_v > 0.0:
        adv_v = (x_v + delta_v).astype(np.float32)
    else:
        adv_v, delta_v = x_v.copy(), np.zeros_like(x_v)
    return AdversarialPair(x_adv_a=adv_a, x_adv_v=adv_v, delta_a=delta_a, delta_v=delta_v,
                           objective_trace=trace, final_loss=final, restart_losses=restart_losses)

def _check_inputs(params: ModelParams, x_a, x_v, labels):
    x_a = np.asarray(x_a, dtype=np.float32)
    x_v = np.asarray(x_v, dtype=np.float32)
    y = np.asarray(labels)
    if x_a.ndim != 2 or x_v.ndim != 2 or x_a.shape[0] != x_v.shape[0] or y.shape[0] != x_a.shape[0]:
        raise ShapeError(f"attack inputs disagree: audio {x_a.shape}, visual {x_v.shape}, "
                         f"labels {y.shape}")
    return x_a, x_v, y

def bim(params: ModelParams, x_a, x_v, labels, cfg: AttackConfig) -> AdversarialPair:
    """Iterative signed-gradient steps with elementwise clipping to the budget box."""
    if cfg.method != "bim":
        raise ValueError(f"bim called with method={cfg.method!r} config")
    x_a, x_v, y = _check_inputs(params, x_a, x_v, labels)
    da, dv, trace, final = _iterate(params, x_a, x_v, y, cfg, None, None)
    return _finalize(x_a, x_v, cfg, da, dv, trace, final)

def mim(params: ModelParams, x_a, x_v, labels, cfg: AttackConfig) -> AdversarialPair:
    """bim with an accumulated velocity over l1-normalized gradients."""
    if cfg.method != "mim":
        raise ValueError(f"mim called with method={cfg.method!r} config")
    x_a, x_v, y = _check_inputs(params, x_a, x_v, labels)
    da, dv, trace, final = _iterate(params, x_a, x_v, y, cfg, None, None)
    return _finalize(x_a, x_v, cfg, da, dv, trace, final)

def pgd(params: ModelParams, x_a, x_v, labels, cfg: AttackConfig,
        rng: np.random.Generator | None = None) -> AdversarialPair:
    """Restarted bim from uniform random points in the box; keeps the
    candidate with the largest final objective (first on ties)."""
    if cfg.method != "pgd":
        raise ValueError(f"pgd called with method={cfg.method!r} config")
    x_a, x_v, y = _check_inputs(params, x_a, x_v, labels)
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed])))
    inner = replace(cfg, method="bim")

    best = None
    losses = []
    for _ in range(cfg.restarts):
        init_a = init_v = None
        if cfg.random_start:
            if cfg.eps_a > 0.0:
                init_a = rng.uniform(-cfg.eps_a, cfg.eps_a, size=x_a.shape).astype(np.float32)
            if cfg.eps_v > 0.0:
                init_v = rng.uniform(-cfg.eps_v, cfg.eps_v, size=x_v.shape).astype(np.float32)
        da, dv, trace, final = _iterate(params, x_a, x_v, y, inner, init_a, init_v)
        losses.append(final)
        if best is None or final > best[3]:
            best = (da, dv, trace, final)
    da, dv, trace, final = best
    return _finalize(x_a, x_v, cfg, da, dv, trace, final, restart_losses=losses)

_DISPATCH = {"bim": bim, "mim": mim, "pgd": pgd}

def craft(params: ModelParams, x_a, x_v, labels, cfg: AttackConfig,
          rng: np.random.Generator | None = None) -> AdversarialPair:
    """Run the configured attack method."""
    if cfg.method == "pgd":
        return pgd(params, x_a, x_v, labels, cfg, rng=rng)
    return _DISPATCH[cfg.method](params, x_a, x_v, labels, cfg)
