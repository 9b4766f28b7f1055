"""Pre-training, meta-auxiliary training and test-time adaptation.

Pre-training minimises primary + auxiliary loss with Adam and a cosine
step-size schedule. Meta-auxiliary training adapts a copy of the parameters
to each sampled task with a few auxiliary-loss gradient steps, then moves
the shared and primary parameters along the primary-loss gradient taken at
the adapted copy (first-order meta-gradient). Test-time adaptation runs the
same auxiliary-loss steps on a single unlabeled stack.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .spectral import SamplingGrid, SpectralCube
from .synth import Triple, augment_flips, crop_patches
from .tinynet.net import AUXILIARY, PRIMARY, SHARED, NetConfig, ParamSet, forward, loss_and_grad


class DivergenceError(FloatingPointError):
    def __init__(self, phase: str, step: int, detail: str = ""):
        super().__init__(f"non-finite value in {phase} at step {step}{': ' + detail if detail else ''}")
        self.phase = phase
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    pretrain_lr: float = 1e-4
    pretrain_epochs: int = 300
    pretrain_steps: int | None = None
    batch_size: int = 8
    cosine: bool = True
    alpha: float = 1e-2
    beta: float = 5e-5
    n_inner: int = 5
    meta_steps: int = 0
    meta_batch: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("pretrain_lr", "alpha", "beta"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.pretrain_lr == 0 or self.beta == 0:
            raise ValueError("learning rates must be positive")
        if self.n_inner < 0:
            raise ValueError("n_inner must be >= 0")
        if self.batch_size < 1 or self.meta_batch < 0:
            raise ValueError("batch sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class TrainLog:
    seed: int = 0
    config: dict = field(default_factory=dict)
    records: list[tuple[int, str, str, float]] = field(default_factory=list)
    wall_time: dict[str, float] = field(default_factory=dict)

    def add(self, step: int, phase: str, kind: str, value: float) -> None:
        self.records.append((step, phase, kind, float(value)))

    def values(self, phase: str, kind: str) -> list[float]:
        return [v for _, p, k, v in self.records if p == phase and k == kind]

    def extend(self, other: "TrainLog") -> None:
        self.records.extend(other.records)
        self.wall_time.update(other.wall_time)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "phase", "kind", "value"])
        for step, phase, kind, value in self.records:
            w.writerow([step, phase, kind, repr(value)])
        return buf.getvalue()


@dataclass
class PatchData:
    """Training tensors: ``stacks`` (P, 3M, h, w), ``truths`` (P, B, h, w), ``css`` (P, 3, B)."""

    stacks: np.ndarray
    truths: np.ndarray
    css: np.ndarray

    def __len__(self) -> int:
        return self.stacks.shape[0]

    @classmethod
    def from_triples(cls, triples: Sequence[Triple], patch: int = 16, stride: int = 8) -> "PatchData":
        stacks, truths, css = [], [], []
        for t in triples:
            xs = crop_patches(t.input, patch, stride)
            ys = crop_patches(t.truth, patch, stride)
            stacks.extend(xs)
            truths.extend(ys)
            css.extend([t.css.data] * len(xs))
        if not stacks:
            raise ValueError("no training patches")
        return cls(np.stack(stacks), np.stack(truths), np.stack(css))

    def batch(self, idx, rng: np.random.Generator):
        """Gather ``idx`` with an independent random flip per sample."""
        xs, ys = [], []
        for i in idx:
            x, y = augment_flips(self.stacks[i], self.truths[i], seed=rng)
            xs.append(x)
            ys.append(y)
        return np.stack(xs), np.stack(ys), self.css[np.asarray(idx)]


class Objective:
    """Loss/gradient callables for a fixed network configuration and light set."""

    def __init__(self, illums, net: NetConfig):
        self.illums = np.atleast_2d(np.asarray(illums, dtype=np.float64))
        self.net = net

    def aux(self, params: ParamSet, stack):
        loss, grads, _ = loss_and_grad(params, (stack, None, None), self.illums, self.net, "aux")
        return loss, grads

    def pri(self, params: ParamSet, stack, truth, css):
        loss, grads, _ = loss_and_grad(params, (stack, truth, css), self.illums, self.net, "pri")
        return loss, grads

    def pre(self, params: ParamSet, stack, truth, css):
        return loss_and_grad(params, (stack, truth, css), self.illums, self.net, "pre")

    def predict(self, params: ParamSet, stack) -> np.ndarray:
        return forward(params, stack, self.illums, self.net).final


def _check_finite(phase: str, step: int, loss: float, grads: dict) -> None:
    if not math.isfinite(loss):
        raise DivergenceError(phase, step, f"loss={loss}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(phase, step, f"gradient of {name}")


class Adam:
    def __init__(self, params: ParamSet, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: ParamSet, grads: dict, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params.tensors[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def cosine_lr(base: float, step: int, total: int) -> float:
    return 0.5 * base * (1 + math.cos(math.pi * step / max(total, 1)))


def pretrain_steps(config: TrainConfig, n_samples: int) -> int:
    if config.pretrain_steps is not None:
        return config.pretrain_steps
    return config.pretrain_epochs * math.ceil(n_samples / config.batch_size)


def pretrain(params: ParamSet, data: PatchData, objective: Objective, config: TrainConfig):
    """Adam on primary + auxiliary loss over shuffled, flipped mini-batches."""
    if len(data) == 0:
        raise ValueError("empty training corpus")
    params = params.copy()
    log = TrainLog(seed=config.seed, config=config.to_dict())
    total = pretrain_steps(config, len(data))
    rng = np.random.default_rng([config.seed, 1])
    opt = Adam(params, config.pretrain_lr)
    order, pos = rng.permutation(len(data)), 0
    t0 = time.perf_counter()
    for step in range(total):
        if pos + config.batch_size > len(data):
            order, pos = rng.permutation(len(data)), 0
        idx = order[pos : pos + config.batch_size]
        pos += config.batch_size
        loss, grads, parts = objective.pre(params, *data.batch(idx, rng))
        _check_finite("pretrain", step, loss, grads)
        log.add(step, "pretrain", "pre", loss)
        log.add(step, "pretrain", "pri", parts["pri"])
        log.add(step, "pretrain", "aux", parts["aux"])
        lr = cosine_lr(config.pretrain_lr, step, total) if config.cosine else config.pretrain_lr
        opt.step(params, grads, lr)
    log.wall_time["pretrain"] = time.perf_counter() - t0
    return params, log


AuxGrad = Callable[[ParamSet, np.ndarray], tuple]


def _adapt(params: ParamSet, stack, alpha: float, steps: int, aux_grad: AuxGrad, phase: str = "adapt"):
    """Gradient descent on the auxiliary loss; also returns the first gradient and the losses seen."""
    out = params.copy()
    first, losses = None, []
    for step in range(steps):
        loss, grads = aux_grad(out, stack)
        _check_finite(phase, step, loss, grads)
        if first is None:
            first = grads
        losses.append(loss)
        for k, g in grads.items():
            out.tensors[k] -= alpha * g
    return out, first, losses


def inner_adapt(params: ParamSet, stack, alpha: float, steps: int, aux_grad: AuxGrad) -> ParamSet:
    """``steps`` plain gradient-descent updates of every parameter on the auxiliary loss.

    Only the input stack is used. ``aux_grad(params, stack)`` returns
    ``(loss, {name: gradient})``, e.g. :meth:`Objective.aux`.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    return _adapt(params, stack, alpha, steps, aux_grad)[0]


def meta_train(params: ParamSet, data: PatchData, objective: Objective, config: TrainConfig):
    """First-order meta-auxiliary training.

    Per meta step, ``meta_batch`` tasks are drawn. Each task adapts a copy of
    the batch-start parameters with ``n_inner`` auxiliary steps; the primary
    gradient at the adapted copy is summed over tasks and applied with step
    ``beta`` to the shared and primary tensors only. The auxiliary tensors
    take one ``alpha`` step per task along the auxiliary gradient at the
    batch-start parameters. All task gradients are evaluated from the same
    batch-start state, so task order does not matter.
    """
    params = params.copy()
    log = TrainLog(seed=config.seed, config=config.to_dict())
    if config.meta_batch == 0 or len(data) == 0 or config.meta_steps == 0:
        return params, log
    rng = np.random.default_rng([config.seed, 2])
    outer = params.names(SHARED, PRIMARY)
    aux_names = params.names(AUXILIARY)
    t0 = time.perf_counter()
    for step in range(config.meta_steps):
        idx = rng.choice(len(data), size=config.meta_batch, replace=len(data) < config.meta_batch)
        outer_sum = {k: np.zeros_like(params[k]) for k in outer}
        aux_sum = {k: np.zeros_like(params[k]) for k in aux_names}
        pri_total = aux_total = 0.0
        for i in idx:
            stack, truth, css = data.batch([i], rng)
            adapted, first, losses = _adapt(params, stack, config.alpha, config.n_inner, objective.aux, "meta-inner")
            if first is None:
                aux_loss, first = objective.aux(params, stack)
                _check_finite("meta-inner", 0, aux_loss, first)
            else:
                aux_loss = losses[0]
            pri_loss, grads = objective.pri(adapted, stack, truth, css)
            _check_finite("meta-outer", step, pri_loss, grads)
            pri_total += pri_loss
            aux_total += aux_loss
            for k in outer:
                outer_sum[k] += grads[k]
            for k in aux_names:
                aux_sum[k] += first[k]
        for k in outer:
            params.tensors[k] -= config.beta * outer_sum[k]
        for k in aux_names:
            params.tensors[k] -= config.alpha * aux_sum[k]
        log.add(step, "meta", "pri", pri_total / len(idx))
        log.add(step, "meta", "aux", aux_total / len(idx))
    log.wall_time["meta"] = time.perf_counter() - t0
    return params, log


def adapt_test_time(params: ParamSet, stack, objective: Objective, alpha: float = 1e-2, n: int = 5):
    """Adapt to one unlabeled stack and return ``(recovered cube, adapted params)``."""
    stack = np.asarray(getattr(stack, "data", stack), dtype=np.float64)
    if stack.ndim == 3:
        stack = stack[None]
    if stack.shape[0] != 1:
        raise ValueError("test-time adaptation takes a single stack")
    adapted = inner_adapt(params, stack, alpha, n, objective.aux)
    recovered = objective.predict(adapted, stack)[0]
    return SpectralCube(SamplingGrid.bands(), recovered), adapted
