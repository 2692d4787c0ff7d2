"""DP-Adam: per-sample clipping, noisy aggregation and the Adam update,
plus the non-private AdamW baseline and the shared training loop."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np

from dpkan.accountant import DEFAULT_ORDERS, MechanismParams, rdp_subsampled_gaussian, rdp_to_dp
from dpkan.layers import FlatGradient, Model, batch_gradient, per_sample_gradient_matrix
from dpkan.metrics import accuracy, r2_score
from dpkan.numerics import Rng, gaussian_sample, l2_norm

CLIP_SLACK = 1e-9


class DivergenceError(ArithmeticError):
    def __init__(self, step, loss):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class DpSgdConfig:
    epochs: int = 1
    learning_rate: float = 1e-3
    clip_norm: float = 1.0
    noise_multiplier: float = 1.0
    batch_size: int = 64
    delta: float = 1e-5
    seed: int = 0
    private: bool = True
    non_private_batch_clip: float | None = None
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # "poisson" (rate B/N per step) or "full" (every example every step)
    sampling: str = "poisson"
    check_clipping: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be >= 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.non_private_batch_clip is not None and not self.non_private_batch_clip > 0:
            raise ValueError("non_private_batch_clip must be positive when set")
        if self.sampling not in ("poisson", "full"):
            raise ValueError(f"unknown sampling {self.sampling!r}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def zeros(cls, n, **kw):
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(state: AdamState, params, g, lr: float):
    """One bias-corrected Adam step; decoupled weight decay when
    ``state.weight_decay > 0`` (AdamW). Returns ``(new_params, new_state)``."""
    g = g.values if isinstance(g, FlatGradient) else np.asarray(g, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if not params.shape == g.shape == state.m.shape:
        raise ValueError(f"length mismatch: params {params.shape}, grad {g.shape}, state {state.m.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    if state.weight_decay:
        params = params - lr * state.weight_decay * params
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)


@dataclass
class ClippedGradient(FlatGradient):
    """A per-sample gradient whose norm has been bounded by ``clip_norm``."""

    clip_norm: float = 0.0


def clip_gradient(g: FlatGradient, clip_norm: float) -> ClippedGradient:
    """Scale ``g`` by ``1 / max(1, ||g|| / C)``."""
    if not clip_norm > 0:
        raise ValueError(f"clip norm must be positive, got {clip_norm}")
    values = g.values
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite gradient for sample {g.sample_index}")
    norm = l2_norm(values)
    if norm > clip_norm:
        values = values / (norm / clip_norm)
    return ClippedGradient(values, g.sample_index, clip_norm)


def noisy_aggregate(clipped, noise_multiplier, clip_norm, batch_size, gen, n_params=None) -> FlatGradient:
    """``(1/B) * sum(clipped) + N(0, (sigma C / B)^2 I)``.

    Only :func:`clip_gradient` outputs clipped at ``clip_norm`` are accepted.
    Rows are summed in list order. ``n_params`` is needed only for an empty
    list (a Poisson batch can be empty), which yields pure noise.
    """
    if noise_multiplier < 0:
        raise ValueError("noise multiplier must be >= 0")
    for g in clipped:
        if not isinstance(g, ClippedGradient):
            raise TypeError("noisy_aggregate only accepts clip_gradient outputs")
        if g.clip_norm != clip_norm:
            raise ValueError(f"gradient clipped at {g.clip_norm}, aggregating at {clip_norm}")
    if not clipped:
        if noise_multiplier == 0:
            raise ValueError("cannot aggregate an empty batch without noise")
        if n_params is None:
            raise ValueError("n_params is required for an empty batch")
        acc = np.zeros(n_params)
    else:
        acc = np.zeros_like(clipped[0].values)
        for g in clipped:
            acc += g.values
    out = acc / batch_size
    if noise_multiplier > 0:
        out = out + gaussian_sample(gen, out.size, noise_multiplier * clip_norm / batch_size)
    return FlatGradient(out, -1)


# -- training -------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    metric: float
    epsilon: float


@dataclass
class TrainingLog:
    metric_name: str
    records: list = field(default_factory=list)
    steps: int = 0
    samples_seen: int = 0
    clip_checks: int = 0
    clip_violations: int = 0

    HEADER = "# dpkan training log v1"

    def to_text(self) -> str:
        lines = [
            self.HEADER,
            f"# metric={self.metric_name} steps={self.steps} samples_seen={self.samples_seen} "
            f"clip_checks={self.clip_checks} clip_violations={self.clip_violations}",
            "epoch\ttrain_loss\tmetric\tepsilon",
        ]
        for r in self.records:
            lines.append(f"{r.epoch}\t{r.train_loss!r}\t{r.metric!r}\t{r.epsilon!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainingLog":
        lines = text.splitlines()
        if not lines or lines[0] != cls.HEADER:
            raise ValueError("not a dpkan training log")
        meta = dict(kv.split("=", 1) for kv in lines[1][2:].split())
        log = cls(
            metric_name=meta["metric"],
            steps=int(meta["steps"]),
            samples_seen=int(meta["samples_seen"]),
            clip_checks=int(meta["clip_checks"]),
            clip_violations=int(meta["clip_violations"]),
        )
        for line in lines[3:]:
            e, loss, metric, eps = line.split("\t")
            log.records.append(EpochRecord(int(e), float(loss), float(metric), float(eps)))
        return log

    def __eq__(self, other):
        return isinstance(other, TrainingLog) and self.to_text() == other.to_text()


def evaluate(model: Model, data, batch: int = 4096) -> float:
    """Held-out metric: R^2 for regression, accuracy for classification."""
    preds = np.concatenate([model.forward(data.features[s : s + batch])[0] for s in range(0, len(data), batch)])
    if data.task == "regression":
        return r2_score(data.targets, preds[:, 0])
    return accuracy(data.targets, preds)


def _loss_kind(data):
    return "mse" if data.task == "regression" else "cross_entropy"


def train(model: Model, data, cfg: DpSgdConfig, loss: str | None = None):
    """Train a copy of ``model`` on ``data``; returns ``(model, TrainingLog)``.

    Private mode follows DP-Adam: each step draws a Poisson batch at rate
    ``B/N`` (or the whole dataset when ``cfg.sampling == "full"``), clips
    every per-sample gradient to ``clip_norm``, averages with divisor ``B``,
    adds Gaussian noise of std ``sigma * C / B`` and takes an Adam step.
    Non-private mode iterates over shuffled minibatches with AdamW.
    Both run ``epochs * ceil(N / B)`` steps.
    """
    loss = loss or _loss_kind(data)
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if not cfg.private and cfg.batch_size > n:
        raise ValueError(f"batch size {cfg.batch_size} exceeds dataset size {n}")
    model = copy.deepcopy(model)
    rng = Rng(cfg.seed)
    data_gen, noise_gen = rng.stream("data"), rng.stream("noise")
    x, y = data.features, data.targets
    theta = model.get_flat()
    state = AdamState.zeros(
        theta.size,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
        weight_decay=0.0 if cfg.private else cfg.weight_decay,
    )
    log = TrainingLog(metric_name="r2" if data.task == "regression" else "accuracy")
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    q = min(1.0, cfg.batch_size / n)

    for epoch in range(1, cfg.epochs + 1):
        loss_sum, loss_count = 0.0, 0
        perm = None if cfg.private else data_gen.permutation(n)
        for s in range(steps_per_epoch):
            if cfg.private:
                if cfg.sampling == "full":
                    idx = np.arange(n)
                else:
                    idx = np.flatnonzero(data_gen.random(n) < q)
                g, batch_loss = _private_gradient(model, x[idx], y[idx], loss, cfg, noise_gen, log)
                loss_sum += batch_loss
                loss_count += len(idx)
            else:
                idx = np.sort(perm[s * cfg.batch_size : (s + 1) * cfg.batch_size])
                g, mean_loss = batch_gradient(model, x[idx], y[idx], loss)
                if cfg.non_private_batch_clip is not None:
                    norm = l2_norm(g)
                    if norm > cfg.non_private_batch_clip:
                        g = g / (norm / cfg.non_private_batch_clip)
                loss_sum += mean_loss * len(idx)
                loss_count += len(idx)
            log.steps += 1
            log.samples_seen += len(idx)
            if not math.isfinite(loss_sum):
                raise DivergenceError(log.steps, loss_sum)
            theta, state = adam_step(state, theta, g, cfg.learning_rate)
            if not np.all(np.isfinite(theta)):
                raise DivergenceError(log.steps, float("nan"))
            model.set_flat(theta)
        eps = _epsilon(cfg, n, epoch)
        mean_loss = loss_sum / loss_count if loss_count else float("nan")
        log.records.append(EpochRecord(epoch, mean_loss, evaluate(model, data), eps))
    return model, log


def _private_gradient(model, bx, by, loss, cfg, noise_gen, log):
    if len(bx):
        grads, losses = per_sample_gradient_matrix(model, bx, by, loss)
        clipped = [clip_gradient(FlatGradient(row, i), cfg.clip_norm) for i, row in enumerate(grads)]
        batch_loss = float(np.sum(losses))
    else:
        clipped, batch_loss = [], 0.0
    if cfg.check_clipping:
        for c in clipped:
            log.clip_checks += 1
            if l2_norm(c.values) > cfg.clip_norm + CLIP_SLACK:
                log.clip_violations += 1
    g = noisy_aggregate(
        clipped, cfg.noise_multiplier, cfg.clip_norm, cfg.batch_size, noise_gen, n_params=model.parameter_count
    )
    return g.values, batch_loss


def _epsilon(cfg: DpSgdConfig, n: int, epochs: int) -> float:
    if not cfg.private or cfg.noise_multiplier == 0:
        return float("inf")
    q = 1.0 if cfg.sampling == "full" else min(1.0, cfg.batch_size / n)
    params = MechanismParams(cfg.noise_multiplier, q, epochs * math.ceil(n / cfg.batch_size))
    return rdp_to_dp(rdp_subsampled_gaussian(params), DEFAULT_ORDERS, cfg.delta, "improved").epsilon
