"""Optimization loops: MAP training on the training languages, and the
three held-out fine-tuning objectives (univ / ninf / fitu).

All objectives are minimized as per-character averages: the summed NLL
and any penalty are both divided by the corpus character count, which
rescales the objective without moving its optimum, so the penalty
weights keep the meaning they have against the summed log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tape, Var
from .corpus import Batch, BatchConfig, LanguageDataset, make_batches
from .errors import ConfigError, NumericError
from .laplace import LaplacePosterior
from .model import (
    BARE,
    ArchConfig,
    Conditioning,
    DropoutConfig,
    ModelParameters,
    build_layout,
    init_parameters,
    sequence_nll,
    train_plan,
)
from .optim import AdamState, adam_step, clip_global_norm
from .rng import RngHub


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 6
    base_lr: float = 1e-4
    lr_decay_factor: float = 10.0
    patience: int = 2  # dev evaluations without improvement before stopping
    seed: int = 0
    sigma2: float = 1.0  # variance of the Gaussian prior on the weights
    grad_clip: float = 5.0
    batch: BatchConfig = field(default_factory=BatchConfig)
    dropout: DropoutConfig = field(default_factory=DropoutConfig)
    eval_window: int = 512

    def __post_init__(self):
        if self.base_lr <= 0 or self.lr_decay_factor <= 0:
            raise ConfigError("learning rate and decay factor must be positive")
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be positive")


FEWSHOT_EPOCHS = 25

LAMBDA_DEFAULTS = {"univ": 1e5, "ninf": 1e-5, "fitu": 0.0}


@dataclass
class FinetuneConfig:
    objective: str  # univ | ninf | fitu
    lam: float | None = None  # falls back to the objective's default
    posterior: LaplacePosterior | None = None
    init: str = "default"  # default | given
    init_params: ModelParameters | None = None

    def resolved_lambda(self) -> float:
        if self.lam is not None:
            if self.lam < 0:
                raise ConfigError("lambda must be >= 0")
            return self.lam
        return LAMBDA_DEFAULTS[self.objective]

    def __post_init__(self):
        if self.objective not in LAMBDA_DEFAULTS:
            raise ConfigError(f"unknown finetuning objective {self.objective!r}")
        if self.objective == "univ" and self.posterior is None:
            raise ConfigError("univ finetuning requires a posterior")


@dataclass
class LogRow:
    epoch: int
    split: str
    language: str
    bpc: float
    lr: float


def lr_schedule(epoch: int, total_epochs: int, base_lr: float, factor: float) -> float:
    """Step decay: divide by `factor` at each third of the epoch budget."""
    if not 0 <= epoch < total_epochs:
        raise ValueError("epoch outside schedule range")
    return base_lr / factor ** (3 * epoch // total_epochs)


def _step(
    mp: ModelParameters,
    adam: AdamState,
    arch: ArchConfig,
    batch: Batch,
    plan,
    cond: Conditioning,
    lr: float,
    norm_chars: float,
    sigma2: float | None,
    penalty: Callable[[Tape, Var], Var] | None,
    grad_clip: float,
) -> tuple[ModelParameters, AdamState, float]:
    tape = Tape()
    flat = tape.var(mp.flat)
    loss, _, _ = sequence_nll(
        tape, flat, arch, batch.tokens, batch.mask, batch.max_len, plan, cond
    )
    objective = ag.mul_const(tape, loss, 1.0 / batch.n_positions)
    if sigma2 is not None:
        prior = ag.sum_all(tape, ag.square(tape, flat))
        objective = ag.add(
            tape, objective, ag.mul_const(tape, prior, 0.5 / (sigma2 * norm_chars))
        )
    if penalty is not None:
        objective = ag.add(tape, objective, penalty(tape, flat))
    value = float(objective.value)
    if not np.isfinite(value):
        raise NumericError(
            f"training diverged on language {batch.language_id} (loss={value})"
        )
    tape.backward(objective)
    grad = clip_global_norm(flat.grad, grad_clip)
    adam, new_flat = adam_step(adam, mp.flat, grad, lr)
    return ModelParameters(mp.layout, new_flat), adam, value


def _dev_bpc(
    mp: ModelParameters,
    arch: ArchConfig,
    dev_datasets: Sequence[LanguageDataset],
    conditioning: Mapping[str, Conditioning] | None,
    window: int,
) -> dict[str, float]:
    from .evaluation import bpc  # late import; evaluation builds on training

    scores = {}
    for ds in dev_datasets:
        cond = conditioning[ds.language_id] if conditioning else BARE
        scores[ds.language_id] = bpc(mp, arch, ds.dev, cond=cond, window=window)
    return scores


def _optimize(
    datasets: Sequence[LanguageDataset],
    arch: ArchConfig,
    cfg: TrainConfig,
    init: ModelParameters,
    max_epochs: int,
    sigma2: float | None,
    penalty: Callable[[Tape, Var], Var] | None,
    dev_datasets: Sequence[LanguageDataset] | None,
    conditioning: Mapping[str, Conditioning] | None,
) -> tuple[ModelParameters, list[LogRow]]:
    hub = RngHub(cfg.seed)
    mp = init
    adam = AdamState.fresh(mp.size)
    norm_chars = float(
        sum(sum(len(s) - 1 for s in ds.train) for ds in datasets)
    )
    rows: list[LogRow] = []
    best_bpc = np.inf
    best_params = mp.copy()
    stale_evals = 0
    for epoch in range(max_epochs):
        lr_epoch = lr_schedule(epoch, max_epochs, cfg.base_lr, cfg.lr_decay_factor)
        batch_rng = hub.stream(f"batches/{epoch}")
        drop_rng = hub.stream(f"dropout/{epoch}")
        for batch in make_batches(datasets, cfg.batch, batch_rng):
            plan = train_plan(drop_rng, arch, batch.tokens.shape[0], cfg.dropout)
            cond = conditioning[batch.language_id] if conditioning else BARE
            mp, adam, _ = _step(
                mp,
                adam,
                arch,
                batch,
                plan,
                cond,
                lr_epoch * batch.lr_scale,
                norm_chars,
                sigma2,
                penalty,
                cfg.grad_clip,
            )
        if dev_datasets:
            scores = _dev_bpc(mp, arch, dev_datasets, conditioning, cfg.eval_window)
            for lang in sorted(scores):
                rows.append(LogRow(epoch, "dev", lang, scores[lang], lr_epoch))
            mean_bpc = float(np.mean(list(scores.values())))
            if mean_bpc < best_bpc:
                best_bpc = mean_bpc
                best_params = mp.copy()
                stale_evals = 0
            else:
                stale_evals += 1
                if stale_evals > cfg.patience:
                    break
    return (best_params if dev_datasets else mp), rows


def train_mle(
    datasets: Sequence[LanguageDataset],
    arch: ArchConfig,
    cfg: TrainConfig,
    dev_datasets: Sequence[LanguageDataset] | None = None,
    conditioning: Mapping[str, Conditioning] | None = None,
) -> tuple[ModelParameters, list[LogRow]]:
    """Find a mode of (log-likelihood + Gaussian weight prior) with Adam.

    Per-batch learning rate is schedule(epoch) * batch.lr_scale. With dev
    datasets supplied, returns the best-dev parameters under early
    stopping; otherwise the final ones.
    """
    if not datasets:
        raise ConfigError("no training datasets")
    init = init_parameters(arch, cfg.seed)
    return _optimize(
        datasets, arch, cfg, init, cfg.max_epochs, cfg.sigma2, None, dev_datasets, conditioning
    )


def _penalty_builder(fcfg: FinetuneConfig, norm_chars: float):
    lam = fcfg.resolved_lambda()
    if lam == 0.0 or fcfg.objective == "fitu":
        return None
    if fcfg.objective == "univ":
        prec = fcfg.posterior.precision_diag()
        w_star = fcfg.posterior.mean

        def univ_penalty(tape: Tape, flat: Var) -> Var:
            delta = ag.sub_const(tape, flat, w_star)
            weighted = ag.mul_const(tape, ag.square(tape, delta), prec)
            return ag.mul_const(
                tape, ag.sum_all(tape, weighted), 0.5 * lam / norm_chars
            )

        return univ_penalty

    def ninf_penalty(tape: Tape, flat: Var) -> Var:
        return ag.mul_const(
            tape, ag.sum_all(tape, ag.square(tape, flat)), 0.5 * lam / norm_chars
        )

    return ninf_penalty


def penalty_value(fcfg: FinetuneConfig, w: np.ndarray) -> float:
    """The raw (un-normalized) penalty at w, for inspection and tests."""
    lam = fcfg.resolved_lambda()
    if lam == 0.0 or fcfg.objective == "fitu":
        return 0.0
    if fcfg.objective == "univ":
        delta = w - fcfg.posterior.mean
        return 0.5 * lam * float(np.dot(fcfg.posterior.precision_diag(), delta * delta))
    return 0.5 * lam * float(np.dot(w, w))


def zero_shot_parameters(
    objective: str,
    posterior: LaplacePosterior | None,
    arch: ArchConfig,
    seed: int = 0,
) -> ModelParameters:
    """univ/fitu: the posterior mean, verbatim. ninf: a standard-normal
    draw under `seed` (the uninformative prior's idea of a model)."""
    layout = build_layout(arch)
    if objective == "ninf":
        rng = RngHub(seed).stream("ninf-init")
        return ModelParameters(layout, rng.standard_normal(layout.total_size))
    if posterior is None:
        raise ConfigError(f"{objective} zero-shot evaluation requires a posterior")
    if posterior.mean.size != layout.total_size:
        raise ConfigError("posterior layout does not match the model")
    return ModelParameters(layout, posterior.mean.copy())


def finetune(
    sentences: Sequence[Sequence[int]],
    language_id: str,
    arch: ArchConfig,
    fcfg: FinetuneConfig,
    cfg: TrainConfig,
    dev_sentences: Sequence[Sequence[int]] | None = None,
    cond: Conditioning = BARE,
) -> tuple[ModelParameters, list[LogRow]]:
    """MAP fit to a few-shot sample under one of the three objectives.

    univ: start at the posterior mean, quadratic penalty with the
    posterior precision. ninf: start from a standard-normal draw, plain
    L2 penalty. fitu: start at the posterior mean, no penalty. Runs at
    most cfg.max_epochs epochs, early-stopped on dev when supplied.
    """
    if not sentences:
        raise ConfigError("finetuning needs a non-empty sample")
    if fcfg.init == "given":
        if fcfg.init_params is None:
            raise ConfigError("init='given' requires init_params")
        init = fcfg.init_params.copy()
    elif fcfg.objective == "ninf":
        init = zero_shot_parameters("ninf", None, arch, cfg.seed)
    else:
        init = zero_shot_parameters(fcfg.objective, fcfg.posterior, arch, cfg.seed)
    dataset = LanguageDataset(
        language_id, list(sentences), list(dev_sentences or []), []
    )
    norm_chars = float(sum(len(s) - 1 for s in sentences))
    penalty = _penalty_builder(fcfg, norm_chars)
    conditioning = {language_id: cond}
    dev = [dataset] if dev_sentences else None
    return _optimize(
        [dataset], arch, cfg, init, cfg.max_epochs, None, penalty, dev, conditioning
    )
