"""Bits-per-character scoring, experiment regimes, and the correlation
analysis between character-distribution exoticness and model scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autograd import Tape
from .corpus import LanguageDataset, sample_fewshot
from .errors import ConfigError, DataError
from .laplace import assemble_posterior, fisher_diagonal
from .model import (
    BARE,
    ArchConfig,
    Conditioning,
    LstmState,
    ModelParameters,
    build_layout,
    oest,
    plat,
    sequence_nll,
)
from .rng import RngHub
from .training import FinetuneConfig, TrainConfig, finetune, train_mle, zero_shot_parameters

LN2 = float(np.log(2.0))


def bpc_from_nll(total_nll_nats: float, n_positions: int) -> float:
    """Negative log-likelihood in bits, normalized per predicted character."""
    if n_positions <= 0:
        raise DataError("no predicted positions to score")
    return total_nll_nats / (n_positions * LN2)


def score_split(
    params: ModelParameters,
    arch: ArchConfig,
    seqs: Sequence[Sequence[int]],
    cond: Conditioning = BARE,
    window: int = 512,
    carryover: bool = True,
) -> tuple[float, int]:
    """Total NLL (nats) and predicted-character count over a split.

    Sentences are scored in their stored order with the hidden state
    carried across sentence boundaries; the state is reset only at the
    start of the split. Dropout is off. carryover=False resets the state
    per sentence instead, making the score order-invariant.
    """
    if not seqs:
        raise DataError("cannot score an empty split")
    total = 0.0
    n_positions = 0
    state = LstmState.zeros(arch, 1)
    for seq in seqs:
        if not carryover:
            state = LstmState.zeros(arch, 1)
        tokens = np.asarray([seq], dtype=np.int64)
        mask = np.ones((1, tokens.shape[1] - 1))
        tape = Tape()
        loss, _, state = sequence_nll(
            tape, tape.var(params.flat), arch, tokens, mask, window, cond=cond, state=state
        )
        total += float(loss.value)
        n_positions += tokens.shape[1] - 1
    return total, n_positions


def bpc(
    params: ModelParameters,
    arch: ArchConfig,
    seqs: Sequence[Sequence[int]],
    cond: Conditioning = BARE,
    window: int = 512,
    carryover: bool = True,
) -> float:
    total, n = score_split(params, arch, seqs, cond, window, carryover)
    return bpc_from_nll(total, n)


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ConfigError("pearson needs two equal-length vectors of size >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    if denom == 0.0:
        raise ConfigError("pearson is undefined for constant input")
    return float(np.dot(xc, yc) / denom)


def char_distance_analysis(
    unigrams: Mapping[str, np.ndarray], bpc_by_language: Mapping[str, float]
) -> tuple[dict[str, float], float]:
    """Cosine distance of each language's unigram count vector from the
    mean of the others', and its Pearson correlation with BPC.

    The correlation is NaN when it is undefined (fewer than two scored
    languages, or constant distances/scores)."""
    langs = sorted(unigrams)
    if len(langs) < 3:
        raise DataError("need at least 3 languages for the distance analysis")
    distances: dict[str, float] = {}
    for lang in langs:
        v = unigrams[lang]
        if not v.any():
            raise DataError(f"language {lang} has an all-zero unigram vector")
        others = np.mean([unigrams[o] for o in langs if o != lang], axis=0)
        cos = float(np.dot(v, others) / (np.linalg.norm(v) * np.linalg.norm(others)))
        distances[lang] = 1.0 - cos
    common = [lang for lang in langs if lang in bpc_by_language]
    try:
        rho = pearson(
            np.array([distances[lang] for lang in common]),
            np.array([bpc_by_language[lang] for lang in common]),
        )
    except ConfigError:
        rho = float("nan")
    return distances, rho


# ---------------------------------------------------------------------------
# regimes


REGIMES = ("zero_shot", "few_shot", "joint")


@dataclass(frozen=True)
class RegimeSpec:
    regime: str
    partitions: tuple[tuple[str, ...], ...] = ()
    dev_languages_per_partition: int = 5
    conditioning: str = "bare"
    priors: tuple[str, ...] = ("ninf", "univ")
    fewshot_n: int = 100

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")


@dataclass(frozen=True)
class ResultRow:
    language: str
    regime: str
    prior: str
    conditioning: str
    bpc: float


class ResultTable:
    """Per-language rows plus an unweighted 'All' mean per column group."""

    def __init__(self, rows: Sequence[ResultRow] = ()):
        self.rows = list(rows)

    def add(self, row: ResultRow) -> None:
        self.rows.append(row)

    def extend(self, rows) -> None:
        self.rows.extend(rows)

    def groups(self) -> list[tuple[str, str, str]]:
        seen = []
        for r in self.rows:
            key = (r.regime, r.prior, r.conditioning)
            if key not in seen:
                seen.append(key)
        return sorted(seen)

    def aggregate(self, regime: str, prior: str, conditioning: str) -> float:
        vals = [
            r.bpc
            for r in self.rows
            if (r.regime, r.prior, r.conditioning) == (regime, prior, conditioning)
        ]
        if not vals:
            raise KeyError((regime, prior, conditioning))
        return float(np.mean(vals))

    def value(self, language: str, regime: str, prior: str, conditioning: str) -> float:
        for r in self.rows:
            if (r.language, r.regime, r.prior, r.conditioning) == (
                language,
                regime,
                prior,
                conditioning,
            ):
                return r.bpc
        raise KeyError((language, regime, prior, conditioning))

    def to_tsv(self) -> str:
        lines = ["language\tregime\tprior\tconditioning\tbpc"]
        for r in sorted(
            self.rows, key=lambda r: (r.regime, r.prior, r.conditioning, r.language)
        ):
            lines.append(
                f"{r.language}\t{r.regime}\t{r.prior}\t{r.conditioning}\t{r.bpc:.6f}"
            )
        for regime, prior, conditioning in self.groups():
            mean = self.aggregate(regime, prior, conditioning)
            lines.append(f"All\t{regime}\t{prior}\t{conditioning}\t{mean:.6f}")
        return "\n".join(lines) + "\n"


@dataclass
class RegimeConfigs:
    arch: ArchConfig
    train: TrainConfig
    finetune_train: TrainConfig
    sigma2: float = 1.0
    lambdas: dict = field(default_factory=lambda: {"univ": 1e5, "ninf": 1e-5, "fitu": 0.0})
    fisher_max_per_language: int = 0


def conditioning_for(
    kind: str, typology: Mapping[str, np.ndarray] | None, lang: str
) -> Conditioning:
    if kind == "bare":
        return BARE
    if typology is None or lang not in typology:
        raise ConfigError(f"conditioning {kind!r} needs a typology vector for {lang}")
    return oest(typology[lang]) if kind == "oest" else plat(typology[lang])


def _build_posterior(
    train_sets: list[LanguageDataset],
    dev_sets: list[LanguageDataset],
    cfgs: RegimeConfigs,
    conditioning: Mapping[str, Conditioning],
):
    w_star, _ = train_mle(
        train_sets, cfgs.arch, cfgs.train, dev_sets or None, conditioning
    )
    fisher = fisher_diagonal(
        w_star, cfgs.arch, train_sets, conditioning,
        max_per_language=cfgs.fisher_max_per_language,
    )
    layout = build_layout(cfgs.arch)
    return assemble_posterior(w_star.flat, fisher, cfgs.sigma2, layout)


def run_regime(
    spec: RegimeSpec,
    datasets: Mapping[str, LanguageDataset],
    typology: Mapping[str, np.ndarray] | None,
    cfgs: RegimeConfigs,
    posterior_cache: dict | None = None,
) -> ResultTable:
    """Run one regime over the language partitions and tabulate BPC.

    zero_shot: per partition, estimate the posterior on the non-held-out
    languages and evaluate each held-out test set without any training.
    few_shot: additionally fit each held-out language on a small sample
    from its train split (fixed epoch budget, no target-language dev).
    joint: train once on every language's full train split (the ceiling).
    """
    langs = sorted(datasets)
    cond_of = {
        lang: conditioning_for(spec.conditioning, typology, lang) for lang in langs
    }
    if cfgs.arch.conditioning != spec.conditioning:
        raise ConfigError("arch conditioning does not match the regime spec")
    table = ResultTable()

    if spec.regime == "joint":
        all_sets = [datasets[lang] for lang in langs]
        params, _ = train_mle(all_sets, cfgs.arch, cfgs.train, None, cond_of)
        for lang in langs:
            table.add(
                ResultRow(
                    lang,
                    "joint",
                    "ninf",
                    spec.conditioning,
                    bpc(params, cfgs.arch, datasets[lang].test, cond_of[lang],
                        cfgs.train.eval_window),
                )
            )
        return table

    if not spec.partitions:
        raise ConfigError("zero/few-shot regimes need at least one partition")
    hub = RngHub(cfgs.train.seed)
    for pi, partition in enumerate(spec.partitions):
        for lang in partition:
            if lang not in datasets:
                raise ConfigError(f"partition references unknown language {lang!r}")
        complement = [lang for lang in langs if lang not in partition]
        n_dev = min(spec.dev_languages_per_partition, max(len(complement) - 1, 0))
        picks = hub.stream(f"devpick/{pi}").choice(len(complement), size=n_dev, replace=False)
        dev_langs = {complement[i] for i in picks}
        train_langs = [lang for lang in complement if lang not in dev_langs]
        cache_key = (partition, spec.conditioning)
        if posterior_cache is not None and cache_key in posterior_cache:
            posterior = posterior_cache[cache_key]
        else:
            posterior = _build_posterior(
                [datasets[lang] for lang in train_langs],
                [datasets[lang] for lang in sorted(dev_langs)],
                cfgs,
                cond_of,
            )
            if posterior_cache is not None:
                posterior_cache[cache_key] = posterior

        for lang in partition:
            test = datasets[lang].test
            if spec.regime == "zero_shot":
                for prior in spec.priors:
                    params = zero_shot_parameters(prior, posterior, cfgs.arch, cfgs.train.seed)
                    table.add(
                        ResultRow(
                            lang, "zero_shot", prior, spec.conditioning,
                            bpc(params, cfgs.arch, test, cond_of[lang], cfgs.train.eval_window),
                        )
                    )
                continue
            sample = (
                sample_fewshot(datasets[lang], spec.fewshot_n, cfgs.train.seed)
                if spec.fewshot_n > 0
                else []
            )
            for prior in spec.priors:
                if not sample:
                    params = zero_shot_parameters(prior, posterior, cfgs.arch, cfgs.train.seed)
                else:
                    fcfg = FinetuneConfig(
                        objective=prior,
                        lam=cfgs.lambdas.get(prior),
                        posterior=posterior,
                    )
                    params, _ = finetune(
                        sample, lang, cfgs.arch, fcfg, cfgs.finetune_train, None, cond_of[lang]
                    )
                table.add(
                    ResultRow(
                        lang, "few_shot", prior, spec.conditioning,
                        bpc(params, cfgs.arch, test, cond_of[lang], cfgs.train.eval_window),
                    )
                )
    return table
