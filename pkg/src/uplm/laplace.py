"""Quadratic (Laplace-style) posterior over model weights.

The curvature is the diagonal of the observed Fisher information: a
language-balanced average over training sequences of the squared
gradient of each sequence's log-likelihood. Together with the isotropic
Gaussian prior's variance this induces, per parameter,

    h_tilde_diag = -(fisher + 1/sigma2)        (negative curvature)
    variance     = 1 / (fisher + 1/sigma2)     (posterior variance)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .autograd import Tape
from .checkpoint import (
    arch_from_header,
    arch_header,
    check_layout,
    read_container,
    write_container,
)
from .corpus import CharVocabulary, LanguageDataset
from .errors import ConfigError, NumericError
from .model import (
    BARE,
    ArchConfig,
    Conditioning,
    Layout,
    ModelParameters,
    build_layout,
    sequence_nll,
)


@dataclass
class LaplacePosterior:
    mean: np.ndarray
    fisher: np.ndarray
    sigma2: float
    layout: Layout

    def h_tilde_diag(self) -> np.ndarray:
        return -(self.fisher + 1.0 / self.sigma2)

    def variance_diag(self) -> np.ndarray:
        return 1.0 / (self.fisher + 1.0 / self.sigma2)

    def precision_diag(self) -> np.ndarray:
        return self.fisher + 1.0 / self.sigma2


def assemble_posterior(w_star: np.ndarray, fisher: np.ndarray, sigma2: float, layout) -> LaplacePosterior:
    if sigma2 <= 0:
        raise ConfigError("prior variance sigma2 must be positive")
    if fisher.shape != w_star.shape:
        raise ConfigError("fisher and mean vectors differ in length")
    if np.any(fisher < 0):
        raise ConfigError("fisher entries must be non-negative")
    return LaplacePosterior(w_star.copy(), fisher.copy(), float(sigma2), layout)


def sequence_grad(
    params: ModelParameters,
    arch: ArchConfig,
    seq: Sequence[int],
    cond: Conditioning = BARE,
) -> np.ndarray:
    """Gradient of one sentence's log-likelihood, fresh zero state,
    dropout disabled."""
    tokens = np.asarray([seq], dtype=np.int64)
    mask = np.ones((1, tokens.shape[1] - 1))
    tape = Tape()
    flat_var = tape.var(params.flat)
    loss, _, _ = sequence_nll(
        tape, flat_var, arch, tokens, mask, window=tokens.shape[1], cond=cond
    )
    tape.backward(loss)
    g = flat_var.grad
    if g is None:
        g = np.zeros_like(params.flat)
    # loss is the negative log-likelihood; squared, the sign is moot,
    # but return grad log p for the contract's sake.
    return -g


def fisher_diagonal(
    params: ModelParameters,
    arch: ArchConfig,
    datasets: Sequence[LanguageDataset],
    conditioning: Mapping[str, Conditioning] | None = None,
    split: str = "train",
    max_per_language: int = 0,
) -> np.ndarray:
    """Diagonal observed Fisher, balanced over languages.

    Every language contributes with total weight 1/n_languages and every
    sequence within it with weight 1/n_sequences, so duplicating a
    dataset's sequences leaves the result unchanged. Accumulation runs
    in canonical language-id order for a fixed summation order.

    max_per_language > 0 estimates each language's average from only its
    first N sequences (a desk-scale shortcut; 0 uses everything).
    """
    if not datasets:
        raise ConfigError("fisher accumulation needs at least one dataset")
    n_langs = len(datasets)
    f = np.zeros(params.size)
    for ds in sorted(datasets, key=lambda d: d.language_id):
        seqs = ds.split(split)
        if not seqs:
            raise ConfigError(f"language {ds.language_id} has an empty {split} split")
        if max_per_language > 0:
            seqs = seqs[:max_per_language]
        cond = conditioning[ds.language_id] if conditioning else BARE
        weight = 1.0 / (n_langs * len(seqs))
        for k, seq in enumerate(seqs):
            g = sequence_grad(params, arch, seq, cond)
            if not np.all(np.isfinite(g)):
                raise NumericError(
                    f"non-finite gradient on {ds.language_id} sequence {k}"
                )
            f += weight * (g * g)
    return f


def snr(posterior: LaplacePosterior) -> np.ndarray:
    """Per-parameter |mean| / posterior stddev."""
    return np.abs(posterior.mean) * np.sqrt(posterior.precision_diag())


def snr_histogram(values: np.ndarray, n_bins: int = 50) -> list[tuple[float, float, int]]:
    """Log-spaced histogram rows (lo, hi, count); zero values land in the
    first bin so the counts always total the parameter count."""
    positive = values[values > 0]
    if positive.size == 0:
        return [(0.0, 0.0, int(values.size))]
    lo, hi = positive.min(), positive.max()
    if lo == hi:
        hi = lo * (1.0 + 1e-9)
    edges = np.logspace(np.log10(lo), np.log10(hi), n_bins + 1)
    counts, _ = np.histogram(positive, bins=edges)
    counts[0] += values.size - positive.size
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(n_bins)]


POSTERIOR_KIND = "posterior"


def save_posterior(
    path: str, posterior: LaplacePosterior, arch: ArchConfig, vocab: CharVocabulary
) -> None:
    header = arch_header(arch, vocab)
    header["sigma2"] = posterior.sigma2
    header["layout"] = posterior.layout.describe()
    write_container(
        path, POSTERIOR_KIND, header, [("mean", posterior.mean), ("fisher", posterior.fisher)]
    )


def load_posterior(path: str) -> tuple[LaplacePosterior, ArchConfig, CharVocabulary]:
    header, arrays = read_container(path, expect_kind=POSTERIOR_KIND)
    arch, vocab = arch_from_header(header)
    layout = build_layout(arch)
    check_layout(header, layout, path)
    post = assemble_posterior(arrays["mean"], arrays["fisher"], header["sigma2"], layout)
    return post, arch, vocab
