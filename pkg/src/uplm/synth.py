"""Synthetic language families for desk-scale experiments.

Languages share a base character-level Markov chain (so a prior learned
on some of them transfers to the rest) and differ through perturbation
chains switched on by binary flags. The flags double as truthful
typology vectors, so conditioning on them can genuinely help.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import RawDataset
from .errors import DataError
from .rng import RngHub

_VOWELS = set("aeiouy")


@dataclass(frozen=True)
class FamilySpec:
    alphabet: str = "aeioubdgklmnprst"
    n_languages: int = 10
    n_heldout: int = 2
    n_flags: int = 3
    strength: float = 0.5
    sentences_per_language: int | tuple[int, ...] = 2000
    words_per_sentence: float = 6.0
    word_length: float = 5.0
    sparsity: float = 0.4

    def counts(self) -> list[int]:
        if isinstance(self.sentences_per_language, int):
            return [self.sentences_per_language] * self.n_languages
        counts = list(self.sentences_per_language)
        if len(counts) != self.n_languages:
            raise DataError("sentences_per_language list must match n_languages")
        return counts

    def validate(self) -> None:
        if not self.alphabet:
            raise DataError("family alphabet is empty")
        if len(set(self.alphabet)) != len(self.alphabet) or " " in self.alphabet:
            raise DataError("family alphabet must be unique non-space characters")
        if not (0 <= self.n_heldout < self.n_languages):
            raise DataError("need at least one training language")
        if not 0.0 <= self.strength <= 1.0:
            raise DataError("perturbation strength must lie in [0, 1]")


def language_ids(spec: FamilySpec) -> list[str]:
    return [f"s{i:02d}" for i in range(spec.n_languages)]


def _chain(rng: np.random.Generator, spec: FamilySpec, favored: Sequence[int] = ()) -> np.ndarray:
    """Row-stochastic next-char matrix over alphabet + trailing space."""
    letters = spec.alphabet
    a = len(letters)
    w = rng.gamma(spec.sparsity, size=(a + 1, a + 1)) + 1e-4
    vowel = np.array([c in _VOWELS for c in letters])
    # Syllable-ish structure: consonants strongly prefer vowels next.
    w[:a, :a][~vowel[:, None] & vowel[None, :]] *= 6.0
    w[:a, :a][vowel[:, None] & ~vowel[None, :]] *= 2.0
    w[:a, :a][~vowel[:, None] & ~vowel[None, :]] *= 0.3
    for j in favored:
        w[:, j] *= 5.0
    # Word boundary frequency sets the average word length.
    row_sum = w[:a, :a].sum(axis=1)
    w[:a, a] = row_sum / max(spec.word_length - 1.0, 1.0)
    w[a, a] = 1e-12
    return w / w.sum(axis=1, keepdims=True)


def _language_chain(base: np.ndarray, perts: list[np.ndarray], flags: np.ndarray, strength: float) -> np.ndarray:
    active = [p for p, f in zip(perts, flags) if f]
    if not active or strength == 0.0:
        return base
    mixed = (1.0 - strength) * base + (strength / len(active)) * sum(active)
    return mixed / mixed.sum(axis=1, keepdims=True)


def _sentence(rng: np.random.Generator, chain: np.ndarray, letters: str, n_words: int) -> str:
    a = len(letters)
    prev = a  # start from the word-boundary state
    chars: list[str] = []
    words = 0
    run = 0  # letters since the last boundary; capped to bound padding
    while len(chars) < 400:
        nxt = int(rng.choice(a + 1, p=chain[prev])) if run < 12 else a
        if nxt == a:
            if not chars or chars[-1] == " ":
                continue
            words += 1
            run = 0
            if words >= n_words:
                break
            chars.append(" ")
        else:
            chars.append(letters[nxt])
            run += 1
        prev = nxt
    return "".join(chars).strip()


def _assign_flags(rng: np.random.Generator, spec: FamilySpec) -> np.ndarray:
    """Training languages cycle through distinct flag combinations; each
    held-out language reuses a combination seen in training."""
    combos = np.array(
        [[(c >> k) & 1 for k in range(spec.n_flags)] for c in range(2**spec.n_flags)],
        dtype=np.float64,
    )
    order = rng.permutation(len(combos))
    n_train = spec.n_languages - spec.n_heldout
    flags = np.zeros((spec.n_languages, spec.n_flags))
    for i in range(n_train):
        flags[i] = combos[order[i % len(combos)]]
    for j in range(spec.n_heldout):
        flags[n_train + j] = flags[rng.integers(n_train)]
    return flags


def generate_synthetic_family(
    spec: FamilySpec, seed: int = 0
) -> tuple[dict[str, RawDataset], dict[str, np.ndarray], list[str]]:
    """Returns (raw datasets, typology vectors, held-out language ids)."""
    spec.validate()
    hub = RngHub(seed)
    base = _chain(hub.stream("family/base"), spec)
    perts = []
    for k in range(spec.n_flags):
        rng = hub.stream(f"family/pert{k}")
        favored = rng.choice(len(spec.alphabet), size=min(3, len(spec.alphabet)), replace=False)
        perts.append(_chain(rng, spec, favored=list(favored)))
    flags = _assign_flags(hub.stream("family/assign"), spec)

    # Word counts stay in a narrow band so batches pad little.
    lo = max(1, int(round(0.7 * spec.words_per_sentence)))
    hi = max(lo, int(round(1.3 * spec.words_per_sentence)))

    ids = language_ids(spec)
    datasets: dict[str, RawDataset] = {}
    typology: dict[str, np.ndarray] = {}
    for i, (lang, count) in enumerate(zip(ids, spec.counts())):
        chain = _language_chain(base, perts, flags[i], spec.strength)
        rng = hub.stream(f"family/lang/{lang}")
        sentences = []
        while len(sentences) < count:
            n_words = int(rng.integers(lo, hi + 1))
            s = _sentence(rng, chain, spec.alphabet, n_words)
            if s:
                sentences.append(s)
        datasets[lang] = RawDataset(lang, tuple(sentences))
        typology[lang] = flags[i].copy()
    heldout = ids[spec.n_languages - spec.n_heldout :]
    return datasets, typology, heldout


def empirical_bigram(sentences: Sequence[str], alphabet: str) -> np.ndarray:
    """Add-one-smoothed bigram distribution estimate (for family tests)."""
    symbols = alphabet + " "
    idx = {c: i for i, c in enumerate(symbols)}
    counts = np.ones((len(symbols), len(symbols)))
    for s in sentences:
        stream = " " + s + " "
        for a, b in zip(stream, stream[1:]):
            counts[idx[a], idx[b]] += 1
    return counts / counts.sum(axis=1, keepdims=True)
