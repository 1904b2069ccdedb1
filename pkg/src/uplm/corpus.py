"""Corpus ingestion, shared character vocabulary, splits and batching.

Corpus files are UTF-8, one sentence per line, laid out as
``corpus/<lang_id>.txt``. Sentences are sequences of Unicode scalar
values passed through verbatim (no normalization); every sentence is
encoded BOS-prefixed and EOS-terminated.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError
from .rng import RngHub

BOS = 0
EOS = 1
_SPECIALS = ("<bos>", "<eos>")


@dataclass(frozen=True)
class CharVocabulary:
    """Union character set with BOS/EOS at reserved indices 0 and 1."""

    chars: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "index", {c: i + 2 for i, c in enumerate(self.chars)}
        )

    @property
    def size(self) -> int:
        return len(self.chars) + 2

    @property
    def symbols(self) -> tuple[str, ...]:
        return _SPECIALS + self.chars

    def encode(self, sentence: str) -> list[int]:
        try:
            return [BOS] + [self.index[c] for c in sentence] + [EOS]
        except KeyError as e:
            raise DataError(f"character {e.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.chars[i - 2] for i in ids if i >= 2)

    def to_codepoints(self) -> list[int]:
        return [ord(c) for c in self.chars]

    @classmethod
    def from_codepoints(cls, points: Sequence[int]) -> "CharVocabulary":
        return cls(tuple(chr(p) for p in points))


@dataclass(frozen=True)
class RawDataset:
    """Sentences of one language before splitting and encoding."""

    language_id: str
    sentences: tuple[str, ...]


@dataclass
class LanguageDataset:
    """One language's encoded train/dev/test splits."""

    language_id: str
    train: list[list[int]]
    dev: list[list[int]]
    test: list[list[int]]

    def split(self, name: str) -> list[list[int]]:
        try:
            return getattr(self, name)
        except AttributeError:
            raise DataError(f"unknown split {name!r}") from None


def load_corpus(path: str, language_id: str) -> RawDataset:
    """Read one sentence per line; blank lines are dropped."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise DataError(f"cannot read corpus file {path}: {e}") from None
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"invalid UTF-8 in {path} at byte offset {e.start}") from None
    sentences = tuple(line for line in text.splitlines() if line.strip())
    if not sentences:
        raise DataError(f"corpus file {path} contains no sentences")
    return RawDataset(language_id, sentences)


def load_corpus_dir(corpus_dir: str, langs: Sequence[str] | None = None) -> dict[str, RawDataset]:
    """Load ``corpus_dir/<lang>.txt`` for the requested languages."""
    if langs is None:
        langs = sorted(
            f[:-4] for f in os.listdir(corpus_dir) if f.endswith(".txt")
        )
    if not langs:
        raise DataError(f"no corpus files under {corpus_dir}")
    return {
        lang: load_corpus(os.path.join(corpus_dir, f"{lang}.txt"), lang)
        for lang in langs
    }


def build_vocabulary(raw_datasets: Sequence[RawDataset]) -> CharVocabulary:
    """Union character set over all datasets, held-out languages included,
    so evaluation never meets an out-of-vocabulary symbol."""
    if not raw_datasets:
        raise DataError("need at least one dataset to build a vocabulary")
    chars: set[str] = set()
    for ds in raw_datasets:
        for sentence in ds.sentences:
            chars.update(sentence)
    return CharVocabulary(tuple(sorted(chars)))


def split_dataset(
    raw: RawDataset,
    vocab: CharVocabulary,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> LanguageDataset:
    """Deterministic shuffle, then contiguous train/dev/test partition.

    Dev and test each receive floor(ratio * n) sentences but at least one
    whenever their ratio is positive; the remainder goes to train.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    n = len(raw.sentences)
    if n < 3:
        raise DataError(
            f"language {raw.language_id} has only {n} sentences; need at least 3"
        )
    rng = RngHub(seed).stream(f"split/{raw.language_id}")
    order = rng.permutation(n)
    n_dev = _held_count(ratios[1], n)
    n_test = _held_count(ratios[2], n)
    n_train = n - n_dev - n_test
    encoded = [vocab.encode(raw.sentences[i]) for i in order]
    return LanguageDataset(
        raw.language_id,
        encoded[:n_train],
        encoded[n_train : n_train + n_dev],
        encoded[n_train + n_dev :],
    )


def _held_count(ratio: float, n: int) -> int:
    if ratio <= 0:
        return 0
    return max(1, int(ratio * n))


def sample_fewshot(dataset: LanguageDataset, n: int = 100, seed: int = 0) -> list[list[int]]:
    """min(n, |train|) distinct train sentences, uniform without replacement."""
    if not dataset.train:
        raise DataError(f"language {dataset.language_id} has an empty train split")
    rng = RngHub(seed).stream(f"fewshot/{dataset.language_id}")
    k = min(n, len(dataset.train))
    picks = rng.choice(len(dataset.train), size=k, replace=False)
    return [dataset.train[i] for i in picks]


def unigram_distribution(dataset: LanguageDataset, vocab: CharVocabulary) -> np.ndarray:
    """Character counts over all splits; BOS/EOS positions contribute 0."""
    counts = np.zeros(vocab.size)
    for split in (dataset.train, dataset.dev, dataset.test):
        for seq in split:
            for idx in seq:
                if idx >= 2:
                    counts[idx] += 1
    return counts


# ---------------------------------------------------------------------------
# batching


@dataclass(frozen=True)
class BatchConfig:
    batch_size: int = 128
    length_mean: float = 125.0
    length_std: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.length_mean <= 0 or self.length_std < 0:
            raise ValueError("bad length distribution parameters")


@dataclass
class Batch:
    """One single-language mini-batch.

    `tokens` holds whole padded sentences (BOS...EOS, right-padded with
    EOS); `mask` marks valid *target* positions, so column t of the mask
    corresponds to predicting tokens[:, t+1]. Sentences longer than
    `max_len` are consumed by the training step in consecutive windows of
    `max_len` target positions with hidden-state carryover.
    """

    language_id: str
    tokens: np.ndarray
    mask: np.ndarray
    max_len: int
    lr_scale: float

    @property
    def n_positions(self) -> int:
        return int(self.mask.sum())


def draw_language(rng: np.random.Generator, sizes: dict[str, int], available: Sequence[str]) -> str:
    """Pick a language with probability proportional to its data size."""
    weights = np.array([sizes[lang] for lang in available], dtype=np.float64)
    probs = weights / weights.sum()
    return available[rng.choice(len(available), p=probs)]


def draw_max_len(rng: np.random.Generator, cfg: BatchConfig) -> int:
    """Window length: a normal draw rounded to nearest int, clamped >= 2."""
    m = int(round(rng.normal(cfg.length_mean, cfg.length_std)))
    return max(2, m)


def lr_scale_for(m: int, cfg: BatchConfig, total_sentences: int, n_languages: int, lang_sentences: int) -> float:
    return (m / cfg.length_mean) * (total_sentences / (n_languages * lang_sentences))


def pad_batch(language_id: str, seqs: Sequence[Sequence[int]], m: int, lr_scale: float) -> Batch:
    width = max(len(s) for s in seqs)
    tokens = np.full((len(seqs), width), EOS, dtype=np.int64)
    mask = np.zeros((len(seqs), width - 1))
    for r, s in enumerate(seqs):
        tokens[r, : len(s)] = s
        mask[r, : len(s) - 1] = 1.0
    return Batch(language_id, tokens, mask, m, lr_scale)


def make_batches(
    datasets: Sequence[LanguageDataset],
    cfg: BatchConfig,
    rng: np.random.Generator | None = None,
    split: str = "train",
) -> Iterator[Batch]:
    """One epoch of single-language batches.

    Languages are drawn proportionally to their data size; within a
    language, sentences are consumed without replacement. The epoch
    ends when every sentence has been emitted once.
    """
    for ds in datasets:
        if not ds.split(split):
            raise DataError(f"language {ds.language_id} has an empty {split} split")
    if rng is None:
        rng = RngHub(cfg.seed).stream("batches")
    sizes = {ds.language_id: len(ds.split(split)) for ds in datasets}
    total = sum(sizes.values())
    queues = {
        ds.language_id: [ds.split(split)[i] for i in rng.permutation(len(ds.split(split)))]
        for ds in datasets
    }
    cursors = {lang: 0 for lang in queues}
    while True:
        available = [lang for lang in queues if cursors[lang] < len(queues[lang])]
        if not available:
            return
        lang = draw_language(rng, sizes, available)
        start = cursors[lang]
        rows = queues[lang][start : start + cfg.batch_size]
        cursors[lang] = start + len(rows)
        m = draw_max_len(rng, cfg)
        scale = lr_scale_for(m, cfg, total, len(datasets), sizes[lang])
        yield pad_batch(lang, rows, m, scale)
