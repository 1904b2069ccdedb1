"""Per-language typological feature vectors.

Tables are tab-delimited: a header row ``lang<TAB>feat...`` then one row
per language with cells in [0, 1] or empty for missing. Missing values
are filled by an inverse-distance-weighted average over the k nearest
languages that have the feature; the pairwise distance matrix is an
input (a square TSV in the same language order).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

EPS_WEIGHT = 1e-6


@dataclass
class TypologyTable:
    language_ids: list[str]
    feature_names: list[str]
    values: np.ndarray  # (n_languages, n_features), 0 where missing
    missing: np.ndarray  # bool, same shape

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def vector(self, lang: str) -> np.ndarray:
        try:
            row = self.language_ids.index(lang)
        except ValueError:
            raise DataError(f"language {lang!r} not in typology table") from None
        if self.missing[row].any():
            raise DataError(f"language {lang!r} still has missing features; impute first")
        return self.values[row].copy()

    def is_complete(self) -> bool:
        return not self.missing.any()


def load_typology(path: str) -> TypologyTable:
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        raise DataError(f"typology file {path} is empty")
    header = lines[0].split("\t")
    features = header[1:]
    n_cols = len(header)
    ids: list[str] = []
    values = []
    missing = []
    for row_no, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        if len(cells) != n_cols:
            raise DataError(f"{path}:{row_no}: expected {n_cols} columns, got {len(cells)}")
        lang = cells[0]
        if lang in ids:
            raise DataError(f"{path}:{row_no}: duplicate language {lang!r}")
        ids.append(lang)
        row_vals = np.zeros(len(features))
        row_miss = np.zeros(len(features), dtype=bool)
        for j, cell in enumerate(cells[1:]):
            if cell == "":
                row_miss[j] = True
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}:{row_no}: column {features[j]!r} is not a number") from None
            if not 0.0 <= v <= 1.0:
                raise DataError(
                    f"{path}:{row_no}: column {features[j]!r} value {v} outside [0, 1]"
                )
            row_vals[j] = v
        values.append(row_vals)
        missing.append(row_miss)
    return TypologyTable(ids, features, np.array(values), np.array(missing))


def save_typology(path: str, table: TypologyTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("lang\t" + "\t".join(table.feature_names) + "\n")
        for i, lang in enumerate(table.language_ids):
            cells = [
                "" if table.missing[i, j] else format(table.values[i, j], ".17g")
                for j in range(table.n_features)
            ]
            fh.write(lang + "\t" + "\t".join(cells) + "\n")


def load_distances(path: str, language_ids: list[str]) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    header = lines[0].split("\t")[1:]
    if header != language_ids:
        raise DataError(f"distance matrix language order does not match the table")
    rows = [list(map(float, line.split("\t")[1:])) for line in lines[1:]]
    d = np.array(rows)
    if d.shape != (len(language_ids), len(language_ids)):
        raise DataError("distance matrix is not square over the table languages")
    return d


def impute_missing(table: TypologyTable, distances: np.ndarray, k: int = 10) -> TypologyTable:
    """Fill each missing cell with a weighted average over the k nearest
    languages that have the feature, weights 1 / (distance + 1e-6).
    Non-missing values are untouched; imputing a complete table is the
    identity."""
    n = len(table.language_ids)
    if distances.shape != (n, n):
        raise DataError("distance matrix shape does not match the table")
    if not np.allclose(distances, distances.T) or np.abs(np.diag(distances)).max() > 0:
        raise DataError("distance matrix must be symmetric with a zero diagonal")
    values = table.values.copy()
    missing = table.missing
    for j in range(table.n_features):
        havers = np.flatnonzero(~missing[:, j])
        if havers.size == 0:
            raise DataError(f"feature {table.feature_names[j]!r} missing in every language")
        for i in np.flatnonzero(missing[:, j]):
            donors = havers[havers != i]
            order = donors[np.argsort(distances[i, donors], kind="stable")][:k]
            w = 1.0 / (distances[i, order] + EPS_WEIGHT)
            values[i, j] = float(np.dot(w, table.values[order, j]) / w.sum())
    return TypologyTable(
        list(table.language_ids),
        list(table.feature_names),
        values,
        np.zeros_like(missing),
    )


# ---------------------------------------------------------------------------
# feature encoder


@dataclass
class TypologyEncoder:
    """Bottleneck encoder mapping a feature vector to relu(W t + b)."""

    W: np.ndarray  # (r, n_features)
    b: np.ndarray  # (r,)

    @property
    def r(self) -> int:
        return self.W.shape[0]

    @classmethod
    def init(cls, r: int, n_features: int, rng: np.random.Generator) -> "TypologyEncoder":
        if r < 1:
            raise ValueError("encoder width must be >= 1")
        limit = np.sqrt(6.0 / (r + n_features))
        return cls(rng.uniform(-limit, limit, size=(r, n_features)), np.zeros(r))


def encode_typology(enc: TypologyEncoder, t: np.ndarray) -> np.ndarray:
    if t.shape != (enc.W.shape[1],):
        raise ValueError(f"feature vector has length {t.shape}, encoder expects {enc.W.shape[1]}")
    return np.maximum(enc.W @ t + enc.b, 0.0)
