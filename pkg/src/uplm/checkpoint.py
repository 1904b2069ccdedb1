"""Binary container for checkpoints and posteriors.

Layout: magic, u16 version, u32 header length, JSON header (kind, model
arch, vocabulary code points, block layout, array table), then the raw
little-endian float64 arrays in table order, and a trailing CRC32 over
everything before it. Bit-exact and endianness-pinned so reruns can be
compared byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib

import numpy as np

from .corpus import CharVocabulary
from .errors import CheckpointError, LayoutMismatchError
from .model import ArchConfig, Layout

MAGIC = b"UPLMCKPT"
VERSION = 1


def write_container(path: str, kind: str, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header["kind"] = kind
    header["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    blob = json.dumps(header, sort_keys=True).encode()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HI", VERSION, len(blob))
    out += blob
    for _, a in arrays:
        out += np.ascontiguousarray(a, dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def read_container(path: str, expect_kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from None
    if len(blob) < len(MAGIC) + 10 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    stored = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored:
        raise CheckpointError(f"{path}: checksum mismatch (file corrupted or truncated)")
    version, header_len = struct.unpack_from("<HI", blob, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 6
    header = json.loads(blob[start : start + header_len].decode())
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise CheckpointError(
            f"{path}: expected a {expect_kind!r} file, found {header.get('kind')!r}"
        )
    arrays = {}
    off = start + header_len
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = off + 8 * count
        if end > len(blob) - 4:
            raise CheckpointError(f"{path}: array table overruns the file")
        arrays[entry["name"]] = (
            np.frombuffer(blob[off:end], dtype="<f8").astype(np.float64).reshape(entry["shape"])
        )
        off = end
    return header, arrays


def arch_header(arch: ArchConfig, vocab: CharVocabulary) -> dict:
    return {
        "arch": dataclasses.asdict(arch),
        "vocab_codepoints": vocab.to_codepoints(),
    }


def arch_from_header(header: dict) -> tuple[ArchConfig, CharVocabulary]:
    try:
        arch = ArchConfig(**header["arch"])
        vocab = CharVocabulary.from_codepoints(header["vocab_codepoints"])
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"malformed checkpoint header: {e}") from None
    return arch, vocab


def check_layout(header: dict, expected: Layout, path: str) -> None:
    stored = header.get("layout")
    if stored != expected.describe():
        raise LayoutMismatchError(
            f"{path}: stored parameter layout does not match the requested model"
        )


PARAMS_KIND = "params"


def save_params(path: str, mp, arch: ArchConfig, vocab: CharVocabulary, meta: dict | None = None) -> None:
    header = arch_header(arch, vocab)
    header["layout"] = mp.layout.describe()
    header["meta"] = meta or {}
    write_container(path, PARAMS_KIND, header, [("flat", mp.flat)])


def load_params(path: str):
    from .model import ModelParameters, build_layout

    header, arrays = read_container(path, expect_kind=PARAMS_KIND)
    arch, vocab = arch_from_header(header)
    layout = build_layout(arch)
    check_layout(header, layout, path)
    return ModelParameters(layout, arrays["flat"]), arch, vocab, header.get("meta", {})
