"""Run manifests: one JSON per output directory recording the merged
configuration, seeds, input file hashes and tool version, so any run can
be audited and reproduced."""

from __future__ import annotations

import datetime
import hashlib
import json
import os
from typing import Mapping, Sequence


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    out_dir: str,
    command: str,
    config: Mapping,
    seed: int | None,
    inputs: Sequence[str] = (),
    outputs: Sequence[str] = (),
) -> str:
    from . import __version__

    manifest = {
        "tool": "uplm",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": dict(config),
        "inputs": {p: file_sha256(p) for p in inputs if os.path.isfile(p)},
        "outputs": list(outputs),
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
