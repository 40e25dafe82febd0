"""Run manifests: flat key/value provenance records for pipeline stages.

Every stage output gets a sibling ``<artifact>.manifest`` recording the
stage name, config hash, seed, key scalars, the checksums of the inputs
(and of their manifests, chaining provenance), and the checksum of the
artifact itself.  Later stages refuse to consume an input whose bytes
no longer match its manifest.  Manifests contain no timestamps, so
re-running a stage with identical inputs reproduces them byte-for-byte.
"""

from __future__ import annotations

import hashlib
from pathlib import Path


class ProvenanceError(RuntimeError):
    """An input artifact disagrees with its recorded manifest."""


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def manifest_path(artifact) -> Path:
    return Path(str(artifact) + ".manifest")


def write_manifest(
    artifact,
    stage: str,
    config_hash: str,
    seed: int,
    inputs: dict[str, str | Path],
    scalars: dict[str, object],
) -> Path:
    """Write ``<artifact>.manifest`` describing one stage output."""
    lines = [
        f"stage = {stage}",
        f"config_sha256 = {config_hash}",
        f"seed = {seed}",
    ]
    for name in sorted(inputs):
        p = Path(inputs[name])
        lines.append(f"input.{name}.path = {p}")
        lines.append(f"input.{name}.sha256 = {sha256_file(p)}")
        mp = manifest_path(p)
        if mp.exists():
            lines.append(f"input.{name}.manifest_sha256 = {sha256_file(mp)}")
    lines.append(f"output.path = {Path(artifact)}")
    lines.append(f"output.sha256 = {sha256_file(artifact)}")
    for name in sorted(scalars):
        lines.append(f"scalar.{name} = {scalars[name]}")
    out = manifest_path(artifact)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def read_manifest(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        entries[key] = value
    return entries


def verify_input(path) -> None:
    """Fail fast when an input's bytes disagree with its manifest."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input file missing: {p}")
    mp = manifest_path(p)
    if not mp.exists():
        return  # raw external input; nothing to chain from
    recorded = read_manifest(mp).get("output.sha256")
    if recorded is None:
        raise ProvenanceError(f"manifest {mp} records no output checksum")
    actual = sha256_file(p)
    if actual != recorded:
        raise ProvenanceError(
            f"checksum mismatch for {p}: manifest says {recorded[:12]}..., "
            f"file is {actual[:12]}..."
        )
