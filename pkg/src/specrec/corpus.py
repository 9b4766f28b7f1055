"""Corpus directories: SPC1 triples, CSV cameras and lights, and a hashed manifest.

Layout::

    manifest.json
    illum/<label>.csv
    css/<label>.csv
    train/<id>.input.spc, train/<id>.truth.spc
    test/<id>.input.spc,  test/<id>.truth.spc

Every file listed in the manifest carries its SHA-256, so a flipped byte is
caught by :func:`verify_corpus`.
"""

from __future__ import annotations

import json
from pathlib import Path

from .io import read_css_csv, read_curve_csv, read_spc, sha256_file, write_css_csv, write_curve_csv, write_spc
from .spectral import RgbStack, SamplingGrid, SpectralCube
from .synth import CorpusSplit, Triple

MANIFEST = "manifest.json"
FORMAT = "specrec-corpus/1"


class CorpusError(ValueError):
    pass


def write_corpus(split: CorpusSplit, root, params: dict | None = None) -> dict:
    """Write ``split`` under ``root`` and return the manifest dict."""
    root = Path(root)
    for sub in ("illum", "css", "train", "test"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    def entry(rel: str) -> dict:
        return {"path": rel, "sha256": sha256_file(root / rel)}

    illums = []
    for L in split.illuminations:
        rel = f"illum/{L.label}.csv"
        write_curve_csv(root / rel, L, comment=f"{L.label} illumination, jointly max-normalized")
        illums.append({"label": L.label, **entry(rel)})

    cameras = {}
    for t in split.train + split.test:
        label = t.css.label
        if label not in cameras:
            rel = f"css/{label}.csv"
            write_css_csv(root / rel, t.css)
            cameras[label] = {"label": label, **entry(rel)}

    triples = []
    for name, items in (("train", split.train), ("test", split.test)):
        for k, t in enumerate(items):
            tid = f"{name}{k:03d}"
            write_spc(root / f"{name}/{tid}.input.spc", t.input.data)
            write_spc(root / f"{name}/{tid}.truth.spc", t.truth.data)
            triples.append(
                {
                    "id": tid,
                    "split": name,
                    "css": t.css.label,
                    "illuminations": list(t.illum_labels),
                    "input": entry(f"{name}/{tid}.input.spc"),
                    "truth": entry(f"{name}/{tid}.truth.spc"),
                    "meta": {k2: t.meta[k2] for k2 in sorted(t.meta)},
                }
            )

    manifest = {
        "format": FORMAT,
        "seed": split.seed,
        "params": params or {},
        "illuminations": illums,
        "css": [cameras[k] for k in sorted(cameras)],
        "triples": triples,
    }
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid JSON ({exc})") from exc
    if manifest.get("format") != FORMAT:
        raise CorpusError(f"{path}: unsupported corpus format {manifest.get('format')!r}")
    return manifest


def _entries(manifest: dict):
    yield from manifest["illuminations"]
    yield from manifest["css"]
    for t in manifest["triples"]:
        yield t["input"]
        yield t["truth"]


def verify_corpus(root) -> list[str]:
    """Paths whose content no longer matches the manifest hash (missing files included)."""
    root = Path(root)
    bad = []
    for e in _entries(read_manifest(root)):
        p = root / e["path"]
        if not p.is_file() or sha256_file(p) != e["sha256"]:
            bad.append(e["path"])
    return bad


def load_corpus(root, verify: bool = True) -> CorpusSplit:
    root = Path(root)
    manifest = read_manifest(root)
    if verify:
        bad = verify_corpus(root)
        if bad:
            raise CorpusError(f"hash mismatch in {len(bad)} file(s): {', '.join(bad[:5])}")
    illums = [read_curve_csv(root / e["path"], label=e["label"]) for e in manifest["illuminations"]]
    cameras = {e["label"]: read_css_csv(root / e["path"], label=e["label"]) for e in manifest["css"]}
    by_label = {L.label: L for L in illums}
    grid = SamplingGrid.bands()
    train, test = [], []
    for t in manifest["triples"]:
        triple = Triple(
            input=RgbStack(read_spc(root / t["input"]["path"])),
            css=cameras[t["css"]],
            truth=SpectralCube(grid, read_spc(root / t["truth"]["path"])),
            illum_labels=[by_label[x].label for x in t["illuminations"]],
            meta=dict(t["meta"], id=t["id"]),
        )
        (train if t["split"] == "train" else test).append(triple)
    return CorpusSplit(train, test, manifest["seed"], illums)
