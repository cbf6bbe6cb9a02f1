"""Procedural CT-like volumes with templated radiology reports.

Two report styles emulate a public corpus with long, boilerplate-heavy
reports and a private corpus with terse ones. Their wording deliberately
shares little vocabulary beyond the structural words.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, DataError, GenerationError
from .volume_prep import HU_MAX, HU_MIN, CtVolume, write_ctvol

DESK_DIMS = (24, 48, 48)
# keeps the physical extent of a 240 x 480 x 480 grid at 1.5/0.75/0.75 mm
DESK_SPACING = (15.0, 7.5, 7.5)
STYLES = ("long_report", "short_report")
SPLITS = ("train", "val", "test")
BACKGROUND_HU = -1000

# two density classes far enough apart that partial voluming cannot swap them;
# the faint class still has to survive pooling against the air background
INTENSITIES = (-200, 200)
# in-plane half-size per size class; z extent is halved to follow the 2:1 voxel spacing
SIZES = (6, 8)
ZONE_MARGIN = 1
SIDE_MARGIN = 2

_SHORT = {
    "noun": ("nodule", "mass"),
    "density": {-200: "faint", 200: "dense"},
    "zone": ("upper", "middle", "lower"),
}
_LONG = {
    "noun": ("rounded lesion", "bulky consolidation"),
    "density": {-200: "ground glass", 200: "calcific"},
    "zone": ("apical", "central", "basal"),
    "size": ("small", "large"),
}
SHORT_NORMAL = "no abnormal findings."
LONG_INTRO = "the trachea and both main bronchi are patent."
LONG_NORMAL = "no focal lesion is identified in either lung."
LONG_OUTRO = "heart size is normal and there is no pleural effusion."


@dataclass(frozen=True)
class FindingSpec:
    """One rendered lesion; ``extent`` holds per-axis radii (sphere) or half-sizes (box)."""

    kind: str
    center: Tuple[int, int, int]
    extent: Tuple[int, int, int]
    intensity: int

    def validate(self, dims: Sequence[int]) -> "FindingSpec":
        if self.kind not in ("sphere", "box"):
            raise GenerationError(f"unknown finding kind {self.kind!r}")
        if not HU_MIN <= self.intensity <= HU_MAX:
            raise GenerationError(f"intensity {self.intensity} outside [{HU_MIN}, {HU_MAX}]")
        for c, e, n in zip(self.center, self.extent, dims):
            if e < 1 or c - e < 0 or c + e > n - 1:
                raise GenerationError(f"finding at {self.center} with extent {self.extent} overflows {tuple(dims)}")
        return self

    def size_class(self) -> int:
        return int(max(self.extent[1:]) >= (SIZES[0] + SIZES[1]) / 2)

    def zone(self, dims) -> int:
        return min(3 * self.center[0] // dims[0], 2)

    def side(self, dims) -> str:
        return "right" if self.center[2] < dims[2] / 2 else "left"

    def mask(self, dims) -> np.ndarray:
        z, y, x = np.ogrid[: dims[0], : dims[1], : dims[2]]
        cz, cy, cx = self.center
        ez, ey, ex = self.extent
        if self.kind == "sphere":
            return ((z - cz) / ez) ** 2 + ((y - cy) / ey) ** 2 + ((x - cx) / ex) ** 2 <= 1.0
        return (abs(z - cz) <= ez) & (abs(y - cy) <= ey) & (abs(x - cx) <= ex)


def label_phrase(f: FindingSpec, style: str, dims: Sequence[int], spacing: Sequence[float] = DESK_SPACING) -> str:
    size = f.size_class()
    if style == "short_report":
        t = _SHORT
        return f"{t['density'][f.intensity]} {t['noun'][size]} in the {f.side(dims)} {t['zone'][f.zone(dims)]} zone."
    t = _LONG
    mm = int(round(2 * SIZES[size] * spacing[1]))
    return (
        f"there is a {t['size'][size]} {t['noun'][size]} of {t['density'][f.intensity]} attenuation "
        f"in the {t['zone'][f.zone(dims)]} part of the {f.side(dims)} lung, measuring approximately {mm} mm."
    )


def report_text(findings: Sequence[FindingSpec], style: str, dims: Sequence[int] = DESK_DIMS) -> str:
    """Deterministic report; findings are described in (z, y, x) centre order."""
    if style not in STYLES:
        raise ArgumentError(f"style must be one of {STYLES}")
    ordered = sorted(findings, key=lambda f: f.center)
    if style == "short_report":
        if not ordered:
            return SHORT_NORMAL
        return " ".join(label_phrase(f, style, dims) for f in ordered)
    body = [label_phrase(f, style, dims) for f in ordered] or [LONG_NORMAL]
    return " ".join([LONG_INTRO, *body, LONG_OUTRO])


def _overlaps(a: FindingSpec, b: FindingSpec, margin: int = 1) -> bool:
    return all(abs(ca - cb) <= ea + eb + margin for ca, cb, ea, eb in zip(a.center, b.center, a.extent, b.extent))


def _ambiguous(center: Sequence[int], dims: Sequence[int]) -> bool:
    # keep centres off the zone and side boundaries so labels are unambiguous
    z, _, x = center
    bounds = [k * dims[0] / 3 - 0.5 for k in (1, 2)]
    near_zone = any(abs(z - b) <= ZONE_MARGIN + 0.5 for b in bounds)
    return near_zone or abs(x - (dims[2] / 2 - 0.5)) <= SIDE_MARGIN + 0.5


def finding_extent(kind: str, size: int) -> Tuple[int, int, int]:
    half = size if kind == "sphere" else size - 1
    return (max(1, half // 2), half, half)


def sample_findings(rng: np.random.Generator, dims: Sequence[int] = DESK_DIMS, max_findings: int = 3) -> List[FindingSpec]:
    count = int(rng.integers(0, max_findings + 1))
    out: List[FindingSpec] = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 500:
            raise GenerationError(f"could not place {count} non-overlapping findings in {tuple(dims)}")
        kind = "sphere" if rng.random() < 0.5 else "box"
        extent = finding_extent(kind, int(rng.choice(SIZES)))
        center = tuple(int(rng.integers(e, n - e)) for e, n in zip(extent, dims))
        if _ambiguous(center, dims):
            continue
        f = FindingSpec(kind, center, extent, int(rng.choice(INTENSITIES))).validate(dims)
        if any(_overlaps(f, g) for g in out):
            continue
        out.append(f)
    return sorted(out, key=lambda f: f.center)


def render_volume(
    findings: Sequence[FindingSpec],
    dims: Sequence[int] = DESK_DIMS,
    spacing: Sequence[float] = DESK_SPACING,
    id: str = "",
) -> CtVolume:
    """Paint findings into an air background; slope 1 / intercept 0 so raw values are HU."""
    hu = np.full(tuple(dims), BACKGROUND_HU, dtype=np.int16)
    for f in findings:
        f.validate(dims)
        hu[f.mask(dims)] = f.intensity
    return CtVolume(tuple(dims), tuple(spacing), 1.0, 0.0, hu, id=id)


# manifest -------------------------------------------------------------------------

@dataclass
class ManifestRecord:
    id: str
    volume: str
    report: str
    split: str = "train"


@dataclass
class Manifest:
    records: List[ManifestRecord]
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    root: Optional[Path] = None

    def split(self, name: str) -> List[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def counts(self) -> Dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}

    def volume_path(self, rec: ManifestRecord) -> Path:
        p = Path(rec.volume)
        return p if p.is_absolute() or self.root is None else self.root / p

    def save(self, path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        records = []
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = ManifestRecord(str(obj["id"]), str(obj["volume"]), str(obj["report"]), str(obj.get("split", "train")))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{n + 1}: bad manifest record ({exc})") from None
            if rec.split not in SPLITS:
                raise DataError(f"{path}:{n + 1}: unknown split {rec.split!r}")
            records.append(rec)
        return cls(records, root=path.parent)


def split_counts(n: int, ratios: Sequence[float] = (0.8, 0.1, 0.1)) -> Tuple[int, int, int]:
    """Val/test sizes are rounded shares; the remainder goes to train."""
    n_val = int(round(n * ratios[1]))
    n_test = int(round(n * ratios[2]))
    return n - n_val - n_test, n_val, n_test


def split_manifest(records: Sequence[ManifestRecord], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> Manifest:
    if not records:
        raise ArgumentError("cannot split an empty record list")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ArgumentError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(len(records))
    n_train, n_val, _ = split_counts(len(records), ratios)
    out = []
    for rank, idx in enumerate(order):
        split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
        r = records[idx]
        out.append(ManifestRecord(r.id, r.volume, r.report, split))
    out.sort(key=lambda r: r.id)
    return Manifest(out, tuple(ratios))


def generate_corpus(
    n: int,
    style: str,
    out_dir,
    dims: Sequence[int] = DESK_DIMS,
    seed: int = 0,
    spacing: Sequence[float] = DESK_SPACING,
    patch: Sequence[int] = (3, 6, 6),
    prefix: Optional[str] = None,
) -> Manifest:
    """Write ``n`` CTVL volumes plus ``manifest.jsonl`` into ``out_dir``."""
    if n < 10:
        raise ArgumentError("a corpus needs at least 10 records")
    if style not in STYLES:
        raise ArgumentError(f"style must be one of {STYLES}")
    if any(d % p for d, p in zip(dims, patch)):
        raise ArgumentError(f"dims {tuple(dims)} not divisible by patch {tuple(patch)}")
    out_dir = Path(out_dir)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    prefix = prefix or ("pub" if style == "long_report" else "prv")
    records = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        findings = sample_findings(rng, dims)
        rid = f"{prefix}{i:05d}"
        rel = f"volumes/{rid}.ctvl"
        write_ctvol(render_volume(findings, dims, spacing, id=rid), out_dir / rel)
        records.append(ManifestRecord(rid, rel, report_text(findings, style, dims)))
    manifest = split_manifest(records, seed=seed)
    manifest.root = out_dir
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


def sample_reports(n: int, styles: Sequence[str] = STYLES, dims: Sequence[int] = DESK_DIMS, seed: int = 0) -> List[str]:
    """Report texts only, no volumes; used as a plain-language corpus."""
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, 7919, i])
        out.append(report_text(sample_findings(rng, dims), styles[i % len(styles)], dims))
    return out


def vocabulary_texts(dims: Sequence[int] = DESK_DIMS, spacing: Sequence[float] = DESK_SPACING) -> List[str]:
    """Texts that together contain every word either template can emit."""
    texts = [SHORT_NORMAL, LONG_INTRO, LONG_NORMAL, LONG_OUTRO]
    for style in STYLES:
        for size in SIZES:
            for inten in INTENSITIES:
                for zone in range(3):
                    for x in (size, dims[2] - 1 - size):
                        ext = finding_extent("sphere", size)
                        cz = min(max(ext[0], zone * dims[0] // 3 + dims[0] // 6), dims[0] - 1 - ext[0])
                        f = FindingSpec("sphere", (cz, dims[1] // 2, x), ext, inten)
                        texts.append(label_phrase(f, style, dims, spacing))
    return texts
