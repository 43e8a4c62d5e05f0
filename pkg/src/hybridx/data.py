"""Dataset files, deterministic splits and synthetic cohorts.

File layouts
------------
Social CSV: header ``patient_id,echolalia,conversation,eye_contact,
facial_expression,social_response,label``; labels ``ASD`` / ``non-ASD``.

Image directory: ``ASD/`` and ``non-ASD/`` subdirectories of P6 files. The
filename stem up to the first ``_`` is the patient id; a stem without ``_``
means the image carries no id.

Paired directory: ``social.csv`` plus an image directory under ``images/``.
"""

from __future__ import annotations

import io
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hybridx.numerics.rng import make_rng
from hybridx.ppm import quantize, read_ppm, write_ppm
from hybridx.records import (
    FEATURES,
    LEGAL_SCORES,
    AdosRecord,
    DatasetStats,
    ImageSample,
    Label,
    PatientBundle,
)

SOCIAL_HEADER = "patient_id," + ",".join(FEATURES) + ",label"
CLASS_DIRS = {Label.ASD: "ASD", Label.NON_ASD: "non-ASD"}


class DataFormatError(ValueError):
    pass


# -- social CSV ---------------------------------------------------------------

def dumps_social_csv(records) -> str:
    buf = io.StringIO()
    buf.write(SOCIAL_HEADER + "\n")
    for r in records:
        buf.write(",".join([r.patient_id, *(str(s) for s in r.scores), str(r.label)]) + "\n")
    return buf.getvalue()


def write_social_csv(records, path) -> None:
    Path(path).write_text(dumps_social_csv(records), encoding="utf-8", newline="\n")


def parse_social_csv(text: str, source="<string>") -> list[AdosRecord]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != SOCIAL_HEADER:
        raise DataFormatError(f"{source}: line 1: expected header {SOCIAL_HEADER!r}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.rstrip("\r").split(",")
        if len(cells) != len(FEATURES) + 2:
            raise DataFormatError(f"{source}: line {lineno}: expected {len(FEATURES) + 2} fields, got {len(cells)}")
        pid, *raw, label = cells
        scores = []
        for name, cell in zip(FEATURES, raw):
            try:
                value = int(cell)
            except ValueError:
                value = None
            if value not in LEGAL_SCORES:
                raise DataFormatError(f"{source}: line {lineno}: illegal score {cell!r} for {name}")
            scores.append(value)
        try:
            lab = Label.parse(label)
        except ValueError:
            raise DataFormatError(f"{source}: line {lineno}: unknown label {label!r}") from None
        records.append(AdosRecord(pid, tuple(scores), lab))
    return records


def load_social_csv(path) -> list[AdosRecord]:
    return parse_social_csv(Path(path).read_text(encoding="utf-8"), source=str(path))


# -- image directories --------------------------------------------------------

def write_image_dir(samples, root) -> None:
    root = Path(root)
    counters = defaultdict(int)
    for label, name in CLASS_DIRS.items():
        (root / name).mkdir(parents=True, exist_ok=True)
    for s in samples:
        sub = root / CLASS_DIRS[s.label]
        if s.patient_id is None:
            fname = f"img{counters[s.label]:05d}.ppm"
            counters[s.label] += 1
        else:
            if "_" in s.patient_id:
                raise ValueError(f"patient id {s.patient_id!r} must not contain '_'")
            fname = f"{s.patient_id}_{counters[s.patient_id]}.ppm"
            counters[s.patient_id] += 1
        write_ppm(sub / fname, s.pixels)


def load_image_dir(root) -> list[ImageSample]:
    """Load every ``*.ppm`` under ``ASD/`` then ``non-ASD/``, sorted by filename."""
    root = Path(root)
    samples = []
    for label, name in CLASS_DIRS.items():
        sub = root / name
        if not sub.is_dir():
            raise DataFormatError(f"{root}: missing class directory {name}/")
        files = sorted(sub.glob("*.ppm"))
        if not files:
            raise DataFormatError(f"{sub}: class directory has no .ppm files")
        for f in files:
            pixels = read_ppm(f)
            if pixels.shape[1] != pixels.shape[2]:
                raise DataFormatError(f"{f}: image is {pixels.shape[2]}x{pixels.shape[1]}, expected square")
            pid = f.stem.split("_", 1)[0] if "_" in f.stem else None
            samples.append(ImageSample(pid, pixels, label))
    return samples


def write_paired_dir(bundles, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_social_csv([b.ados for b in bundles], root / "social.csv")
    write_image_dir([img for b in bundles for img in b.images], root / "images")


def load_paired_dir(root) -> list[PatientBundle]:
    root = Path(root)
    records = load_social_csv(root / "social.csv")
    by_patient = defaultdict(list)
    for img in load_image_dir(root / "images"):
        if img.patient_id is None:
            raise DataFormatError(f"{root}: paired images need a patient id in the filename")
        by_patient[img.patient_id].append(img)
    bundles = []
    for rec in records:
        images = by_patient.pop(rec.patient_id, [])
        if not images:
            raise DataFormatError(f"{root}: patient {rec.patient_id} has no images")
        bundles.append(PatientBundle(rec.patient_id, rec, tuple(images), rec.label))
    if by_patient:
        raise DataFormatError(f"{root}: images for unknown patients {sorted(by_patient)[:5]}")
    return bundles


# -- splits -------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, ...] = (0.8, 0.2)
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.fractions or any(f <= 0 for f in self.fractions):
            raise ValueError(f"split fractions must be positive, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {sum(self.fractions)}, not 1")


def fractions_from_counts(counts) -> tuple[float, ...]:
    total = sum(counts)
    return tuple(c / total for c in counts)


def allocate(n: int, fractions) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier part."""
    raw = [n * f for f in fractions]
    # nudge absorbs representation error in exact products such as 759 * (1268/1518)
    base = [math.floor(r + 1e-9) for r in raw]
    rest = n - sum(base)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base


def stratified_split(records, spec: SplitSpec) -> list[list]:
    """Disjoint parts covering ``records`` in the proportions of ``spec``.

    Each class (or the whole set, if not stratified) is shuffled with the
    spec seed and cut into contiguous runs of the allocated sizes. Within a
    part, records keep class-major order (ASD first).
    """
    records = list(records)
    rng = make_rng(spec.seed)
    groups = [[r for r in records if r.label == lab] for lab in (Label.ASD, Label.NON_ASD)] \
        if spec.stratified else [records]
    parts = [[] for _ in spec.fractions]
    for group in groups:
        order = rng.permutation(len(group))
        sizes = allocate(len(group), spec.fractions)
        start = 0
        for part, size in zip(parts, sizes):
            part.extend(group[i] for i in order[start:start + size])
            start += size
    for i, part in enumerate(parts):
        if not part:
            raise ValueError(f"split part {i} would be empty ({len(records)} records, fractions {spec.fractions})")
    return parts


# -- synthetic cohorts --------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic generators.

    For paired data ``stats`` counts patients; ``image_stats`` optionally
    pins the per-class image totals. ``rho`` is the probability that a
    modality expresses the patient's true class; otherwise it expresses a
    fair coin flip, at ``ambiguous_strength`` times the usual intensity.
    """

    stats: DatasetStats
    asd_score_probs: tuple[float, ...] = (0.05, 0.15, 0.35, 0.45)
    non_asd_score_probs: tuple[float, ...] = (0.45, 0.35, 0.15, 0.05)
    neutral_score_probs: tuple[float, ...] = (0.2, 0.3, 0.3, 0.2)
    missing_fraction: float = 0.0
    side: int = 16
    contrast: float = 0.5
    noise_sigma: float = 0.1
    rho: float = 1.0
    ambiguous_strength: float = 1.0
    images_per_bundle: tuple[int, int] = (1, 4)
    image_stats: DatasetStats | None = None
    seed: int = 0
    id_prefix: str = "P"

    def __post_init__(self):
        for name in ("asd_score_probs", "non_asd_score_probs", "neutral_score_probs"):
            p = getattr(self, name)
            if len(p) != 4 or min(p) < 0 or abs(sum(p) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be 4 non-negative probabilities summing to 1")
        if not 0.0 <= self.missing_fraction <= 1.0:
            raise ValueError("missing_fraction must lie in [0, 1]")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if not 0.0 <= self.ambiguous_strength <= 1.0:
            raise ValueError("ambiguous_strength must lie in [0, 1]")
        if not 0.0 < self.contrast <= 1.0 or self.noise_sigma < 0 or self.side < 4:
            raise ValueError("need 0 < contrast <= 1, noise_sigma >= 0 and side >= 4")
        lo, hi = self.images_per_bundle
        if not 1 <= lo <= hi:
            raise ValueError(f"bad images_per_bundle range {self.images_per_bundle}")
        if "_" in self.id_prefix:
            raise ValueError("id_prefix must not contain '_'")
        if self.image_stats is not None:
            for n_pat, n_img in ((self.stats.n_asd, self.image_stats.n_asd),
                                 (self.stats.n_non_asd, self.image_stats.n_non_asd)):
                if not lo * n_pat <= n_img <= hi * n_pat:
                    raise ValueError(f"{n_img} images cannot be spread over {n_pat} patients "
                                     f"at {lo}-{hi} each")


def _labels(spec, rng) -> list[Label]:
    labels = [Label.ASD] * spec.stats.n_asd + [Label.NON_ASD] * spec.stats.n_non_asd
    return [labels[i] for i in rng.permutation(len(labels))]


def _draw_scores(rng, probs, missing_fraction) -> tuple[int, ...]:
    scores = rng.choice(4, size=len(FEATURES), p=probs)
    missing = rng.random(len(FEATURES)) < missing_fraction
    return tuple(8 if m else int(s) for s, m in zip(scores, missing))


def _class_probs(spec, label):
    return np.array(spec.asd_score_probs if label == Label.ASD else spec.non_asd_score_probs)


def class_pattern(label: Label, side: int) -> np.ndarray:
    """Noise-free 0/1 mask: a centered disk for ASD, a ring for non-ASD."""
    c = (side - 1) / 2.0
    yy, xx = np.mgrid[0:side, 0:side]
    r = np.hypot(yy - c, xx - c) / side
    if label == Label.ASD:
        return (r <= 0.25).astype(np.float64)
    return ((r >= 0.3) & (r <= 0.45)).astype(np.float64)


def _draw_image(rng, spec, label, strength) -> np.ndarray:
    background = (1.0 - spec.contrast) / 2.0
    base = background + strength * spec.contrast * class_pattern(label, spec.side)
    img = np.broadcast_to(base, (3, spec.side, spec.side))
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return quantize(img)


def synth_social_data(spec: SyntheticSpec) -> list[AdosRecord]:
    """Records with exact class counts; ASD scores skew severe, non-ASD mild."""
    rng = make_rng(spec.seed)
    out = []
    for i, label in enumerate(_labels(spec, rng)):
        scores = _draw_scores(rng, _class_probs(spec, label), spec.missing_fraction)
        out.append(AdosRecord(f"{spec.id_prefix}{i:05d}", scores, label))
    return out


def synth_image_data(spec: SyntheticSpec, out_dir=None) -> list[ImageSample]:
    """Unpaired images, ASD first then non-ASD, optionally also written as a PPM tree."""
    rng = make_rng(spec.seed)
    samples = []
    for label, count in ((Label.ASD, spec.stats.n_asd), (Label.NON_ASD, spec.stats.n_non_asd)):
        for _ in range(count):
            samples.append(ImageSample(None, _draw_image(rng, spec, label, 1.0), label))
    if out_dir is not None:
        write_image_dir(samples, out_dir)
    return samples


def _image_counts(spec, labels, rng) -> list[int]:
    lo, hi = spec.images_per_bundle
    if spec.image_stats is None:
        return [int(v) for v in rng.integers(lo, hi + 1, size=len(labels))]
    counts = [lo] * len(labels)
    for label, total in ((Label.ASD, spec.image_stats.n_asd), (Label.NON_ASD, spec.image_stats.n_non_asd)):
        members = [i for i, lab in enumerate(labels) if lab == label]
        for _ in range(total - lo * len(members)):
            open_slots = [i for i in members if counts[i] < hi]
            counts[open_slots[int(rng.integers(len(open_slots)))]] += 1
    return counts


def _expression(rng, spec, label):
    """Class a modality shows for this patient, and at what intensity."""
    if rng.random() < spec.rho:
        return label, 1.0
    return (Label.ASD if rng.random() < 0.5 else Label.NON_ASD), spec.ambiguous_strength


@dataclass(frozen=True)
class PairedLatent:
    """What each modality of a synthetic patient actually expressed."""

    patient_id: str
    social_shown: Label
    social_strength: float
    facial_shown: Label
    facial_strength: float


def synth_paired_data(spec: SyntheticSpec, return_latents=False):
    """Paired bundles with exact per-class patient counts.

    With ``return_latents`` the result is ``(bundles, latents)``, the latter
    recording which class each modality expressed and how strongly.
    """
    rng = make_rng(spec.seed)
    labels = _labels(spec, rng)
    counts = _image_counts(spec, labels, rng)
    neutral = np.array(spec.neutral_score_probs)
    bundles, latents = [], []
    for i, (label, n_img) in enumerate(zip(labels, counts)):
        pid = f"{spec.id_prefix}{i:05d}"
        s_shown, s_strength = _expression(rng, spec, label)
        probs = (1.0 - s_strength) * neutral + s_strength * _class_probs(spec, s_shown)
        ados = AdosRecord(pid, _draw_scores(rng, probs / probs.sum(), spec.missing_fraction), label)
        f_shown, f_strength = _expression(rng, spec, label)
        images = tuple(ImageSample(pid, _draw_image(rng, spec, f_shown, f_strength), label)
                       for _ in range(n_img))
        bundles.append(PatientBundle(pid, ados, images, label))
        latents.append(PairedLatent(pid, s_shown, s_strength, f_shown, f_strength))
    return (bundles, latents) if return_latents else bundles
