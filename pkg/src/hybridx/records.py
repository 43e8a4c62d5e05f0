"""Record types shared by the loaders, the two modules and the fusion stage."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

FEATURES = ("echolalia", "conversation", "eye_contact", "facial_expression", "social_response")

# 0-3 are severity codes, 7-9 are non-severity codes (8 = behavior unknown or missing).
LEGAL_SCORES = frozenset({0, 1, 2, 3, 7, 8, 9})


class Label(enum.IntEnum):
    """Diagnosis label. The integer value doubles as the softmax class index."""

    NON_ASD = 0
    ASD = 1

    def __str__(self) -> str:
        return "ASD" if self is Label.ASD else "non-ASD"

    @classmethod
    def parse(cls, text: str) -> "Label":
        if text == "ASD":
            return cls.ASD
        if text == "non-ASD":
            return cls.NON_ASD
        raise ValueError(f"unknown label {text!r} (expected 'ASD' or 'non-ASD')")

    @property
    def sign(self) -> int:
        return 1 if self is Label.ASD else -1


@dataclass(frozen=True)
class AdosRecord:
    patient_id: str
    scores: tuple[int, ...]
    label: Label

    def __post_init__(self):
        if len(self.scores) != len(FEATURES):
            raise ValueError(f"expected {len(FEATURES)} scores, got {len(self.scores)}")
        for name, score in zip(FEATURES, self.scores):
            if score not in LEGAL_SCORES:
                raise ValueError(f"score {score!r} for feature {name!r} is not a legal ADOS code")


@dataclass(frozen=True, eq=False)
class ImageSample:
    """One face image, pixels as a float64 array of shape (3, side, side) in [0, 1]."""

    patient_id: str | None
    pixels: np.ndarray
    label: Label

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[0] != 3:
            raise ValueError(f"image must have shape (3, H, W), got {px.shape}")
        if px.shape[1] != px.shape[2]:
            raise ValueError(f"image must be square, got {px.shape[1]}x{px.shape[2]}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def side(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PatientBundle:
    """A paired sample: one patient's coded scores plus one or more face images."""

    patient_id: str
    ados: AdosRecord
    images: tuple[ImageSample, ...]
    label: Label

    def __post_init__(self):
        if not self.images:
            raise ValueError(f"patient {self.patient_id}: bundle needs at least one image")
        if self.ados.patient_id != self.patient_id:
            raise ValueError(f"patient {self.patient_id}: ADOS record belongs to {self.ados.patient_id}")
        if self.ados.label != self.label:
            raise ValueError(f"patient {self.patient_id}: ADOS label disagrees with bundle label")
        for img in self.images:
            if img.patient_id != self.patient_id:
                raise ValueError(f"patient {self.patient_id}: image belongs to {img.patient_id}")
            if img.label != self.label:
                raise ValueError(f"patient {self.patient_id}: image label disagrees with bundle label")


@dataclass(frozen=True)
class DatasetStats:
    n_total: int
    n_asd: int
    n_non_asd: int

    def __post_init__(self):
        if min(self.n_total, self.n_asd, self.n_non_asd) < 0:
            raise ValueError("dataset counts must be non-negative")
        if self.n_asd + self.n_non_asd != self.n_total:
            raise ValueError(f"{self.n_asd} + {self.n_non_asd} != {self.n_total}")

    @classmethod
    def of(cls, n_asd: int, n_non_asd: int) -> "DatasetStats":
        return cls(n_asd + n_non_asd, n_asd, n_non_asd)

    @classmethod
    def from_labels(cls, labels) -> "DatasetStats":
        labels = list(labels)
        n_asd = sum(1 for lab in labels if lab == Label.ASD)
        return cls(len(labels), n_asd, len(labels) - n_asd)
