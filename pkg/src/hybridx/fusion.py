"""Late fusion of the social and facial modules.

Per patient: the SVM margin of the coded scores is squashed to a
probability, the DenseNet's per-image ASD probabilities are averaged, and
the two are combined as a convex mixture whose weights default to each
module's share of ASD training examples.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from hybridx import facial, social
from hybridx.metrics import make_report
from hybridx.records import Label

TRACE_COLUMNS = ("patient_id", "p_social", "p_facial", "n_images", "w_social", "w_facial",
                 "p_hybrid", "decision", "label")


class PatientError(RuntimeError):
    """A module failed on one patient's data."""

    def __init__(self, patient_id, cause):
        super().__init__(f"patient {patient_id}: {cause}")
        self.patient_id = patient_id


@dataclass(frozen=True)
class FusionWeights:
    w_social: float
    w_facial: float

    def __post_init__(self):
        if self.w_social < 0 or self.w_facial < 0:
            raise ValueError(f"fusion weights must be non-negative, got {self}")
        if abs(self.w_social + self.w_facial - 1.0) > 1e-12:
            raise ValueError(f"fusion weights must sum to 1, got {self.w_social + self.w_facial!r}")


@dataclass(frozen=True)
class PredictionVector:
    p_social: float
    p_facial: float
    n_images_used: int

    def __post_init__(self):
        for name in ("p_social", "p_facial"):
            p = getattr(self, name)
            if not 0.0 < p < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {p}")
        if self.n_images_used < 1:
            raise ValueError("n_images_used must be positive")


def aggregate_image_predictions(per_image_probs) -> float:
    probs = [float(p) for p in per_image_probs]
    if not probs:
        raise ValueError("no image predictions to aggregate")
    for p in probs:
        if not 0.0 < p < 1.0:
            raise ValueError(f"image probability {p} outside (0, 1)")
    return math.fsum(probs) / len(probs)


def compute_prevalence_weights(n_asd_social: int, n_asd_facial: int) -> FusionWeights:
    if n_asd_social <= 0 or n_asd_facial <= 0:
        raise ValueError(f"ASD counts must be positive, got {n_asd_social} and {n_asd_facial}")
    total = n_asd_social + n_asd_facial
    return FusionWeights(n_asd_social / total, n_asd_facial / total)


def fuse(pred: PredictionVector, weights: FusionWeights) -> float:
    return weights.w_social * pred.p_social + weights.w_facial * pred.p_facial


def decide(p_hybrid: float, threshold: float = 0.5) -> Label:
    """ASD iff ``p_hybrid >= threshold``; a tie counts as ASD."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return Label.ASD if p_hybrid >= threshold else Label.NON_ASD


@dataclass(frozen=True)
class TraceRow:
    patient_id: str
    margin: float
    p_social: float
    image_probs: tuple[float, ...]
    p_facial: float
    n_images: int
    w_social: float
    w_facial: float
    p_hybrid: float
    decision: Label
    label: Label


def predict_bundle(bundle, svm, net, weights, threshold=0.5, margin_scale=1.0) -> TraceRow:
    margin = social.predict_margin(svm, social.encode_record(bundle.ados))
    p_social = social.margin_to_probability(margin, margin_scale)
    image_probs = tuple(float(p) for p in facial.predict_proba_batch(net, list(bundle.images)))
    p_facial = aggregate_image_predictions(image_probs)
    pred = PredictionVector(p_social, p_facial, len(image_probs))
    p_hybrid = fuse(pred, weights)
    return TraceRow(bundle.patient_id, margin, p_social, image_probs, p_facial, len(image_probs),
                    weights.w_social, weights.w_facial, p_hybrid, decide(p_hybrid, threshold), bundle.label)


def run_hybrid_pipeline(bundles, svm, net, weights: FusionWeights, threshold=0.5,
                        model_name="Hybrid Model", seed=0, margin_scale=1.0):
    """Score every bundle; returns ``(EvalReport, trace)`` with one TraceRow per bundle."""
    trace = []
    for b in bundles:
        try:
            trace.append(predict_bundle(b, svm, net, weights, threshold, margin_scale))
        except (ValueError, FloatingPointError) as exc:
            raise PatientError(b.patient_id, exc) from exc
    report = make_report(model_name, [t.decision for t in trace], [t.label for t in trace], seed,
                         dataset_size=dataset_size_label(bundles))
    return report, trace


def dataset_size_label(bundles) -> str:
    n_images = sum(len(b.images) for b in bundles)
    return f"{len(bundles)} patients, {n_images} images"


def module_reports(trace, threshold=0.5, seed=0):
    """Single-module reports over the same patients, from the trace's probabilities."""
    truth = [t.label for t in trace]
    social_report = make_report("Social Behavior Module",
                                [decide(t.p_social, threshold) for t in trace], truth, seed)
    facial_report = make_report("Facial Feature Module",
                                [decide(t.p_facial, threshold) for t in trace], truth, seed)
    return social_report, facial_report


def trace_csv(trace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for t in trace:
        writer.writerow([t.patient_id, repr(t.p_social), repr(t.p_facial), t.n_images,
                         repr(t.w_social), repr(t.w_facial), repr(t.p_hybrid), str(t.decision), str(t.label)])
    return buf.getvalue()
