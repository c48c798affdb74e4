"""Interference-source classification by nearest calibrated template.

Each class template carries the mean and spread of the two envelope
features (comb periodicity and normalized RSSI variance) plus a mean
phase-shift histogram. A class's score has two parts:

* envelope: diagonal Gaussian negative log-likelihood of the periodicity and
  variance features, which separates periodic 802.11b from high-variance
  OFDM from the constant-envelope pair;
* phase: ``phase_weight`` times the total-variation distance between the
  observed and template phase histograms, which separates Bluetooth from
  ZigBee.

The lowest total score wins; ties fall to the fixed class order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..interferers import CLASS_ORDER, InterfererKind
from .detection import Cause, Detection
from .features import FeatureVector, features_from_windows, symbol_windows

DEFAULT_PHASE_WEIGHT = 100.0
_MIN_STD = 1e-6


class ClassificationError(ValueError):
    pass


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass(frozen=True, eq=False)
class ClassTemplate:
    label: InterfererKind
    periodicity_mean: float
    periodicity_std: float
    var_norm_mean: float
    var_norm_std: float
    phase_hist: np.ndarray
    radius: float = float("inf")  # scores above this are flagged low-confidence

    def envelope_score(self, fv: FeatureVector) -> float:
        sp = max(self.periodicity_std, _MIN_STD)
        sv = max(self.var_norm_std, _MIN_STD)
        zp = (fv.rssi_periodicity - self.periodicity_mean) / sp
        zv = (fv.rssi_var_norm - self.var_norm_mean) / sv
        return float(zp * zp + zv * zv + 2 * np.log(sp) + 2 * np.log(sv))

    def phase_distance(self, fv: FeatureVector) -> float:
        return tv_distance(fv.phase_hist, self.phase_hist)

    def to_dict(self) -> dict:
        return {
            "periodicity_mean": self.periodicity_mean,
            "periodicity_std": self.periodicity_std,
            "var_norm_mean": self.var_norm_mean,
            "var_norm_std": self.var_norm_std,
            "phase_hist": [float(v) for v in self.phase_hist],
            "radius": self.radius,
        }

    @classmethod
    def from_dict(cls, label, d: dict) -> "ClassTemplate":
        hist = np.asarray(d["phase_hist"], dtype=float)
        return cls(
            InterfererKind(label),
            float(d["periodicity_mean"]),
            float(d["periodicity_std"]),
            float(d["var_norm_mean"]),
            float(d["var_norm_std"]),
            hist,
            float(d.get("radius", float("inf"))),
        )


@dataclass(frozen=True, eq=False)
class Templates:
    classes: dict  # InterfererKind -> ClassTemplate
    phase_weight: float = DEFAULT_PHASE_WEIGHT

    def __post_init__(self):
        missing = [k.value for k in CLASS_ORDER if k not in self.classes]
        if missing:
            raise ValueError(f"templates missing classes: {missing}")

    def scores(self, fv: FeatureVector) -> dict:
        return {
            k: self.classes[k].envelope_score(fv) + self.phase_weight * self.classes[k].phase_distance(fv)
            for k in CLASS_ORDER
        }

    def to_dict(self) -> dict:
        return {
            "phase_weight": self.phase_weight,
            "classes": {k.value: self.classes[k].to_dict() for k in CLASS_ORDER},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Templates":
        classes = {InterfererKind(k): ClassTemplate.from_dict(k, v) for k, v in d["classes"].items()}
        return cls(classes, float(d.get("phase_weight", DEFAULT_PHASE_WEIGHT)))


@dataclass(frozen=True)
class InterferenceClass:
    label: InterfererKind
    score_margin: float  # runner-up score minus winning score
    low_confidence: bool = False
    scores: tuple = ()  # (label value, score) in class order

    def to_dict(self) -> dict:
        return {
            "label": self.label.value,
            "score_margin": self.score_margin,
            "low_confidence": self.low_confidence,
            "scores": {k: v for k, v in self.scores},
        }


def classify_features(fv: FeatureVector, templates: Templates) -> InterferenceClass:
    scores = templates.scores(fv)
    order = sorted(CLASS_ORDER, key=lambda k: (scores[k], CLASS_ORDER.index(k)))
    best, runner = order[0], order[1]
    margin = float(scores[runner] - scores[best])
    low = scores[best] > templates.classes[best].radius or not np.isfinite(scores[best])
    return InterferenceClass(best, margin, bool(low), tuple((k.value, float(scores[k])) for k in CLASS_ORDER))


def pooled_features(detection: Detection, symbols) -> FeatureVector:
    """Features over the listed symbols' windows, concatenated."""
    symbols = list(symbols)
    if not symbols:
        raise ClassificationError("no interference-labeled symbols to differentiate")
    return features_from_windows(symbol_windows(detection.frame.aligned, symbols))


def differentiate(detection: Detection, templates: Templates, symbols=None) -> InterferenceClass:
    """Classify the interference source behind a detection's Cti symbols.

    ``symbols`` overrides the default selection (all Cti-labeled symbols).
    Input that does not look like any template, such as clean symbols
    forced through, comes back flagged ``low_confidence``.
    """
    if symbols is None:
        symbols = detection.indices(Cause.CTI)
    symbols = list(symbols)
    fv = pooled_features(detection, symbols)
    result = classify_features(fv, templates)
    causes = {detection.verdicts[k].cause for k in symbols}
    if causes != {Cause.CTI}:
        result = InterferenceClass(result.label, result.score_margin, True, result.scores)
    return result
