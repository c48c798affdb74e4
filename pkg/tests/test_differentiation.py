import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctilab import zigbee_phy
from ctilab.channel import CollisionScene, mix
from ctilab.cti.calibration import load_default_calibration
from ctilab.cti.detection import Cause, detect_frame
from ctilab.cti.differentiation import (
    ClassificationError,
    ClassTemplate,
    Templates,
    classify_features,
    differentiate,
    tv_distance,
)
from ctilab.cti.features import N_HIST_BINS, extract_features
from ctilab.interferers import CLASS_ORDER, InterfererKind, InterfererSpec
from ctilab.scenarios import trial_scene
from ctilab.signal_core import scale

FRAME = zigbee_phy.build_frame(bytes(range(24)))


def _detect(kind, seed, calib, gain=1.0):
    rx = mix(trial_scene(kind, 0.0, 15.0, seed))
    return detect_frame(scale(rx.waveform, gain), calib.config)


def test_tv_distance_oracle():
    p = np.array([0.5, 0.5, 0.0])
    q = np.array([0.0, 0.5, 0.5])
    assert tv_distance(p, q) == pytest.approx(0.5)
    assert tv_distance(p, p) == 0


@pytest.mark.parametrize("kind", CLASS_ORDER)
def test_classifies_each_source(calib, kind):
    right = sum(differentiate(d, calib.templates).label is kind
                for d in (_detect(kind, 500 + s, calib) for s in range(25)))
    assert right >= 22


def test_forced_clean_symbols_are_low_confidence(calib):
    det = detect_frame(mix(CollisionScene(FRAME, InterfererSpec("none"))), calib.config)
    result = differentiate(det, calib.templates, symbols=range(12, 40))
    assert result.low_confidence
    assert result.score_margin >= 0
    best = min(s for _, s in result.scores)
    assert all(best > calib.templates.classes[k].radius for k in CLASS_ORDER)


def test_empty_selection_rejected(calib):
    det = detect_frame(mix(CollisionScene(FRAME, InterfererSpec("none"))), calib.config)
    assert det.indices(Cause.CTI) == []
    with pytest.raises(ClassificationError):
        differentiate(det, calib.templates)


def test_classifier_is_deterministic_across_reloads(calib):
    det = _detect("bluetooth", 3, calib)
    a = differentiate(det, calib.templates)
    b = differentiate(det, load_default_calibration().templates)
    assert a == b


@settings(max_examples=12, deadline=None)
@given(st.floats(0.05, 20), st.floats(0, 2 * np.pi), st.integers(0, 3))
def test_classifier_invariant_under_gain(mag, ang, which):
    c = load_default_calibration()
    kind = CLASS_ORDER[which]
    a = differentiate(_detect(kind, 7, c), c.templates)
    b = differentiate(_detect(kind, 7, c, mag * np.exp(1j * ang)), c.templates)
    assert a.label is b.label and a.low_confidence == b.low_confidence


def test_ties_break_by_class_order(calib):
    tpl = ClassTemplate(InterfererKind.WIFI11B, 0.0, 1.0, 0.5, 0.1, np.full(N_HIST_BINS, 1 / N_HIST_BINS))
    same = Templates({k: ClassTemplate(k, *[getattr(tpl, f) for f in
                                            ("periodicity_mean", "periodicity_std", "var_norm_mean",
                                             "var_norm_std", "phase_hist")]) for k in CLASS_ORDER})
    fv = extract_features(zigbee_phy.modulate(FRAME), range(3, 9))
    out = classify_features(fv, same)
    assert out.label is InterfererKind.WIFI11B and out.score_margin == 0


def test_templates_round_trip(calib):
    d = json.loads(json.dumps(calib.templates.to_dict()))
    back = Templates.from_dict(d)
    assert back.to_dict() == calib.templates.to_dict()
    with pytest.raises(ValueError):
        Templates({InterfererKind.WIFI11B: calib.templates.classes[InterfererKind.WIFI11B]})
