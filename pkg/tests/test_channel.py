import json
from dataclasses import replace

import numpy as np
import pytest

from ctilab import channel, zigbee_phy
from ctilab.channel import (
    GUARD,
    CollisionScene,
    RetransmissionRule,
    SceneError,
    Truth,
    air_components,
    make_retransmissions,
    mix,
    overlap_scene,
    receive_chain,
)
from ctilab.cti.features import features_from_windows
from ctilab.interferers import CLASS_ORDER, InterfererKind, InterfererSpec
from ctilab.signal_core import NoiseSpec

FRAME = zigbee_phy.build_frame(bytes(range(24)))
SPSYM = zigbee_phy.SAMPLES_PER_SYMBOL


def n_out(frame=FRAME):
    return frame.n_symbols * SPSYM + zigbee_phy.SAMPLES_PER_CHIP


def test_clean_scene_decodes_perfectly():
    rx = mix(CollisionScene(FRAME, InterfererSpec("none")))
    assert rx.waveform.sample_rate_hz == 4e6
    out = zigbee_phy.decode_frame(rx.waveform)
    assert out.offset == 0 and out.fcs_ok and out.hamming.max() == 0
    assert set(rx.truth) == {Truth.CLEAN} and rx.n_symbols == FRAME.n_symbols


def test_scene_validation():
    with pytest.raises(ValueError):
        CollisionScene(FRAME, InterfererSpec("none"), timing_offset_chips=0.6)
    with pytest.raises(ValueError):
        CollisionScene(FRAME, InterfererSpec("none"), interferer_delay_s=-1e-6)
    s = CollisionScene(FRAME, InterfererSpec("wifi11g"), h_z=2.0, h_x=1.0)
    assert abs(s.sir_db - 20 * np.log10(2)) < 1e-12
    assert CollisionScene(FRAME, InterfererSpec("wifi11g")).sir_db == float("inf")


@pytest.mark.parametrize("seed", range(20))
def test_additivity_through_the_chain(seed):
    rng = np.random.default_rng(seed)
    kind = CLASS_ORDER[seed % 4]
    scene = overlap_scene(FRAME, kind, int(rng.integers(0, 40)), int(rng.integers(1, 30)),
                          sir_db=float(rng.uniform(-6, 6)), snr_db=None, seed=seed,
                          interferer_phase=float(rng.uniform(0, 6.3)),
                          timing_offset_chips=float(rng.uniform(-0.5, 0.5)))
    both = mix(scene).waveform.samples
    z_only = mix(replace(scene, h_x=0.0)).waveform.samples
    x_only = mix(replace(scene, h_z=0.0)).waveform.samples
    assert np.max(np.abs(both - (z_only + x_only))) < 1e-9


def test_mix_is_deterministic():
    scene = overlap_scene(FRAME, "bluetooth", 10, 12, sir_db=0, snr_db=10, seed=4)
    a, b = mix(scene), mix(scene)
    assert a.waveform.equals(b.waveform) and a.truth == b.truth


@pytest.mark.parametrize("kind", CLASS_ORDER)
@pytest.mark.parametrize("sir", [-3.0, 0.0, 6.0])
def test_inband_sir_matches_request(kind, sir):
    offsets = {InterfererKind.WIFI11B: 2e6, InterfererKind.BLUETOOTH: 1e6}
    off = offsets.get(kind, 0.0)
    scene = overlap_scene(FRAME, kind, 0, FRAME.n_symbols, sir_db=sir, snr_db=None, seed=9, center_offset_hz=off)
    v, x, _ = air_components(scene)
    n = n_out()
    z = receive_chain(v, n).samples[SPSYM:-SPSYM]
    i = receive_chain(x, n).samples[SPSYM:-SPSYM]
    measured = 10 * np.log10(np.mean(np.abs(z) ** 2) / np.mean(np.abs(i) ** 2))
    assert abs(measured - sir) < 0.5


def test_inband_snr_matches_request():
    scene = overlap_scene(FRAME, "none", 0, snr_db=10.0, seed=2)
    v, _, w = air_components(scene)
    n = n_out()
    z = receive_chain(v, n).samples
    noise = receive_chain(w, n).samples
    assert abs(10 * np.log10(np.mean(np.abs(z) ** 2) / np.mean(np.abs(noise) ** 2)) - 10) < 0.5


def truth_oracle(scene):
    """Label windows by scanning nonzero interferer air samples in each window's time span."""
    _, x, _ = air_components(scene)
    times = (np.flatnonzero(np.abs(x) > 0) - GUARD) / 22e6
    labels = []
    for k in range(scene.victim_frame.n_symbols):
        t0 = k * SPSYM / 4e6 + scene.timing_offset_chips * 0.5e-6
        t1 = (k * SPSYM + SPSYM - 1) / 4e6 + scene.timing_offset_chips * 0.5e-6
        hit = np.any((times >= t0 - 1e-12) & (times <= t1 + 1e-12))
        sync = scene.timing_offset_chips != 0
        labels.append(Truth.CTI_OVERLAP if hit else Truth.SYNC_ERROR_ONLY if sync else Truth.CLEAN)
    return tuple(labels)


@pytest.mark.parametrize("seed", range(8))
def test_truth_labels_are_sound(seed):
    rng = np.random.default_rng(100 + seed)
    start, span = int(rng.integers(0, 50)), int(rng.integers(1, 20))
    kind = CLASS_ORDER[seed % 4]
    scene = overlap_scene(FRAME, kind, start, span, seed=seed, snr_db=None,
                          timing_offset_chips=0.25 if seed % 2 else 0.0)
    scene = replace(scene, interferer_delay_s=scene.interferer_delay_s + float(rng.uniform(0, 16e-6)))
    rx = mix(scene)
    assert rx.truth == truth_oracle(scene)
    assert rx.truth.count(Truth.CTI_OVERLAP) >= 1


def test_head_clean_tail_corrupted_shape():
    scene = overlap_scene(FRAME, "wifi11g", 20, None, sir_db=0, snr_db=15, seed=1)
    rx = mix(scene)
    assert set(rx.truth[:20]) == {Truth.CLEAN}
    assert set(rx.truth[20:]) == {Truth.CTI_OVERLAP}


def test_sync_offset_is_a_bias_not_randomness(calib):
    scene = CollisionScene(FRAME, InterfererSpec("none"), timing_offset_chips=0.3)
    rx = mix(scene)
    assert set(rx.truth) == {Truth.SYNC_ERROR_ONLY}
    clean = mix(CollisionScene(FRAME, InterfererSpec("none")))
    # resampling never adds energy
    p0 = np.mean(np.abs(clean.waveform.samples[SPSYM:-SPSYM]) ** 2)
    p1 = np.mean(np.abs(rx.waveform.samples[SPSYM:-SPSYM]) ** 2)
    assert abs(p1 / p0 - 1) < 0.02
    s = rx.waveform.samples
    worst = max(
        features_from_windows([s[k * SPSYM:(k + 1) * SPSYM]]).phase_dev_var for k in range(FRAME.n_symbols)
    )
    assert worst < calib.config.randomness_threshold


def test_scene_json_round_trip():
    scene = overlap_scene(FRAME, "wifi11b", 3, 9, sir_db=-2, snr_db=12, seed=5, center_offset_hz=2e6,
                          interferer_phase=1.0, timing_offset_chips=0.1, sampling_drift_ppm=50.0)
    back = CollisionScene.from_dict(json.loads(scene.to_json()))
    assert back == scene
    assert mix(back).waveform.equals(mix(scene).waveform)


@pytest.mark.parametrize("mutate,field", [
    (lambda d: d.pop("h_z"), "h_z"),
    (lambda d: d["interferer"].update(kind="laser"), "interferer.kind"),
    (lambda d: d["noise"].update(seed="x"), "noise.seed"),
    (lambda d: d.update(victim_payload_hex="zz"), "victim_payload_hex"),
    (lambda d: d["interferer"].pop("duration_s"), "interferer.duration_s"),
    (lambda d: d["interferer"].pop("kind"), "interferer.kind"),
    (lambda d: d.pop("noise"), "noise"),
])
def test_scene_errors_name_the_field(mutate, field):
    d = json.loads(overlap_scene(FRAME, "wifi11g", 0, 4).to_json())
    mutate(d)
    with pytest.raises(SceneError) as exc:
        CollisionScene.from_dict(d)
    assert exc.value.field == field


def test_retransmission_single_copy_is_the_scene():
    scene = overlap_scene(FRAME, "wifi11g", 10, 10, seed=3)
    (only,) = make_retransmissions(scene, 1)
    assert only.waveform.equals(mix(scene).waveform)
    with pytest.raises(ValueError):
        make_retransmissions(scene, 0)


def test_retransmissions_share_the_victim():
    quiet = overlap_scene(FRAME, "none", 0, snr_db=None, seed=3)
    copies = make_retransmissions(quiet, 4)
    for c in copies[1:]:
        assert c.waveform.equals(copies[0].waveform)
    noisy = overlap_scene(FRAME, "none", 0, snr_db=20, seed=3)
    copies = make_retransmissions(noisy, 4)
    ref = mix(replace(noisy, noise=NoiseSpec(0.0, 0))).waveform.samples
    var = noisy.noise.variance_per_component
    for c in copies:
        assert np.mean(np.abs(c.waveform.samples - ref) ** 2) < 2 * var
    assert not copies[1].waveform.equals(copies[0].waveform)


def test_retransmitted_ofdm_interference_is_uncorrelated():
    corr = []
    for seed in range(10):
        scene = overlap_scene(FRAME, "wifi11g", 10, 30, seed=seed)
        parts = [air_components(s)[1] for s in channel.retransmission_scenes(scene, 4)]
        for i in range(4):
            for j in range(i + 1, 4):
                a, b = parts[i], parts[j]
                corr.append(abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))
    assert np.mean(corr) < 0.1


def test_retransmission_delay_jitter_stays_non_negative():
    scene = overlap_scene(FRAME, "bluetooth", 0, 10, seed=1)
    scenes = channel.retransmission_scenes(scene, 5, RetransmissionRule(delay_jitter_s=5e-6))
    assert all(s.interferer_delay_s >= 0 for s in scenes)
    assert len({s.interferer_delay_s for s in scenes}) > 1
