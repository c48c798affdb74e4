"""Acceptance criteria 1 to 8, each at its stated tolerance."""

import time
from dataclasses import replace

import numpy as np
import pytest

from ctilab import zigbee_phy
from ctilab.channel import (
    CollisionScene,
    air_components,
    make_retransmissions,
    mix,
    noise_variance,
    overlap_scene,
    receive_chain,
)
from ctilab.cli import main
from ctilab.cti.calibration import default_calibration_path
from ctilab.cti.filtration import combine_windows
from ctilab.harness import ExperimentPlan, load_plan, load_table, run_plan
from ctilab.interferers import CLASS_ORDER, InterfererSpec
from ctilab.scenarios import SceneTemplate
from ctilab.signal_core import NoiseSpec, rssi_series

from oracles import crc_bitwise

pytestmark = pytest.mark.acceptance

PLAN_PATH = "plans/acceptance.json"
CALIB_DATE = "2026-10-18"
BASE = 20261018


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence(BASE, spawn_key=key))


@pytest.fixture(scope="module")
def root(request):
    return request.config.rootpath


@pytest.fixture(scope="module")
def acceptance_run(root, tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_a")
    code = main(["experiment", "--plan", str(root / PLAN_PATH), "--calib", str(default_calibration_path()),
                 "--out", str(out)])
    assert code == 0
    return out


# --- 1 ----------------------------------------------------------------------


def test_criterion_1_loopback(verdict):
    rng = _rng(1)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(100):
        payload = rng.integers(0, 256, int(rng.integers(0, 126)), dtype=np.uint8).tobytes()
        frame = zigbee_phy.build_frame(payload)
        rx = mix(CollisionScene(frame, InterfererSpec("none")))
        out = zigbee_phy.decode_frame(rx.waveform)
        errors = int(np.sum(out.symbols[: frame.n_symbols] != frame.symbols()))
        bad += errors != 0 or not out.fcs_ok or out.payload != payload
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 10
    verdict(1, ok, f"{100 - bad}/100 clean loopbacks exact with fcs_ok in {elapsed:.1f} s (limit 10 s)")
    assert ok


# --- 2 ----------------------------------------------------------------------


def test_criterion_2_additivity(verdict):
    rng = _rng(2)
    worst = 0.0
    for i in range(20):
        frame = zigbee_phy.build_frame(rng.integers(0, 256, int(rng.integers(5, 60)), dtype=np.uint8).tobytes())
        kind = CLASS_ORDER[i % 4]
        scene = overlap_scene(frame, kind, int(rng.integers(0, 20)), int(rng.integers(1, 40)),
                              sir_db=float(rng.uniform(-10, 10)), snr_db=None, seed=int(rng.integers(2**63)),
                              center_offset_hz=float(rng.choice([-2e6, -1e6, 0.0, 1e6, 2e6])),
                              interferer_phase=float(rng.uniform(0, 2 * np.pi)),
                              timing_offset_chips=float(rng.uniform(-0.5, 0.5)),
                              sampling_drift_ppm=float(rng.uniform(-2000, 2000)))
        # individually processed paths: each component through the receive chain on its own
        victim, interferer, _ = air_components(scene)
        n = len(mix(scene).waveform)
        z = receive_chain(victim, n, scene.timing_offset_chips, scene.sampling_drift_ppm).samples
        x = receive_chain(interferer, n, scene.timing_offset_chips, scene.sampling_drift_ppm).samples
        worst = max(worst, float(np.max(np.abs(mix(scene).waveform.samples - (z + x)))))
    ok = worst < 1e-9
    verdict(2, ok, f"max |mix - (victim path + interferer path)| = {worst:.2e} over 20 scenes (limit 1e-9)")
    assert ok


# --- 3 ----------------------------------------------------------------------


def test_criterion_3_envelope(verdict):
    rng = _rng(3)
    spreads = []
    for _ in range(20):
        frame = zigbee_phy.build_frame(rng.integers(0, 256, 40, dtype=np.uint8).tobytes())
        r = rssi_series(zigbee_phy.modulate(frame))[4:-4]
        spreads.append((r.max() - r.min()) / r.mean())
    spread = max(spreads)

    # full-length ZigBee-on-ZigBee collisions at equal in-band power, arbitrary relative timing
    small = 0
    for _ in range(200):
        frame = zigbee_phy.build_frame(rng.integers(0, 256, zigbee_phy.MAX_PAYLOAD, dtype=np.uint8).tobytes())
        scene = overlap_scene(frame, "zigbee", 0, frame.n_symbols + 1, sir_db=0.0, snr_db=None,
                              seed=int(rng.integers(2**63)), interferer_phase=float(rng.uniform(0, 2 * np.pi)))
        scene = replace(scene, interferer_delay_s=float(rng.uniform(0, zigbee_phy.SYMBOL_PERIOD_S)))
        victim, interferer, _ = air_components(scene)
        n = frame.n_symbols * zigbee_phy.SAMPLES_PER_SYMBOL + 2
        z = receive_chain(victim, n).samples
        x = receive_chain(interferer, n).samples
        c_z = np.mean(np.abs(z) ** 2)
        cross = np.mean(np.abs(z + x) ** 2 - np.abs(z) ** 2 - np.abs(x) ** 2)
        small += abs(cross) < 0.05 * c_z
    ok = spread < 1e-5 and small >= 190
    verdict(3, ok, f"clean envelope spread {spread:.1e} (limit 1e-5); cross-term < 5% of C_Z "
                   f"in {small}/200 collisions (need >= 190)")
    assert ok


# --- 4 ----------------------------------------------------------------------


def test_criterion_4_detection(calib, verdict):
    t0 = time.perf_counter()
    clean = run_plan(ExperimentPlan(("none",), (0.0,), (15.0,), 200, base_seed=BASE), calib).cells[0].metrics()
    sync_tpl = SceneTemplate(timing_offset_chips=0.3, drift_ppm=(1000.0, 2000.0))
    sync = run_plan(ExperimentPlan(("none",), (0.0,), (15.0,), 200, base_seed=BASE + 1, scene_template=sync_tpl),
                    calib).cells[0].metrics()
    cti = run_plan(ExperimentPlan(tuple(CLASS_ORDER), (0.0,), (15.0,), 200, base_seed=BASE + 2), calib)
    elapsed = time.perf_counter() - t0
    recall = {c.kind.value: c.metrics()["cti_recall"] for c in cti.cells}
    ok = (clean["false_corruption_rate"] <= 0.01 and sync["sync_recall"] >= 0.9
          and min(recall.values()) >= 0.9 and elapsed < 300)
    verdict(4, ok, f"false corruption {clean['false_corruption_rate']:.4f} (<= 0.01); "
                   f"sync-error recall {sync['sync_recall']:.3f} (>= 0.9); "
                   f"Cti recall {', '.join(f'{k} {v:.3f}' for k, v in recall.items())} (>= 0.9); "
                   f"{elapsed:.0f} s (< 300 s)")
    assert ok


# --- 5 ----------------------------------------------------------------------


def test_criterion_5_differentiation(acceptance_run, calib, root, verdict):
    plan = load_plan(root / PLAN_PATH)
    assert plan.trials_per_cell == 200 and plan.sir_grid_db == (0.0,) and plan.snr_grid_db == (15.0,)
    assert plan.scene_template.overlap_symbols[0] >= 8
    table = load_table(acceptance_run / "metrics.json")
    acc = {c.kind.value: c.metrics()["diff_accuracy"] for c in table.cells}
    cm = table.confusion_matrix(0.0, 15.0)
    r = calib.report
    margins = {
        "11b periodicity d'": min(v for k, v in r["wifi11b_periodic"].items() if k.startswith("dprime")),
        "11g variance d'": r["wifi11g_aperiodic"]["var_dprime_vs_wifi11b"],
        "bluetooth phase TV margin": r["bluetooth_phase"]["tv_to_clean_margin"],
    }
    ok = len(acc) == 4 and min(acc.values()) >= 0.9 and all(v > 0 for v in margins.values())
    verdict(5, ok, f"accuracy {', '.join(f'{k} {v:.3f}' for k, v in acc.items())} (>= 0.9); "
                   f"margins {', '.join(f'{k} {v:.2f}' for k, v in margins.items())}; "
                   f"confusion rows {cm.tolist()}")
    assert ok


# --- 6 ----------------------------------------------------------------------


def test_criterion_6_filtration(calib, verdict):
    plan = ExperimentPlan(("wifi11g",), (-3.0,), (15.0,), 100, base_seed=BASE,
                          scene_template=SceneTemplate(retransmissions=4),
                          filtration_targets=tuple(CLASS_ORDER))
    cell = run_plan(plan, calib).cells[0]
    improved = cell.counts["filtration_improved"]
    m = cell.metrics()

    # clean-channel combining of k copies: residual noise variance against sigma^2/k
    frame = zigbee_phy.build_frame(bytes(range(zigbee_phy.MAX_PAYLOAD)))
    k = 4
    scene = CollisionScene(frame, InterfererSpec("none"), noise=NoiseSpec(noise_variance(10.0), 606))
    copies = [c.waveform.samples for c in make_retransmissions(scene, k)]
    ref = mix(replace(scene, noise=NoiseSpec(0.0, 0))).waveform.samples
    single = np.mean([np.mean(np.abs(c - ref) ** 2) for c in copies])
    combined = np.mean(np.abs(combine_windows(copies) - ref) ** 2)
    ratio = combined / (single / k)
    ok = improved >= 95 and abs(ratio - 1) <= 0.1
    verdict(6, ok, f"combining beat the best single copy in {improved}/100 trials (need >= 95); "
                   f"SER {m['ser_pre']:.4f} -> {m['ser_post']:.4f}; "
                   f"noise variance after k={k} combining is {ratio:.3f} x sigma^2/k (within 10%)")
    assert ok


# --- 7 ----------------------------------------------------------------------


def test_criterion_7_determinism(acceptance_run, root, tmp_path, verdict):
    cal = [tmp_path / "calib_a.json", tmp_path / "calib_b.json"]
    for path in cal:
        assert main(["calibrate", "--date", CALIB_DATE, "--out", str(path)]) == 0
    calib_same = cal[0].read_bytes() == cal[1].read_bytes()
    calib_committed = cal[0].read_bytes() == default_calibration_path().read_bytes()

    second = tmp_path / "acceptance_b"
    assert main(["experiment", "--plan", str(root / PLAN_PATH), "--calib", str(default_calibration_path()),
                 "--out", str(second)]) == 0
    tables_same = all((acceptance_run / f).read_bytes() == (second / f).read_bytes()
                      for f in ("metrics.csv", "metrics.json"))
    ok = calib_same and calib_committed and tables_same
    verdict(7, ok, f"calibration reruns identical: {calib_same}; matches committed calibration: "
                   f"{calib_committed}; acceptance plan reruns identical (csv and json): {tables_same}")
    assert ok


# --- 8 ----------------------------------------------------------------------


_WEIGHTS = np.uint64(1) << np.arange(32, dtype=np.uint64)


def _packed(rows):
    return [int(v) for v in np.asarray(rows, dtype=np.uint64) @ _WEIGHTS]


def test_criterion_8_oracles(verdict):
    rng = _rng(8)
    chips = rng.integers(0, 2, (100_000, 32)).astype(np.uint8)
    mismatches = 0
    for table in (zigbee_phy.PN_TABLE, zigbee_phy.RX_TABLE):
        # popcount oracle on packed integers, independent of the array decoder
        refs = _packed(table.sequences)
        mask = _packed([table.mask.astype(int)])[0]
        for row, word in zip(chips, _packed(chips)):
            dists = [((word ^ r) & mask).bit_count() for r in refs]
            best = min(range(16), key=lambda s: (dists[s], s))
            d = zigbee_phy.decode_symbol(row, table)
            mismatches += (d.symbol, d.hamming) != (best, dists[best])
    crc_bad = 0
    for _ in range(1000):
        payload = rng.integers(0, 256, int(rng.integers(0, 126)), dtype=np.uint8).tobytes()
        crc_bad += zigbee_phy.crc16(payload) != crc_bitwise(payload)
    ok = mismatches == 0 and crc_bad == 0
    verdict(8, ok, f"decode_symbol vs popcount oracle: {mismatches} mismatches over 2 x 100000 vectors; "
                   f"CRC vs bitwise division: {crc_bad} mismatches over 1000 payloads")
    assert ok
