"""Fixed-seed calibration of detection thresholds and class templates.

The suite simulates four populations at the operating SNR:

* clean frames, which set the Hamming threshold at the smallest value whose
  false-corruption rate meets the target (checked again on a held-out set);
* sync-error frames (sampling-phase error plus clock drift, no interferer)
  and interference frames, whose corrupted symbols' phase-deviation
  variances set the randomness threshold at their equal-error point;
* interference frames per class, whose pooled Cti-window features become
  the differentiation templates.

Every scene seed is drawn from ``SeedSequence(base_seed,
spawn_key=(population, sir_index, trial))``, so the output is a pure
function of the suite and the date string passed in.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import channel
from ..channel import Truth
from ..interferers import CLASS_ORDER, InterfererKind
from ..scenarios import SceneTemplate, trial_scene
from .detection import Cause, DetectionConfig, apply_config, detect_frame
from .differentiation import ClassTemplate, Templates, classify_features, pooled_features, tv_distance
from .features import N_HIST_BINS, phase_histogram
from ..signal_core import phase_shift_series
from ..zigbee_phy import HEADER_SYMBOLS, NoFrameFound, SAMPLES_PER_SYMBOL

SCHEMA_VERSION = 1

_POP_CLEAN, _POP_HELDOUT, _POP_SYNC, _POP_DQPSK = 0, 1, 2, 3
_POP_CLASS = {k: 10 + i for i, k in enumerate(CLASS_ORDER)}


class CalibrationError(RuntimeError):
    """The calibration populations do not separate at the requested operating point."""


def _sync_template() -> SceneTemplate:
    return SceneTemplate(timing_offset_chips=0.3, drift_ppm=(1000.0, 2000.0))


@dataclass(frozen=True, eq=False)
class CalibrationSuite:
    base_seed: int = 0xC7115EED
    n_clean: int = 100
    n_heldout: int = 100
    n_sync: int = 100
    n_per_class: int = 200
    n_dqpsk: int = 50
    sir_grid_db: tuple = (0.0,)
    snr_db: float = 15.0
    false_corruption_target: float = 0.01
    max_equal_error: float = 0.1
    min_class_accuracy: float = 0.9
    phase_weight: float = 100.0
    sync_template: SceneTemplate = field(default_factory=_sync_template)
    cti_template: SceneTemplate = field(default_factory=SceneTemplate)

    def to_dict(self) -> dict:
        return {
            "base_seed": self.base_seed,
            "n_clean": self.n_clean,
            "n_heldout": self.n_heldout,
            "n_sync": self.n_sync,
            "n_per_class": self.n_per_class,
            "n_dqpsk": self.n_dqpsk,
            "sir_grid_db": list(self.sir_grid_db),
            "snr_db": self.snr_db,
            "false_corruption_target": self.false_corruption_target,
            "max_equal_error": self.max_equal_error,
            "min_class_accuracy": self.min_class_accuracy,
            "phase_weight": self.phase_weight,
            "sync_template": self.sync_template.to_dict(),
            "cti_template": self.cti_template.to_dict(),
        }


def population_seed(base_seed: int, population: int, sir_index: int, trial: int) -> int:
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(population, sir_index, trial))
    return int(ss.generate_state(1, np.uint64)[0])


# --- statistics -------------------------------------------------------------


def hamming_threshold_for(hammings, target: float) -> int:
    """Smallest threshold t >= 1 with P(hamming > t) <= target."""
    h = np.asarray(hammings, dtype=int)
    for t in range(1, 33):
        if h.size == 0 or np.mean(h > t) <= target:
            return t
    return 32


def equal_error_threshold(negatives, positives) -> tuple[float, float]:
    """Threshold where P(neg > t) equals P(pos <= t), and that error rate.

    Candidates are midpoints between consecutive pooled sample values; the
    result averages those with the smallest rate imbalance.
    """
    neg = np.sort(np.asarray(negatives, dtype=float))
    pos = np.sort(np.asarray(positives, dtype=float))
    if neg.size == 0 or pos.size == 0:
        raise CalibrationError("equal-error point needs both populations")
    pooled = np.unique(np.concatenate([neg, pos]))
    if pooled.size == 1:
        return float(pooled[0]), 0.5
    cand = (pooled[:-1] + pooled[1:]) / 2
    fpr = 1.0 - np.searchsorted(neg, cand, side="right") / neg.size
    fnr = np.searchsorted(pos, cand, side="right") / pos.size
    gap = np.abs(fpr - fnr)
    best = gap <= gap.min() + 1e-12
    t = float(cand[best].mean())
    rate = float((np.mean(neg > t) + np.mean(pos <= t)) / 2)
    return t, rate


def _dprime(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    s = np.sqrt((a.var() + b.var()) / 2)
    return float((a.mean() - b.mean()) / s) if s > 0 else float("inf")


def _q(x, qs=(5, 50, 95)) -> list:
    x = np.asarray(x, float)
    return [float(v) for v in np.percentile(x, qs)] if x.size else []


# --- trial runners ----------------------------------------------------------


def _probe(args):
    """Mix one scene and return its detection (thresholds irrelevant here)."""
    kind, sir, snr, seed, template = args
    rx = channel.mix(trial_scene(kind, sir, snr, seed, template))
    try:
        det = detect_frame(rx, DetectionConfig())
    except NoFrameFound:
        return rx.truth, None
    return rx.truth, det


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs, chunksize=8))


@dataclass(frozen=True, eq=False)
class Calibration:
    config: DetectionConfig
    templates: Templates
    clean_phase_hist: np.ndarray
    report: dict
    suite: dict
    calibration_date: str

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "calibration_date": self.calibration_date,
            "thresholds": self.config.to_dict(),
            "templates": self.templates.to_dict(),
            "clean_phase_hist": [float(v) for v in self.clean_phase_hist],
            "report": self.report,
            "seed_manifest": self.suite,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        try:
            path.write_text(self.to_json())
        except OSError as exc:
            raise OSError(f"cannot write calibration file {path}: {exc.strerror}") from exc
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported calibration schema_version {d.get('schema_version')!r}")
        provenance = {"seed_manifest": d.get("seed_manifest", {}), "calibration_date": d.get("calibration_date")}
        return cls(
            DetectionConfig.from_dict(d["thresholds"], provenance),
            Templates.from_dict(d["templates"]),
            np.asarray(d.get("clean_phase_hist", np.full(N_HIST_BINS, 1 / N_HIST_BINS)), float),
            d.get("report", {}),
            d.get("seed_manifest", {}),
            str(d.get("calibration_date", "")),
        )


def load_calibration(path) -> Calibration:
    with open(path) as fh:
        return Calibration.from_dict(json.load(fh))


def default_calibration_path() -> Path:
    return Path(__file__).resolve().parent.parent / "data" / "calibration.json"


def load_default_calibration() -> Calibration:
    return load_calibration(default_calibration_path())


# --- the suite --------------------------------------------------------------


def _payload_symbols(det) -> range:
    return range(HEADER_SYMBOLS, len(det.verdicts))


def calibrate(suite: CalibrationSuite = CalibrationSuite(), calibration_date: str = "", workers: int = 1) -> Calibration:
    """Run the calibration suite and fit thresholds and templates.

    Raises :class:`CalibrationError` when the held-out clean set misses the
    false-corruption target, when sync errors and interference cannot be
    told apart within ``max_equal_error``, or when any class's training
    accuracy falls below ``min_class_accuracy``.
    """
    base = suite.base_seed
    none = InterfererKind.NONE
    jobs = {}
    jobs["clean"] = [(none, 0.0, suite.snr_db, population_seed(base, _POP_CLEAN, 0, i), suite.cti_template) for i in range(suite.n_clean)]
    jobs["heldout"] = [(none, 0.0, suite.snr_db, population_seed(base, _POP_HELDOUT, 0, i), suite.cti_template) for i in range(suite.n_heldout)]
    jobs["sync"] = [(none, 0.0, suite.snr_db, population_seed(base, _POP_SYNC, 0, i), suite.sync_template) for i in range(suite.n_sync)]
    for kind in CLASS_ORDER:
        jobs[kind.value] = [
            (kind, sir, suite.snr_db, population_seed(base, _POP_CLASS[kind], si, i), suite.cti_template)
            for si, sir in enumerate(suite.sir_grid_db)
            for i in range(suite.n_per_class)
        ]
    dq_template = replace(suite.cti_template, wifi11b_mode="dqpsk")
    jobs["dqpsk"] = [
        (InterfererKind.WIFI11B, suite.sir_grid_db[0], suite.snr_db, population_seed(base, _POP_DQPSK, 0, i), dq_template)
        for i in range(suite.n_dqpsk)
    ]
    names = list(jobs)
    flat = [j for n in names for j in jobs[n]]
    results = _map(_probe, flat, workers)
    pops, pos = {}, 0
    for n in names:
        pops[n] = results[pos : pos + len(jobs[n])]
        pos += len(jobs[n])
    failed = {n: sum(det is None for _, det in pops[n]) for n in names}

    # Hamming threshold from clean symbols
    clean_h = [v.decode.hamming for _, det in pops["clean"] if det for v in det.verdicts]
    h_t = hamming_threshold_for(clean_h, suite.false_corruption_target)
    held_h = np.array([v.decode.hamming for _, det in pops["heldout"] if det for v in det.verdicts])
    held_rate = float(np.mean(held_h > h_t)) if held_h.size else 0.0
    if held_rate > suite.false_corruption_target:
        raise CalibrationError(
            f"held-out false-corruption rate {held_rate:.4f} exceeds target {suite.false_corruption_target}"
        )

    # Randomness threshold: corrupted sync-error symbols vs corrupted overlapped symbols
    sync_v = [
        v.features.phase_dev_var
        for truth, det in pops["sync"] if det
        for v in det.verdicts
        if v.decode.hamming > h_t and truth[v.index] is Truth.SYNC_ERROR_ONLY
    ]
    cti_v = [
        v.features.phase_dev_var
        for kind in CLASS_ORDER
        for truth, det in pops[kind.value] if det
        for v in det.verdicts
        if v.decode.hamming > h_t and truth[v.index] is Truth.CTI_OVERLAP
    ]
    r_t, eer = equal_error_threshold(sync_v, cti_v)
    if eer > suite.max_equal_error:
        raise CalibrationError(f"sync-error and interference phase statistics overlap: equal error {eer:.3f}")
    cfg = DetectionConfig(h_t, r_t, 1, {"suite": suite.to_dict(), "calibration_date": calibration_date})

    # Per-class pooled features over Cti-labeled symbols
    feats = {}
    for name in [k.value for k in CLASS_ORDER] + ["dqpsk"]:
        rows = []
        for _, det in pops[name]:
            if det is None:
                continue
            cti = apply_config(det, cfg).indices(Cause.CTI)
            if cti:
                rows.append(pooled_features(det, cti))
        feats[name] = rows
    no_cti = {k.value: len(pops[k.value]) - failed[k.value] - len(feats[k.value]) for k in CLASS_ORDER}

    classes = {}
    for kind in CLASS_ORDER:
        rows = feats[kind.value]
        if len(rows) < 2:
            raise CalibrationError(f"too few interference-labeled trials for {kind.value}")
        per = np.array([f.rssi_periodicity for f in rows])
        var = np.array([f.rssi_var_norm for f in rows])
        hist = np.mean([f.phase_hist for f in rows], axis=0)
        classes[kind] = ClassTemplate(kind, float(per.mean()), float(per.std()), float(var.mean()), float(var.std()), hist / hist.sum())
    templates = Templates(classes, suite.phase_weight)

    # acceptance radius and training accuracy
    accuracy, radius = {}, {}
    for kind in CLASS_ORDER:
        own = [templates.scores(f)[kind] for f in feats[kind.value]]
        radius[kind] = float(max(own))
        accuracy[kind.value] = float(np.mean([classify_features(f, templates).label is kind for f in feats[kind.value]]))
    templates = Templates(
        {k: ClassTemplate(k, t.periodicity_mean, t.periodicity_std, t.var_norm_mean, t.var_norm_std, t.phase_hist, radius[k])
         for k, t in classes.items()},
        suite.phase_weight,
    )
    weak = [k for k, a in accuracy.items() if a < suite.min_class_accuracy]
    if weak:
        raise CalibrationError(f"classes below {suite.min_class_accuracy:.0%} training accuracy: {weak}")

    # clean phase-shift histogram over payload symbols
    shifts = [
        phase_shift_series(det.frame.aligned.samples[k * SAMPLES_PER_SYMBOL : (k + 1) * SAMPLES_PER_SYMBOL])
        for _, det in pops["clean"] if det
        for k in _payload_symbols(det)
    ]
    clean_hist = phase_histogram(np.concatenate(shifts)) if shifts else np.full(N_HIST_BINS, 1 / N_HIST_BINS)

    report = _margins(feats, templates, clean_hist, sync_v, cti_v, r_t, eer, h_t, held_rate, accuracy, failed, no_cti)
    return Calibration(cfg, templates, clean_hist, report, suite.to_dict(), calibration_date)


def _margins(feats, templates, clean_hist, sync_v, cti_v, r_t, eer, h_t, held_rate, accuracy, failed, no_cti) -> dict:
    b, g = feats["wifi11b"], feats["wifi11g"]
    bt, zb = feats["bluetooth"], feats["zigbee"]
    dq = feats["dqpsk"]

    def per(rows):
        return [f.rssi_periodicity for f in rows]

    def var(rows):
        return [f.rssi_var_norm for f in rows]

    def lag_frac(rows, p):
        return float(np.mean([f.rssi_period_lag == p for f in rows])) if rows else 0.0

    t = templates.classes
    bt_clean = [tv_distance(f.phase_hist, clean_hist) for f in bt]
    zb_clean = [tv_distance(f.phase_hist, clean_hist) for f in zb]
    return {
        "hamming": {"threshold": h_t, "heldout_false_corruption": held_rate},
        "randomness": {
            "threshold": r_t,
            "equal_error_rate": eer,
            "sync_error_quantiles_5_50_95": _q(sync_v),
            "cti_quantiles_5_50_95": _q(cti_v),
            "n_sync_symbols": len(sync_v),
            "n_cti_symbols": len(cti_v),
        },
        "wifi11b_periodic": {
            "periodicity_mean": {k: float(np.mean(per(feats[k]))) for k in ("wifi11b", "wifi11g", "bluetooth", "zigbee")},
            "dprime_vs_wifi11g": _dprime(per(b), per(g)),
            "dprime_vs_bluetooth": _dprime(per(b), per(bt)),
            "dprime_vs_zigbee": _dprime(per(b), per(zb)),
            "fraction_at_1us_lag": lag_frac(b, 4),
            "dqpsk_periodicity_mean": float(np.mean(per(dq))) if dq else None,
            "dqpsk_fraction_at_1us_lag": lag_frac(dq, 4),
        },
        "wifi11g_aperiodic": {
            "var_norm_mean": {k: float(np.mean(var(feats[k]))) for k in ("wifi11b", "wifi11g", "bluetooth", "zigbee")},
            "var_dprime_vs_wifi11b": _dprime(var(g), var(b)),
            "periodicity_dprime_wifi11b_minus_wifi11g": _dprime(per(b), per(g)),
        },
        "bluetooth_phase": {
            "tv_to_clean_mean": {"bluetooth": float(np.mean(bt_clean)), "zigbee": float(np.mean(zb_clean))},
            "tv_to_clean_margin": float(np.mean(bt_clean) - np.mean(zb_clean)),
            "template_tv_bluetooth_zigbee": tv_distance(t[InterfererKind.BLUETOOTH].phase_hist, t[InterfererKind.ZIGBEE].phase_hist),
        },
        "training_accuracy": accuracy,
        "trials_without_frame": failed,
        "trials_without_cti": no_cti,
    }
