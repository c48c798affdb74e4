"""Monte-Carlo experiment engine, metric tables and annotated packet reports.

Trial ``t`` of cell ``(class, sir_index, snr_index)`` uses the seed
``SeedSequence(base_seed, spawn_key=(class_id, sir_index, snr_index, t))``
reduced to one 64-bit word, where ``class_id`` is the class's fixed index in
:data:`CLASS_IDS`. Trials are independent, and results are merged by key, so
the table does not depend on worker count or scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import channel
from .channel import Truth
from .cti.calibration import Calibration
from .cti.detection import Cause, Detection, detect_frame, partition_packet
from .cti.differentiation import InterferenceClass, differentiate
from .cti.filtration import FiltrationResult, filtrate
from .interferers import CLASS_ORDER, InterfererKind
from .scenarios import SceneTemplate, trial_scene
from .zigbee_phy import NoFrameFound

SCHEMA_VERSION = 1

#: Stable class ids used in seed derivation.
CLASS_IDS = {
    InterfererKind.WIFI11B: 0,
    InterfererKind.WIFI11G: 1,
    InterfererKind.BLUETOOTH: 2,
    InterfererKind.ZIGBEE: 3,
    InterfererKind.NONE: 4,
}

#: Metric names in CSV order.
METRICS = (
    "trials",
    "failures",
    "cti_precision",
    "cti_recall",
    "sync_precision",
    "sync_recall",
    "false_corruption_rate",
    "false_cti_rate",
    "diff_accuracy",
    "low_confidence_rate",
    "confusion_wifi11b",
    "confusion_wifi11g",
    "confusion_bluetooth",
    "confusion_zigbee",
    "confusion_unclassified",
    "ser_pre",
    "ser_post",
    "filtration_improved_rate",
    "packet_recovery_rate",
)

CSV_COLUMNS = ("class", "sir_db", "snr_db", "metric", "value")

_COUNT_KEYS = (
    "cti_tp", "cti_pred", "cti_true",
    "sync_tp", "sync_pred", "sync_true",
    "clean_symbols", "clean_corrupted", "non_overlap_symbols", "false_cti",
    "ser_symbols", "ser_pre_errors", "ser_post_errors",
    "filtration_trials", "filtration_improved",
    "packets_failed", "packets_recovered",
    "low_confidence",
)  # fmt: skip


# --- plan -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentPlan:
    classes: tuple
    sir_grid_db: tuple
    snr_grid_db: tuple
    trials_per_cell: int
    base_seed: int = 0
    scene_template: SceneTemplate = field(default_factory=SceneTemplate)
    filtration_mode: str = "cti"
    filtration_targets: tuple = (InterfererKind.WIFI11G,)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(InterfererKind(c) for c in self.classes))
        object.__setattr__(self, "sir_grid_db", tuple(float(v) for v in self.sir_grid_db))
        object.__setattr__(self, "snr_grid_db", tuple(float(v) for v in self.snr_grid_db))
        object.__setattr__(self, "filtration_targets", tuple(InterfererKind(c) for c in self.filtration_targets))
        if not self.classes or not self.sir_grid_db or not self.snr_grid_db:
            raise ValueError("plan needs at least one class, SIR and SNR")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("plan classes must be distinct")
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ValueError("base_seed must fit in 64 unsigned bits")
        if self.filtration_mode not in ("cti", "corrupted"):
            raise ValueError("filtration_mode must be 'cti' or 'corrupted'")

    def cells(self) -> list[tuple]:
        return [
            (c, si, ni)
            for c in self.classes
            for si in range(len(self.sir_grid_db))
            for ni in range(len(self.snr_grid_db))
        ]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "classes": [c.value for c in self.classes],
            "sir_grid_db": list(self.sir_grid_db),
            "snr_grid_db": list(self.snr_grid_db),
            "trials_per_cell": self.trials_per_cell,
            "base_seed": int(self.base_seed),
            "scene_template": self.scene_template.to_dict(),
            "filtration_mode": self.filtration_mode,
            "filtration_targets": [c.value for c in self.filtration_targets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        return cls(
            classes=tuple(d["classes"]),
            sir_grid_db=tuple(d["sir_grid_db"]),
            snr_grid_db=tuple(d["snr_grid_db"]),
            trials_per_cell=int(d["trials_per_cell"]),
            base_seed=int(d.get("base_seed", 0)),
            scene_template=SceneTemplate.from_dict(d.get("scene_template", {})),
            filtration_mode=d.get("filtration_mode", "cti"),
            filtration_targets=tuple(d.get("filtration_targets", ["wifi11g"])),
        )


def load_plan(path) -> ExperimentPlan:
    with open(path) as fh:
        return ExperimentPlan.from_dict(json.load(fh))


def trial_seed(base_seed: int, kind, sir_index: int, snr_index: int, trial: int) -> int:
    key = (CLASS_IDS[InterfererKind(kind)], int(sir_index), int(snr_index), int(trial))
    return int(np.random.SeedSequence(int(base_seed), spawn_key=key).generate_state(1, np.uint64)[0])


def seed_map(plan: ExperimentPlan) -> dict:
    """Every (class, sir_index, snr_index, trial) of the plan and its seed."""
    return {
        (c, si, ni, t): trial_seed(plan.base_seed, c, si, ni, t)
        for c, si, ni in plan.cells()
        for t in range(plan.trials_per_cell)
    }


# --- packet reports ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PacketReport:
    cells: list
    sections: list
    offset: int
    fcs_ok: bool
    classification: dict | None = None
    filtration: dict | None = None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "offset": self.offset,
            "fcs_ok": self.fcs_ok,
            "n_symbols": len(self.cells),
            "cells": self.cells,
            "sections": self.sections,
            "classification": self.classification,
            "filtration": self.filtration,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"802.15.4 packet: {len(self.cells)} symbols, offset {self.offset}, fcs_ok={self.fcs_ok}"]
        if self.classification:
            c = self.classification
            conf = " (low confidence)" if c.get("low_confidence") else ""
            lines.append(f"interference class: {c['label']} margin {c['score_margin']:.3f}{conf}")
        lines.append("sections: " + " | ".join(f"{s['start']}-{s['end']} {s['kind']}" for s in self.sections))
        post = self.filtration is not None
        head = f"{'idx':>4} {'sym':>3} {'ham':>3} {'flag':<4} {'cause':<10} {'class':<9}"
        if post:
            head += f" {'post':>4} {'pham':>4}"
        lines.append(head.rstrip())
        for c in self.cells:
            row = (
                f"{c['index']:>4} {c['symbol']:>3} {c['hamming']:>3} {('X' if c['corrupted'] else '.'):<4} "
                f"{c['cause']:<10} {c['class'] or '':<9}"
            )
            if post:
                if "post_symbol" in c:
                    row += f" {c['post_symbol']:>4} {c['post_hamming']:>4}"
                else:
                    row += f" {'':>4} {'':>4}"
            lines.append(row.rstrip())
        if post:
            f = self.filtration
            lines.append(f"filtration: {f['recovered']} recovered, {f['unrecovered']} unrecovered, fcs_ok={f['fcs_ok']}")
        return "\n".join(lines) + "\n"


def annotate_packet(
    detection: Detection,
    classification: InterferenceClass | None = None,
    filtration: FiltrationResult | None = None,
) -> PacketReport:
    """Per-symbol cells plus section split, optionally with a filtration view."""
    label = classification.label.value if classification is not None else None
    post = {s.index: s for s in filtration.symbols} if filtration is not None else {}
    cells = []
    for v in detection.verdicts:
        cell = {
            "index": v.index,
            "symbol": f"{v.decode.symbol:x}",
            "hamming": v.decode.hamming,
            "corrupted": v.corrupted,
            "cause": v.cause.value,
            "class": label if v.cause is Cause.CTI else None,
        }
        if v.index in post:
            cell["post_symbol"] = f"{post[v.index].post_symbol:x}"
            cell["post_hamming"] = post[v.index].post_hamming
        cells.append(cell)
    return PacketReport(
        cells,
        [s.to_dict() for s in partition_packet(detection.verdicts)],
        detection.offset,
        bool(detection.frame.fcs_ok),
        classification.to_dict() if classification is not None else None,
        filtration.to_dict() if filtration is not None else None,
    )


# --- trials -----------------------------------------------------------------


def _class_symbols(det: Detection) -> list[int]:
    """Symbols to classify: Cti ones, else corrupted ones, else all."""
    for pick in (det.indices(Cause.CTI), [v.index for v in det.verdicts if v.corrupted]):
        if pick:
            return pick
    return [v.index for v in det.verdicts]


def _score_detection(det: Detection, truth, counts: dict):
    for v in det.verdicts:
        t = truth[v.index] if v.index < len(truth) else Truth.CLEAN
        overlap = t is Truth.CTI_OVERLAP
        counts["cti_true"] += overlap
        counts["cti_pred"] += v.cause is Cause.CTI
        counts["cti_tp"] += overlap and v.cause is Cause.CTI
        if t is Truth.SYNC_ERROR_ONLY and v.corrupted:
            counts["sync_true"] += 1
            counts["sync_tp"] += v.cause is Cause.SYNC_ERROR
        counts["sync_pred"] += v.cause is Cause.SYNC_ERROR
        if t is Truth.CLEAN:
            counts["clean_symbols"] += 1
            counts["clean_corrupted"] += v.corrupted
        if not overlap:
            counts["non_overlap_symbols"] += 1
            counts["false_cti"] += v.cause is Cause.CTI


def run_trial(plan: ExperimentPlan, calib: Calibration, kind, sir_index: int, snr_index: int, trial: int, keep_report=False):
    """One trial's counts, predicted label and optional packet report."""
    kind = InterfererKind(kind)
    seed = trial_seed(plan.base_seed, kind, sir_index, snr_index, trial)
    sir, snr = plan.sir_grid_db[sir_index], plan.snr_grid_db[snr_index]
    scene = trial_scene(kind, sir, snr, seed, plan.scene_template)
    k = plan.scene_template.retransmissions
    copies = channel.make_retransmissions(scene, k) if k > 1 else [channel.mix(scene)]
    cfg = calib.config
    counts = dict.fromkeys(_COUNT_KEYS, 0)

    dets = [detect_frame(rx, cfg) for rx in copies]
    det, rx = dets[0], copies[0]
    _score_detection(det, rx.truth, counts)

    label = None
    classification = None
    if kind is not InterfererKind.NONE:
        classification = differentiate(det, calib.templates, _class_symbols(det))
        label = classification.label.value
        counts["low_confidence"] += classification.low_confidence

    tx = rx.symbols
    filt = None
    if k > 1:
        filt = filtrate(copies, dets, plan.filtration_mode, classification, plan.filtration_targets, cfg.hamming_threshold)
        windows = [s.index for s in filt.symbols]
        if windows:
            pre = min(sum(int(d.frame.decodes[w].symbol != tx[w]) for w in windows) for d in dets)
            post = sum(int(filt.decode.decodes[w].symbol != tx[w]) for w in windows)
            counts["ser_symbols"] += len(windows)
            counts["ser_pre_errors"] += pre
            counts["ser_post_errors"] += post
            counts["filtration_trials"] += 1
            counts["filtration_improved"] += post < pre
        if not det.frame.fcs_ok:
            counts["packets_failed"] += 1
            counts["packets_recovered"] += bool(filt.decode.fcs_ok)
    else:
        windows = det.indices(Cause.CTI)
        counts["ser_symbols"] += len(windows)
        counts["ser_pre_errors"] += sum(int(det.frame.decodes[w].symbol != tx[w]) for w in windows)

    report = annotate_packet(det, classification, filt).to_dict() if keep_report else None
    return counts, label, report


def _trial_job(args):
    plan, calib, kind, si, ni, t, keep = args
    try:
        counts, label, report = run_trial(plan, calib, kind, si, ni, t, keep)
        return (kind, si, ni, t), counts, label, report, None
    except NoFrameFound as exc:
        return (kind, si, ni, t), None, None, None, f"no frame found: {exc}"
    except Exception as exc:  # isolate the failure, keep the sweep going
        msg = f"{type(exc).__name__}: {exc}\n" + traceback.format_exc(limit=3)
        return (kind, si, ni, t), None, None, None, msg


# --- metric tables ----------------------------------------------------------


def _rate(num, den):
    return None if den == 0 else float(num) / float(den)


@dataclass(frozen=True, eq=False)
class CellResult:
    kind: InterfererKind
    sir_db: float
    snr_db: float
    trials: int
    counts: dict
    confusion: dict  # predicted label -> trials; includes "unclassified"
    failures: list  # (trial, message)

    def metrics(self) -> dict:
        c = self.counts
        n_ok = self.trials - len(self.failures)
        m = {
            "trials": self.trials,
            "failures": len(self.failures),
            "cti_precision": _rate(c["cti_tp"], c["cti_pred"]),
            "cti_recall": _rate(c["cti_tp"], c["cti_true"]),
            "sync_precision": _rate(c["sync_tp"], c["sync_pred"]),
            "sync_recall": _rate(c["sync_tp"], c["sync_true"]),
            "false_corruption_rate": _rate(c["clean_corrupted"], c["clean_symbols"]),
            "false_cti_rate": _rate(c["false_cti"], c["non_overlap_symbols"]),
            "diff_accuracy": None,
            "low_confidence_rate": None,
            "ser_pre": _rate(c["ser_pre_errors"], c["ser_symbols"]),
            "ser_post": _rate(c["ser_post_errors"], c["ser_symbols"]) if c["filtration_trials"] else None,
            "filtration_improved_rate": _rate(c["filtration_improved"], c["filtration_trials"]),
            "packet_recovery_rate": _rate(c["packets_recovered"], c["packets_failed"]),
        }
        for k in CLASS_ORDER:
            m[f"confusion_{k.value}"] = self.confusion.get(k.value) if self.kind is not InterfererKind.NONE else None
        m["confusion_unclassified"] = self.confusion.get("unclassified") if self.kind is not InterfererKind.NONE else None
        if self.kind is not InterfererKind.NONE:
            m["diff_accuracy"] = _rate(self.confusion.get(self.kind.value, 0), self.trials)
            m["low_confidence_rate"] = _rate(c["low_confidence"], n_ok)
        return {name: m[name] for name in METRICS}

    def to_dict(self) -> dict:
        return {
            "class": self.kind.value,
            "sir_db": self.sir_db,
            "snr_db": self.snr_db,
            "trials": self.trials,
            "counts": {k: int(self.counts[k]) for k in _COUNT_KEYS},
            "confusion": {k: int(v) for k, v in self.confusion.items()},
            "failures": [[int(t), m] for t, m in self.failures],
            "metrics": self.metrics(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        return cls(
            InterfererKind(d["class"]),
            float(d["sir_db"]),
            float(d["snr_db"]),
            int(d["trials"]),
            {k: int(d["counts"][k]) for k in _COUNT_KEYS},
            {k: int(v) for k, v in d["confusion"].items()},
            [(int(t), str(m)) for t, m in d["failures"]],
        )


@dataclass(frozen=True, eq=False)
class MetricsTable:
    plan: dict
    cells: tuple  # CellResult in plan order
    calibration_date: str = ""

    @property
    def n_failures(self) -> int:
        return sum(len(c.failures) for c in self.cells)

    def cell(self, kind, sir_db: float, snr_db: float) -> CellResult:
        kind = InterfererKind(kind)
        for c in self.cells:
            if c.kind is kind and c.sir_db == float(sir_db) and c.snr_db == float(snr_db):
                return c
        raise KeyError((kind.value, sir_db, snr_db))

    def confusion_matrix(self, sir_db: float, snr_db: float) -> np.ndarray:
        """Rows: true class, columns: predicted class, both in CLASS_ORDER."""
        rows = []
        for k in CLASS_ORDER:
            try:
                cell = self.cell(k, sir_db, snr_db)
            except KeyError:
                rows.append([0] * len(CLASS_ORDER))
                continue
            rows.append([cell.confusion.get(p.value, 0) for p in CLASS_ORDER])
        return np.array(rows, dtype=int)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "plan": self.plan,
            "calibration_date": self.calibration_date,
            "metrics": list(METRICS),
            "cells": [c.to_dict() for c in self.cells],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsTable":
        return cls(d["plan"], tuple(CellResult.from_dict(c) for c in d["cells"]), d.get("calibration_date", ""))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in self.cells:
            for name, value in c.metrics().items():
                w.writerow([c.kind.value, repr(c.sir_db), repr(c.snr_db), name, "" if value is None else repr(value)])
        return buf.getvalue()

    def __eq__(self, other):
        return isinstance(other, MetricsTable) and self.to_dict() == other.to_dict()

    __hash__ = None


def export_tables(m: MetricsTable, out_dir, formats=("csv", "json")) -> list[Path]:
    """Write ``metrics.csv`` and/or ``metrics.json`` into ``out_dir``.

    CSV columns are ``class, sir_db, snr_db, metric, value`` with one row per
    cell per entry of :data:`METRICS`; undefined rates are left empty.
    """
    out_dir = Path(out_dir)
    written = []
    for fmt in formats:
        if fmt not in ("csv", "json"):
            raise ValueError(f"unknown table format {fmt!r}")
        path = out_dir / f"metrics.{fmt}"
        text = m.to_csv() if fmt == "csv" else m.to_json()
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
        written.append(path)
    return written


def load_table(path) -> MetricsTable:
    with open(path) as fh:
        return MetricsTable.from_dict(json.load(fh))


# --- running a plan ---------------------------------------------------------


def run_plan(plan: ExperimentPlan, calib: Calibration, workers: int = 1, keep_reports: bool = False):
    """Execute every trial of the plan and reduce to a :class:`MetricsTable`.

    With ``keep_reports`` the return value is ``(table, reports)`` where
    ``reports`` maps ``(class, sir_index, snr_index, trial)`` to a packet
    report dictionary.
    """
    jobs = [
        (plan, calib, kind, si, ni, t, keep_reports)
        for kind, si, ni in plan.cells()
        for t in range(plan.trials_per_cell)
    ]
    if workers <= 1:
        results = [_trial_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_trial_job, jobs, chunksize=4))
    by_key = {r[0]: r for r in results}

    cells, reports = [], {}
    for kind, si, ni in plan.cells():
        counts = dict.fromkeys(_COUNT_KEYS, 0)
        confusion = {k.value: 0 for k in CLASS_ORDER}
        confusion["unclassified"] = 0
        failures = []
        for t in range(plan.trials_per_cell):
            _, c, label, report, err = by_key[(kind, si, ni, t)]
            if err is not None:
                failures.append((t, err))
                confusion["unclassified"] += 1
                continue
            for k in _COUNT_KEYS:
                counts[k] += c[k]
            if label is not None:
                confusion[label] += 1
            if report is not None:
                reports[(kind.value, si, ni, t)] = report
        if kind is InterfererKind.NONE:
            confusion = {}
        cells.append(
            CellResult(kind, plan.sir_grid_db[si], plan.snr_grid_db[ni], plan.trials_per_cell, counts, confusion, failures)
        )
    table = MetricsTable(plan.to_dict(), tuple(cells), calib.calibration_date)
    return (table, reports) if keep_reports else table
