"""``ctilab`` command line: generation, mixing, decoding, analysis, calibration, experiments.

Exit codes: 0 success, 1 internal error or failed trials, 2 usage or
validation error, 3 analysis-domain failure (no frame found, nothing to
classify).
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__, channel, zigbee_phy
from .channel import CollisionScene, SceneError
from .cti.calibration import Calibration, CalibrationSuite, calibrate
from .cti.detection import Cause, detect_frame
from .cti.differentiation import ClassificationError, differentiate
from .cti.filtration import FiltrationError, filtrate
from .harness import annotate_packet, export_tables, load_plan, run_plan
from .interferers import CLASS_ORDER, InterfererKind, InterfererSpec, generate
from .signal_core import RX_RATE_HZ, read_iq32, write_iq32

log = logging.getLogger("ctilab")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_DOMAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6}


def parse_duration(text: str) -> float:
    """Seconds from strings such as ``1ms``, ``250us``, ``0.002`` or ``2e-3s``."""
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*(s|ms|us|µs)?\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"invalid duration {text!r}")
    try:
        value = float(m.group(1)) * _UNITS[m.group(2) or "s"]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid duration {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("duration must be positive")
    return value


def _load_json(path, what: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _load_calib(path) -> Calibration:
    if path is None:
        raise UsageError("--calib is required (create one with `ctilab calibrate`)")
    try:
        return Calibration.from_dict(_load_json(path, "calibration file"))
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"calibration file {path}: {exc}") from None


def _read_rx(path):
    try:
        w, _ = read_iq32(path)
    except FileNotFoundError as exc:
        raise UsageError(f"cannot read {exc.filename}") from None
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    if w.sample_rate_hz != RX_RATE_HZ:
        raise UsageError(f"{path}: expected a {RX_RATE_HZ:.0f} Hz receive waveform, got {w.sample_rate_hz:g} Hz")
    return w


def _require_out(args) -> Path:
    if getattr(args, "out", None) is None:
        raise UsageError("--out is required")
    return Path(args.out)


def _write_text(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


# --- subcommands ------------------------------------------------------------


def cmd_gen(args) -> int:
    out = _require_out(args)
    kind = args.kind
    if kind == "zigbee":
        if args.payload_hex is not None:
            try:
                payload = bytes.fromhex(args.payload_hex)
            except ValueError:
                raise UsageError(f"--payload-hex is not valid hex: {args.payload_hex!r}") from None
        else:
            payload = np.random.default_rng(args.seed).integers(0, 256, args.payload_bytes, dtype=np.uint8).tobytes()
        try:
            frame = zigbee_phy.build_frame(payload)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        w = zigbee_phy.modulate(frame)
        desc = f"802.15.4 frame {frame.to_hex()}"
    else:
        try:
            spec = InterfererSpec(InterfererKind(kind), args.duration, args.seed, 0.0, args.mode)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        w = generate(spec)
        desc = f"{kind} interferer, {args.duration:g} s, seed {args.seed}"
    write_iq32(out, w, desc)
    print(f"{out}: {len(w)} samples at {w.sample_rate_hz:.0f} Hz, mean power {w.mean_power():.6f}")
    return EXIT_OK


def cmd_mix(args) -> int:
    out = _require_out(args)
    try:
        scene = CollisionScene.from_dict(_load_json(args.scene, "scene file"))
    except SceneError as exc:
        raise UsageError(f"scene {args.scene}: invalid field {exc}") from None
    rx = channel.mix(scene)
    truth_path = Path(args.truth) if args.truth else out.with_name(out.stem + ".truth.json")
    write_iq32(out, rx.waveform, f"received baseband of {args.scene}")
    _write_text(truth_path, json.dumps(rx.truth_dict(), indent=2, sort_keys=True) + "\n")
    counts = {t.value: rx.truth.count(t) for t in channel.Truth}
    print(f"{out}: {len(rx.waveform)} samples, truth {truth_path} {counts}")
    return EXIT_OK


def cmd_decode(args) -> int:
    w = _read_rx(args.rx)
    fd = zigbee_phy.decode_frame(w)
    doc = {
        "offset": fd.offset,
        "fcs_ok": fd.fcs_ok,
        "length_byte": fd.length_byte,
        "payload_hex": fd.payload.hex() if fd.payload is not None else None,
        "symbols": "".join(f"{int(s):x}" for s in fd.symbols),
        "hamming": [int(h) for h in fd.hamming],
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_analyze(args) -> int:
    out = _require_out(args)
    calib = _load_calib(args.calib)
    paths = args.rx
    if args.mode == "filtrate" and len(paths) < 2:
        raise UsageError("filtrate needs at least 2 copies: pass --rx once per retransmitted copy")
    if args.mode != "filtrate" and len(paths) != 1:
        raise UsageError(f"{args.mode} takes exactly one --rx file")
    waves = [_read_rx(p) for p in paths]
    dets = [detect_frame(w, calib.config) for w in waves]
    det = dets[0]
    classification = filt = None
    if args.mode in ("differentiate", "filtrate"):
        cti = det.indices(Cause.CTI)
        if cti:
            classification = differentiate(det, calib.templates, cti)
        elif args.mode == "differentiate":
            raise DomainError("no interference-labeled symbols to differentiate")
    if args.mode == "filtrate":
        targets = CLASS_ORDER if args.all_classes else None
        try:
            filt = filtrate(waves, dets, args.filtrate_mode, classification, targets, calib.config.hamming_threshold)
        except FiltrationError as exc:
            raise DomainError(str(exc)) from None
    report = annotate_packet(det, classification, filt)
    _write_text(out, report.to_json())
    if args.text:
        _write_text(Path(args.text), report.to_text())
    n_bad = sum(v.corrupted for v in det.verdicts)
    summary = f"{out}: {len(det.verdicts)} symbols, {n_bad} corrupted"
    if classification is not None:
        summary += f", class {classification.label.value}"
    if filt is not None:
        summary += f", {filt.recovered}/{len(filt.symbols)} combined symbols recovered"
    print(summary)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    out = _require_out(args)
    suite = CalibrationSuite(
        base_seed=args.seed if args.seed is not None else CalibrationSuite.base_seed,
        n_clean=args.clean,
        n_heldout=args.clean,
        n_sync=args.clean,
        n_per_class=args.per_class,
        n_dqpsk=args.dqpsk,
    )
    date = args.date or datetime.date.today().isoformat()
    cal = calibrate(suite, date, workers=args.workers)
    cal.write(out)
    cfg = cal.config
    print(
        f"{out}: hamming_threshold {cfg.hamming_threshold}, randomness_threshold {cfg.randomness_threshold:.4f}, "
        f"training accuracy {cal.report['training_accuracy']}"
    )
    return EXIT_OK


def cmd_experiment(args) -> int:
    out = _require_out(args)
    calib = _load_calib(args.calib)
    try:
        plan = load_plan(args.plan) if Path(args.plan).exists() else None
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"plan {args.plan}: {exc}") from None
    if plan is None:
        raise UsageError(f"cannot read plan {args.plan}")
    result = run_plan(plan, calib, workers=args.workers, keep_reports=args.keep_reports)
    table, reports = result if args.keep_reports else (result, {})
    export_tables(table, out)
    for (kind, si, ni, t), rep in reports.items():
        _write_text(out / "reports" / f"{kind}_sir{si}_snr{ni}_t{t:04d}.json", json.dumps(rep, indent=2, sort_keys=True) + "\n")
    for cell in table.cells:
        m = cell.metrics()
        acc = m["diff_accuracy"]
        acc_txt = "" if acc is None else f" accuracy {acc:.3f}"
        print(f"{cell.kind.value:>9} sir {cell.sir_db:+.1f} snr {cell.snr_db:.1f}:{acc_txt} failures {m['failures']}")
    if table.n_failures:
        print(f"{table.n_failures} trial(s) failed; see metrics.json", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="ctilab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ctilab {__version__}")
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--verbose", "-v", action="store_true", default=False)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write a victim frame or interferer waveform")
    g.add_argument("--kind", required=True, choices=["zigbee"] + [k.value for k in CLASS_ORDER if k.value != "zigbee"])
    g.add_argument("--duration", type=parse_duration, default=1e-3, help="interferer length, e.g. 1ms (default 1ms)")
    g.add_argument("--payload-hex", help="victim payload for --kind zigbee")
    g.add_argument("--payload-bytes", type=int, default=20, help="random payload length when --payload-hex is absent")
    g.add_argument("--mode", choices=["dbpsk", "dqpsk"], default="dbpsk", help="802.11b modulation")
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("mix", parents=[common], help="render a scene file into a received baseband and truth labels")
    m.add_argument("--scene", required=True)
    m.add_argument("--truth", help="truth JSON path (default: <out stem>.truth.json)")
    m.set_defaults(func=cmd_mix)

    d = sub.add_parser("decode", parents=[common], help="align and decode a received baseband")
    d.add_argument("--rx", required=True)
    d.set_defaults(func=cmd_decode)

    a = sub.add_parser("analyze", parents=[common], help="detect, differentiate or filtrate interference")
    a.add_argument("--rx", required=True, action="append", help="received baseband (repeat for filtrate)")
    a.add_argument("--mode", required=True, choices=["detect", "differentiate", "filtrate"])
    a.add_argument("--calib", help="calibration file")
    a.add_argument("--text", help="also write the fixed-width text report here")
    a.add_argument("--filtrate-mode", choices=["cti", "corrupted"], default="cti")
    a.add_argument("--all-classes", action="store_true", help="combine Cti windows whatever the classified source")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("calibrate", parents=[common], help="fit thresholds and class templates")
    c.add_argument("--date", help="calibration date recorded in the file (default: today)")
    c.add_argument("--per-class", type=int, default=200, help="trials per interferer class")
    c.add_argument("--clean", type=int, default=100, help="trials for each of the clean, held-out and sync populations")
    c.add_argument("--dqpsk", type=int, default=50, help="802.11b DQPSK trials for the periodicity report")
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("experiment", parents=[common], help="run an experiment plan")
    e.add_argument("--plan", required=True)
    e.add_argument("--calib", required=True)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--keep-reports", action="store_true", help="write one packet report per trial")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "gen" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ctilab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (zigbee_phy.NoFrameFound, DomainError, ClassificationError) as exc:
        print(f"ctilab {args.command}: {exc or 'no frame found'}", file=sys.stderr)
        return EXIT_DOMAIN
    except Exception as exc:  # noqa: BLE001 - last-resort exit code contract
        log.debug("internal error", exc_info=True)
        print(f"ctilab {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
