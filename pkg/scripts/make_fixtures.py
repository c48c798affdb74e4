"""Regenerate the committed sample scenes, golden truth files and default calibration.

Run from the repository root:  python3 scripts/make_fixtures.py [--calibration]
"""

import argparse
import json
from pathlib import Path

from ctilab import channel, zigbee_phy
from ctilab.cti.calibration import CalibrationSuite, calibrate, default_calibration_path, population_seed
from ctilab.scenarios import SceneTemplate, trial_scene

ROOT = Path(__file__).resolve().parent.parent
SCENES = ROOT / "scenes"
CALIBRATION_DATE = "2026-10-18"
FIXTURE_BASE_SEED = 0xF1C7


def sample_scenes() -> dict:
    def seed(i):
        return population_seed(FIXTURE_BASE_SEED, 0, 0, i)

    scenes = {"clean": trial_scene("none", 0.0, 15.0, seed(0))}
    for i, kind in enumerate(("wifi11b", "wifi11g", "bluetooth", "zigbee"), start=1):
        scenes[kind] = trial_scene(kind, 0.0, 15.0, seed(i))
    scenes["sync_error"] = trial_scene(
        "none", 0.0, 15.0, seed(5), SceneTemplate(timing_offset_chips=0.3, drift_ppm=(2000.0,))
    )
    frame = zigbee_phy.build_frame(bytes(range(24)))
    scenes["tail_wifi11g"] = channel.overlap_scene(frame, "wifi11g", 20, None, sir_db=0.0, snr_db=15.0, seed=seed(6), center_offset_hz=2e6)
    return scenes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--calibration", action="store_true", help="also rerun the default calibration")
    args = ap.parse_args()
    (SCENES / "golden").mkdir(parents=True, exist_ok=True)
    for name, scene in sample_scenes().items():
        (SCENES / f"{name}.json").write_text(scene.to_json())
        truth = channel.mix(scene).truth_dict()
        (SCENES / "golden" / f"{name}.truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
        print(name, "written")
    if args.calibration:
        calibrate(CalibrationSuite(), CALIBRATION_DATE).write(default_calibration_path())
        print("calibration written")


if __name__ == "__main__":
    main()
