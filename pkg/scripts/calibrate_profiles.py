"""Regenerate src/routebench/data/simulator_profiles.json from the shipped cell means."""

from pathlib import Path

from routebench.calibration import calibrate_from_cells, load_cell_means
from routebench.gateway import dump_simulator_profiles

OUT = Path(__file__).resolve().parents[1] / "src" / "routebench" / "data" / "simulator_profiles.json"

if __name__ == "__main__":
    profiles = calibrate_from_cells(load_cell_means())
    meta = {"source": "cell_means.json", "state_fraction": "32/324", "latency_sigma": 0.25}
    OUT.write_text(dump_simulator_profiles(profiles, meta))
    print(f"wrote {len(profiles)} profiles to {OUT}")
