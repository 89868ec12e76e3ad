"""Sphere end-to-end demo: simulate an acquisition of a glass sphere, carve
its visual hull, reconstruct, and report the error.

Writes config + outputs under ./demo_out and drives the same code paths as
the `refrec` CLI. Takes a few minutes on a desktop CPU.

    python demos/sphere_end_to_end.py
"""

import json
import pathlib

from refrec.cli import main
from refrec.mesh import save_ply
from refrec.shapes import icosphere

out = pathlib.Path("demo_out")
out.mkdir(exist_ok=True)
save_ply(out / "gt.ply", icosphere(4))

config = {
    "units": "normalized",
    "seed": 0,
    "scene": {
        "mesh": str(out / "gt.ply"),
        "eta": 1.5,
        "views": 18,
        "camera": {"distance": 3.0, "fx": 60.0, "fy": 60.0,
                   "width": 64, "height": 64},
        "monitor": {"distance": 2.0, "res": [256, 256], "pitch": 0.025},
    },
    "carve": {"resolution": 128},
    "schedule": {"stages": 3, "iters": 150},
    "weights": "auto",
    "paths": {"output_dir": str(out)},
}
cfg_path = out / "config.json"
cfg_path.write_text(json.dumps(config, indent=2))

for step in ("simulate", "carve", "reconstruct", "evaluate"):
    print(f"--- {step} ---", flush=True)
    code = main([step, "--config", str(cfg_path)])
    if code != 0:
        raise SystemExit(code)

print(f"results in {out}/: final.ply, loss.csv, error.csv, error.ply")
