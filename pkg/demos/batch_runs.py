"""
Batch runs from a config file
=============================

Every experiment can be launched from a YAML config.  Each run writes CSV
tables, a results.json summary and a manifest that reproduces the run.
"""

import json
import tempfile
from pathlib import Path

import yaml

from stochns.cli import main

config = {
    "command": "picard-study",
    "seed": 7,
    "model": {"dim": 2, "size": 8},
    "noise": {"q_exponent": 1.5},
    "solve": {"hurst": 0.75, "p_exponent": 4, "n_steps": 64},
    "initial": {"kind": "random", "decay": 2.0, "seed": 1, "lp_norm": 1.0},
    "seed_policy": {"mode": "sweep", "n": 3},
}

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    path = tmp / "picard.yaml"
    path.write_text(yaml.safe_dump(config))
    code = main(["--config", str(path), "--out", str(tmp / "run"), "--quiet"])
    print("exit status", code)
    print((tmp / "run" / "picard.csv").read_text())

    # Re-running the manifest reproduces every table exactly.
    main(["--config", str(tmp / "run" / "manifest.json"), "--out", str(tmp / "again"), "--quiet"])
    same = all((tmp / "run" / f.name).read_bytes() == f.read_bytes() for f in (tmp / "again").glob("*.csv"))
    print("tables identical on re-run:", same)
    print(json.loads((tmp / "run" / "results.json").read_text())["status"])
