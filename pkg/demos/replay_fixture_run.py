#!/usr/bin/env python3
"""
Reproducing a run from a replay store
=====================================

The fixture config points at a replay store recorded from an earlier run.
Replay never touches the network, so two runs write identical files.
"""

import filecmp
import tempfile
from pathlib import Path

from zefav.cli import main

config = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "run.json"

with tempfile.TemporaryDirectory() as tmp:
    first, second = Path(tmp) / "first", Path(tmp) / "second"
    main(["verify", "-c", str(config), "--output-dir", str(first)])
    main(["verify", "-c", str(config), "--output-dir", str(second)])

    for name in ("traces.jsonl", "report.json"):
        same = filecmp.cmp(first / "fixture" / name, second / "fixture" / name, shallow=False)
        print(f"{name}: identical={same}")
