"""Golden-vector conformance: check the oracle against a shipped vector file.

A golden directory holds ``manifest.json`` (case table, mixture, tolerance)
and ``vectors.bin`` (little-endian float32; each case is the input tensor
followed by the expected noise prediction, at the float offsets named in the
manifest). The mixture under test comes from the manifest, not the server
config, so the check pins the file and nothing else.
"""

from __future__ import annotations

import json
import os
import sys
from typing import TextIO

import numpy as np

from .models import mixture_eps, validate_mixture

SUPPORTED_VERSION = 1


def load_golden(golden_dir: str) -> tuple[dict, np.ndarray]:
    with open(os.path.join(golden_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != SUPPORTED_VERSION:
        raise ValueError(f"golden manifest version {manifest.get('version')!r}, "
                         f"supported: {SUPPORTED_VERSION}")
    if manifest.get("dtype") != "f32" or manifest.get("byte_order") != "little":
        raise ValueError("golden vectors must be little-endian f32")
    data = np.fromfile(os.path.join(golden_dir, "vectors.bin"), dtype="<f4")
    return manifest, data


def case_arrays(data: np.ndarray, case: dict) -> tuple[np.ndarray, np.ndarray]:
    shape = tuple(case["shape"])
    count = int(case["count"])
    x = data[case["input_offset"]:case["input_offset"] + count].reshape(shape)
    want = data[case["expected_offset"]:case["expected_offset"] + count].reshape(shape)
    return x, want


def verify_golden(golden_dir: str, out: TextIO | None = None) -> bool:
    """Run every case; prints one line per case and returns overall success."""
    out = sys.stdout if out is None else out
    manifest, data = load_golden(golden_dir)
    components = validate_mixture(manifest["mixture"]["components"])
    tolerance = float(manifest["tolerance"])
    all_ok = True
    for case in manifest["cases"]:
        x, want = case_arrays(data, case)
        got = mixture_eps(components, x, float(case["alpha_bar"])).astype(np.float32)
        err = float(np.abs(got - want).max())
        ok = err <= tolerance
        all_ok = all_ok and ok
        status = "ok" if ok else "FAIL"
        print(f"{status:4s} {case['name']:<14s} max err {err:.3e} (tol {tolerance:.1e})",
              file=out)
    return all_ok
