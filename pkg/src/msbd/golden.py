"""Golden test vectors for backend conformance checks.

Writes a manifest.json plus a vectors.bin of little-endian float32 values.
Each case stores an input tensor followed by the expected noise prediction
from the analytic mixture oracle, so an independent backend implementation
(in any language) can verify agreement without importing this package.

Run as ``python3 -m msbd.golden OUT_DIR`` to (re)generate the files.
"""

from __future__ import annotations

import json
import os
import sys

import numpy as np

from .denoiser import MixtureSpec, OracleDenoiser

GOLDEN_VERSION = 1

# two well-separated modes; mirrors the default oracle used by backends
DEFAULT_MIXTURE = ((0.5, -1.0, 0.1), (0.5, 1.0, 0.1))

# (name, shape, alpha_bar, t, rng seed, scale) covering the noise range and
# values far outside the data support
_CASES = (
    ("near_clean", (1, 8, 8), 0.9999, 1, 101, 1.0),
    ("mid_noise", (1, 8, 8), 0.5, 500, 102, 1.0),
    ("high_noise", (3, 4, 5), 0.05, 900, 103, 1.0),
    ("terminal", (1, 16, 1), 0.0047, 999, 104, 1.0),
    ("wide_values", (2, 6, 6), 0.7, 300, 105, 5.0),
    ("single_pixel", (1, 1, 1), 0.3, 700, 106, 1.0),
)


def generate(out_dir: str, mixture: tuple = DEFAULT_MIXTURE) -> dict:
    """Write manifest.json and vectors.bin; returns the manifest."""
    spec = MixtureSpec(components=mixture)
    oracle = OracleDenoiser(spec)
    os.makedirs(out_dir, exist_ok=True)
    blob = bytearray()
    cases = []
    for name, shape, alpha_bar, t, seed, scale in _CASES:
        rng = np.random.default_rng(seed)
        x = (scale * rng.standard_normal(shape)).astype(np.float32)
        eps = oracle.predict_eps(x.astype(np.float64), t, alpha_bar, None).astype(np.float32)
        count = int(np.prod(shape))
        cases.append({
            "name": name,
            "shape": list(shape),
            "t": t,
            "alpha_bar": alpha_bar,
            "input_offset": len(blob) // 4,
            "expected_offset": len(blob) // 4 + count,
            "count": count,
        })
        blob += x.astype("<f4").tobytes()
        blob += eps.astype("<f4").tobytes()
    manifest = {
        "version": GOLDEN_VERSION,
        "dtype": "f32",
        "byte_order": "little",
        "tolerance": 1e-6,
        "mixture": {"components": [list(c) for c in mixture]},
        "cases": cases,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, "vectors.bin"), "wb") as fh:
        fh.write(bytes(blob))
    return manifest


def load(golden_dir: str) -> tuple[dict, np.ndarray]:
    """Read (manifest, flat float32 array) from a golden directory."""
    with open(os.path.join(golden_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    data = np.fromfile(os.path.join(golden_dir, "vectors.bin"), dtype="<f4")
    return manifest, data


def case_arrays(manifest: dict, data: np.ndarray, case: dict) -> tuple[np.ndarray, np.ndarray]:
    """Slice one case's (input, expected) tensors out of the flat vector file."""
    shape = tuple(case["shape"])
    x = data[case["input_offset"]:case["input_offset"] + case["count"]].reshape(shape)
    want = data[case["expected_offset"]:case["expected_offset"] + case["count"]].reshape(shape)
    return x, want


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "golden"
    m = generate(target)
    print(f"wrote {len(m['cases'])} cases to {target}/")
