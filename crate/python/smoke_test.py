"""Smoke test for the `xrecolor` extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/xrecolor-*.whl
"""

import json
import math
import random

import xrecolor


def check_colour():
    # first pair of the published CIEDE2000 test table
    d = xrecolor.ciede2000([50.0, 2.6772, -79.7751], [50.0, 0.0, -82.7485])
    assert abs(d - 2.0425) < 1e-4, d
    assert xrecolor.redmean([0, 0, 0], [1, 1, 1]) == 3.0
    lab = xrecolor.srgb_to_lab([1.0, 1.0, 1.0])
    assert abs(lab[0] - 100.0) < 0.02, lab
    try:
        xrecolor.redmean([2.0, 0, 0], [0, 0, 0])
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range colour accepted")


def check_synthesis():
    h, w = 8, 8
    pixels = bytes(v for i in range(h * w) for v in ((200, 30, 35) if i % w < 4 else (30, 60, 170)))
    shape, counts = xrecolor.generate_xrf(pixels, h, w, seed=3, counts_per_pixel=500)
    assert shape == (h, w, 512), shape
    assert len(counts) == h * w * 512
    for p in range(h * w):
        assert sum(counts[p * 512:(p + 1) * 512]) == 500
    again = xrecolor.generate_xrf(pixels, h, w, seed=3, counts_per_pixel=500)
    assert again[1] == counts
    palette = json.loads(xrecolor.demo_palette_json(64))
    assert palette


def check_metrics():
    rng = random.Random(0)
    shape = (3, 32, 32)
    x = [rng.random() for _ in range(3 * 32 * 32)]
    assert abs(xrecolor.ms_ssim(x, x, shape) - 1.0) < 1e-6
    assert xrecolor.uiqi(x, x, shape) == 1.0
    assert xrecolor.srgb_loss(x, x, shape) == 0.0
    y = [min(1.0, v + 0.1) for v in x]
    assert xrecolor.srgb_loss(x, y, shape) > 0.0


def check_models():
    n = xrecolor.uvit_parameter_count()
    assert abs(n - 3485076) / 3485076 < 0.05, n
    report = json.loads(xrecolor.gradcheck(0))
    assert report["passed"], [s["name"] for s in report["suites"] if not s["passed"]]
    assert all(math.isfinite(s["max_rel_error"]) for s in report["suites"])


if __name__ == "__main__":
    check_colour()
    check_synthesis()
    check_metrics()
    check_models()
    print(f"xrecolor {xrecolor.__version__}: python smoke test passed")
