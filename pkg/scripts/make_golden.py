"""Regenerate the golden .gode fixture used by the byte-stability test.

The recipe must match tests/test_codec.py::test_golden_fixture_bytes.
Run from the repository root: python scripts/make_golden.py
"""

import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from conftest import random_model  # noqa: E402

from splatlod.codec import encode  # noqa: E402
from splatlod.hierarchy import build_hierarchy, compute_progression  # noqa: E402
from splatlod.quant import QuantizationSpec, compute_quant_params  # noqa: E402


def main():
    model = random_model(1234, 12)
    prog = compute_progression(3, 9, 3)
    h = build_hierarchy(model, [], prog, score="opacity")
    spec = QuantizationSpec()
    params = compute_quant_params(model, h, spec)
    stream = encode(model, h, spec, params)
    out = ROOT / "tests" / "data" / "golden.gode"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(stream.to_bytes())
    print(f"wrote {out} ({out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
