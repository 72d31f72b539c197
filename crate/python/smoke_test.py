"""Smoke test for the pygbq extension.

Build first with `cargo build --release -p gbq-python`; the script loads
target/release/libpygbq.so directly, so no packaging step is needed.
"""

import importlib.machinery
import importlib.util
import json
import math
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_extension():
    for name in ("libpygbq.so", "libpygbq.dylib", "pygbq.dll"):
        path = ROOT / "target" / "release" / name
        if path.exists():
            loader = importlib.machinery.ExtensionFileLoader("pygbq", str(path))
            spec = importlib.util.spec_from_loader("pygbq", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("extension not built: run `cargo build --release -p gbq-python`")


def cpmg(n, amplitude_scale=1.0):
    sigma = 6.0 / 4096
    amplitude = math.pi / math.sqrt(2 * math.pi * sigma**2) * amplitude_scale
    pulses = [{"tau": (k + 0.5) / n, "A": amplitude, "sigma": sigma} for k in range(n)]
    return json.dumps({"trains": [{"axis": "X", "shape": "gaussian", "pulses": pulses}]})


def main():
    g = load_extension()
    labels = g.output_labels()
    assert len(labels) == 18 and labels[0] == "X+:X"

    free = g.simulate()
    assert abs(free[0] - math.cos(10.0)) < 1e-9, free[0]

    noisy = g.simulate(cpmg(4), noise="dephasing", k=50, seed=1)
    assert all(-1.0 <= v <= 1.0 for v in noisy)

    v = g.vo_operator(0.0, -math.pi / 4, 0.0, 1.0, "X")
    assert abs(v[0][0][0] - 1.0) < 1e-12 and abs(v[0][1][0]) < 1e-12

    with tempfile.TemporaryDirectory() as tmp:
        train, test = g.generate("CPMG_G_X_28", tmp, instances=1, k=8, seed=3)
        model, train_mse, test_mse = g.Model.fit(str(train), str(test), iterations=5)
        assert model.parameter_count == 39492
        assert math.isfinite(train_mse) and test_mse is not None
        out = model.predict(cpmg(3))
        assert len(out) == 18
        heads = model.extract_vo(cpmg(3))
        assert len(heads) == 3 and all(0.0 <= h[3] <= 1.0 for h in heads)
        path = pathlib.Path(tmp) / "model.json"
        model.save(str(path))
        assert g.Model.load(str(path)).predict(cpmg(3)) == out

    print("pygbq smoke test passed")


if __name__ == "__main__":
    main()
