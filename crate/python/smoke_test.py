"""Smoke test for the renetseg extension module.

Build and install the wheel first:

    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/renetseg-*.whl
    python python/smoke_test.py
"""

import math
import os
import tempfile

import renetseg


def check_rng():
    value, state = renetseg.rng_next(1)
    assert state == 33554433, state
    assert value == (5180492295206395165 >> 11) / 2.0**53


def check_tensor_and_pnm():
    t = renetseg.Tensor([2, 2, 1], [0.0, 1.0, 1.0, 0.0])
    assert t.shape == [2, 2, 1] and len(t) == 4
    raw = renetseg.write_pnm(t)
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert renetseg.read_pnm(raw) == t
    try:
        renetseg.read_pnm(b"P4 1 1 255\n\0")
    except ValueError as e:
        assert "unsupported" in str(e)
    else:
        raise AssertionError("P4 accepted")


def check_metrics():
    pred = renetseg.Tensor([2, 2, 1], [1.0, 1.0, 0.0, 0.0])
    gt = renetseg.Tensor([2, 2, 1], [1.0, 0.0, 0.0, 0.0])
    assert renetseg.confusion_counts(pred, gt) == {"tp": 1, "tn": 2, "fp": 1, "fn": 0}
    m = renetseg.metrics(pred, gt)
    assert m["ac"] == 0.75 and m["se"] == 1.0 and m["ja"] == 0.5
    assert math.isclose(m["di"], 2 / 3) and math.isclose(m["sp"], 2 / 3)
    row = renetseg.format_report([("Proposed", [0.98, 0.954, 0.94, 0.96, 0.93])]).splitlines()[1]
    assert row.split() == ["Proposed", "0.98", "0.954", "0.94", "0.96", "0.93"], row


def check_gradients():
    for name, err, tol in renetseg.gradient_suite(1):
        assert err < tol, (name, err, tol)


def check_model():
    records = renetseg.generate_synthetic(3, 4, 32)
    assert records == renetseg.generate_synthetic(3, 4, 32)
    images = [img for _, img, _ in records]
    masks = [mask for _, _, mask in records]
    model = renetseg.Model(image_size=32, rnn_units=8, epochs=3, seed=5)
    trace = model.train(images, masks)
    assert [e for e, _, _ in trace] == [1, 2, 3]
    assert all(math.isfinite(loss) for _, loss, _ in trace)
    prob = model.predict(images[0])
    assert prob.shape == [32, 32, 1]
    assert all(0.0 < p < 1.0 for p in prob.data)
    assert set(model.predict_mask(images[0]).data) <= {0.0, 1.0}
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.bin")
        model.save(path)
        again = renetseg.Model.load(path)
        assert again.predict(images[0]) == prob
    try:
        renetseg.Model(image_size=60)
    except ValueError as e:
        assert "divisible" in str(e)
    else:
        raise AssertionError("size 60 accepted")


if __name__ == "__main__":
    check_rng()
    check_tensor_and_pnm()
    check_metrics()
    check_gradients()
    check_model()
    print("smoke test passed")
