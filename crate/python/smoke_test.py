"""Smoke test for the `scil` extension module.

Build and install first:

    pip install --no-build-isolation ./crates/python
    python python/smoke_test.py
"""

import json
import math
import tempfile
from pathlib import Path

import scil


def check_primitives():
    m = scil.geometric_median([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [10.0, 10.0]])
    assert len(m) == 2 and all(math.isfinite(v) for v in m)

    pts = [[float(i), float(i % 3)] for i in range(8)]
    out = scil.smote_oversample(pts, 20, k=3, seed=7)
    assert len(out) == 20
    assert out[:8] == pts


def check_scorer():
    s = scil.PrequentialScorer(0.99, [0, 1])
    for _ in range(50):
        s.record(0, 0)
    s.record(1, 1)
    s.record(1, 0)
    assert 0.0 < s.g_mean <= 1.0
    assert abs(s.en_accuracy - 51 / 52) < 1e-12
    assert s.false_negative_rate == 0.5


def check_engine():
    stream = scil.generate("blob", seed=3, length=3000)
    assert len(stream) == 3000
    by_class = {}
    for _, label, x in stream[:1200]:
        by_class.setdefault(label, []).append(x)
    # shift into [0, 1] roughly; the engine expects scaled features
    lo, hi = -20.0, 45.0
    scale = lambda x: [(v - lo) / (hi - lo) for v in x]
    data = [[scale(x) for x in by_class[0][:300]], [scale(x) for x in by_class[1][:20]]]

    eng = scil.Engine(data, dataset="blob", seed=3)
    assert eng.class_count == 2
    assert len(eng.thresholds) == 2
    for _, label, x in stream[1200:1700]:
        out = eng.step(scale(x), label)
        assert out["event"] in ("none", "new_model", "incremental")
        assert eng.stored <= eng.capacity_bound

    model = scil.UnifiedModel.from_json(eng.model().to_json())
    label, probs, loss = model.predict(scale(stream[0][2]))
    assert abs(sum(probs) - 1.0) < 1e-9 and loss >= 0.0


def check_experiment():
    cfg = scil.default_config("sea").replace("length = 15000", "length = 5000")
    summary = json.loads(scil.run_experiment(config=cfg, runs=1))
    assert summary["runs"] == 1
    assert 0.0 <= summary["en_accuracy"]["mean"] <= 1.0

    with tempfile.TemporaryDirectory() as d:
        a, b = Path(d, "a.csv"), Path(d, "b.csv")
        a.write_text("x\n1\n")
        b.write_text("x\n1\n")
        assert scil.diff(str(a), str(b)) is None
        b.write_text("x\n2\n")
        assert scil.diff(str(a), str(b)) is not None


if __name__ == "__main__":
    check_primitives()
    check_scorer()
    check_engine()
    check_experiment()
    print("smoke test passed")
