"""Smoke test for the bnbench_py extension.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
or run with PYTHONPATH pointing at a directory holding bnbench_py.so.
"""

import math
import sys
import tempfile

import bnbench_py as bn


def main() -> int:
    series, truth = bn.generate("var_chain", 5, 400, seed=3)
    assert len(series) == 400 and series.n_vars == 5
    assert truth.get(1, 0, 1) and not truth.get(0, 1, 1)

    scores = bn.score("bottleneck", series, max_lag=1, seed=1, epochs=500)
    a = bn.auroc(scores, truth)
    print(f"bottleneck auroc on chain: {a:.3f}")
    assert a > 0.95

    lasso = bn.score("lasso", series)
    assert bn.auroc(lasso, truth) > 0.95
    assert max(max(row) for row in lasso.to_list()[0]) == 1.0

    const = bn.Series([[float(t % 3), float(t % 5)] for t in range(60)])
    assert const.n_vars == 2 and len(const.rows()) == 60

    arms, arm_truth = bn.build_arms("var_random", 10, 200, seed=5, kind="do_clamp")
    sizes = {name: len(s) for name, s in arms.items()}
    print("arm sizes:", sizes)
    assert sizes == {"obs": 200, "combined": 700, "obs_big": 700}
    assert arm_truth.k == 10

    test = bn.paired_test("demo", [0.1, 0.2, 0.15, 0.05])
    print("paired:", test["summary"])
    assert test["n"] == 4 and 0.0 < test["p_t"] < 0.05

    plan = bn.default_plan("f1")
    assert 'stage = "f1"' in plan
    tiny = """
stage = "f1"
base_seed = 1
seeds = 2
methods = ["ols", "granger"]

[[cells]]
generator = { family = "var_chain", k = 4, t = 120 }
"""
    with tempfile.TemporaryDirectory() as out:
        failed = bn.run_plan(tiny, out)
        assert failed == 0
        with open(f"{out}/f1/ledger.csv") as f:
            lines = f.read().splitlines()
        assert lines[0] == "stage,cell,seed,method,arm,auroc,mse,flags,wall_time"
        assert len(lines) == 1 + 4

    try:
        bn.generate("nope", 5, 100, seed=0)
    except ValueError as e:
        print("rejected bad family:", e)
    else:
        raise AssertionError("bad family accepted")

    assert not math.isnan(a)
    print("ok")
    return 0


def test_smoke():
    assert main() == 0


if __name__ == "__main__":
    sys.exit(main())
