"""Smoke test for the exptree Python bindings.

Build and install the extension first, then run from the repo root:

    maturin develop --release -m crates/python/Cargo.toml
    python python/smoke_test.py
"""

import math
import random

import exptree


def main():
    rng = random.Random(0)
    cards = [3, 2, 4]
    rows, targets = [], []
    for _ in range(400):
        x = [rng.randrange(c) for c in cards]
        rows.append(x)
        targets.append(2.0 * (x[0] == 1) - 1.5 * x[2] + rng.gauss(0, 0.3))
    data = exptree.Dataset(cards, rows, targets)
    assert len(data) == 400

    density, lls = exptree.MixtureDensity.fit(data, components=2, seed=1)
    assert all(b >= a - 1e-9 for a, b in zip(lls, lls[1:])), "EM log-likelihood decreased"
    assert abs(sum(density.weights) - 1.0) < 1e-9

    forest = exptree.Forest.induce(data, max_depth=3)
    complete = rows[0]
    # with nothing missing the expectation is the plain prediction
    assert exptree.expected_prediction(forest, density, complete) == forest.evaluate(complete)

    partial = [None, complete[1], None]
    e1 = exptree.expected_prediction(forest, density, partial)
    e2 = exptree.expected_squared_prediction(forest, density, partial)
    assert e2 >= e1 * e1 - 1e-12

    masked = data.inject_mcar(0.4, seed=7)
    assert 0.3 < masked.missing_fraction() < 0.5
    before = exptree.expected_mse(forest, density, masked)
    refit = exptree.refit(forest, density, masked, lam=0.0)
    after = exptree.expected_mse(refit, density, masked)
    assert after <= before + 1e-9

    round_trip = exptree.Forest.from_json(refit.to_json())
    assert round_trip.thetas == refit.thetas
    density2 = exptree.MixtureDensity.from_json(density.to_json())
    assert density2.weights == density.weights

    try:
        exptree.expected_prediction(forest, density, [5, None, None])
    except ValueError as e:
        assert "value_out_of_range" in str(e)
    else:
        raise AssertionError("out-of-range value accepted")

    summary = exptree.run_experiment(
        """
        pis = [0.0, 0.5]
        trials = 2
        [data]
        kind = "synthetic"
        n_train = 200
        n_test = 100
        [density]
        components = 2
        """
    )
    assert len(summary) == 8
    assert all(math.isfinite(row["mean"]) for row in summary)

    print(f"ok: expected mse {before:.4f} -> {after:.4f} after refit")


if __name__ == "__main__":
    main()
