"""Smoke test for the straightflow_py extension.

Build and run from the repository root:

    cargo build --release -p straightflow-py --features extension-module
    cp target/release/libstraightflow_py.so python/straightflow_py.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import straightflow_py as sf


def gaussian(mean, var):
    return {"family": "gaussian", "mean": [mean], "cov": [[var]]}


def process(coefficients, coupling):
    return sf.Process.from_json(json.dumps({"coefficients": coefficients, "coupling": coupling}))


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b, tol)


def main():
    indep = process("affine", {"kind": "independent", "mu0": gaussian(0, 1), "mu1": gaussian(0, 1)})
    assert indep.dim == 1 and indep.is_affine
    close(indep.coefficients(0.25)[0], 0.75, 1e-15)

    f = indep.oracle_fields(0.5, [0.0])
    close(f["v"][0], 0.0, 1e-12)
    close(f["pi"][0][0], 2.0, 1e-12)
    close(f["rho"], 1.0 / math.sqrt(math.pi), 1e-12)
    close(indep.material_derivative(0.5, [1.0])[0], 4.0, 1e-6)

    a, b = sf.gaussian_ot_map([0.0, 0.0], [[1, 0], [0, 1]], [0.0, 0.0], [[4, 0], [0, 9]])
    close(a[0][0], 2.0, 1e-12)
    close(a[1][1], 3.0, 1e-12)

    ot = process("affine", {"kind": "ot_map", "mu0": gaussian(0, 1), "mu1": gaussian(2, 4)})
    chord, _ = ot.straightness([1.0], n_steps=100)
    assert chord <= 1e-6, chord
    assert max(ot.one_step_error([[0.5], [-1.0]])) <= 1e-6
    assert indep.one_step_error([[1.0]])[0] >= 0.1
    paths = ot.flow([[1.0]], n_steps=4)
    close(paths[0][-1][0], 4.0, 1e-9)

    ens = indep.sample_paths(2000, 10, seed=3)
    assert (ens.n, ens.dim, len(ens.times)) == (2000, 1, 11)
    s = ens.slice(5)
    assert all(acc == [0.0] for acc in s["accelerations"])
    est = ens.estimate(5, [0.0])
    assert est["effective_n"] > 25 and est["bandwidth"] > 0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ensemble.bin")
        ens.save(path)
        back = sf.Ensemble.load(path)
        assert back.slice(5)["positions"] == s["positions"]

    trig = process("trig", {"kind": "independent", "mu0": gaussian(0, 1), "mu1": gaussian(0, 1)})
    report = trig.sample_paths(20000, 10, seed=1).verify_geometric(5, queries=1000)
    assert report["verdict"] == "consistent", report
    try:
        trig.verify_affine(1000, 1)
        raise AssertionError("affine check accepted a trig process")
    except ValueError:
        pass

    xs = s["positions"][:500]
    close(sf.energy_distance(xs, xs), 0.0, 1e-12)

    empirical = process("affine", {
        "kind": "independent",
        "mu0": {"family": "empirical", "samples": [[0.0], [1.0]]},
        "mu1": gaussian(0, 1),
    })
    try:
        empirical.oracle_fields(0.5, [0.0])
        raise AssertionError("oracle accepted empirical endpoints")
    except NotImplementedError:
        pass

    print("straightflow_py smoke test passed")


if __name__ == "__main__":
    main()
