"""Smoke test for the coagfrag_py extension module.

Build and install the module first, for example:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/coagfrag_py-*.whl

then run ``python python/smoke_test.py``.
"""

import json
import math
import sys

import coagfrag_py as cf


def scenario(**overrides):
    doc = {
        "domain": {"dim": 1, "lengths": [1.0], "cells": [8]},
        "truncation": {"n": 32, "mode": "conservative"},
        "kernels": {
            "coagulation": {"type": "power_law", "C_Q": 0.5, "alpha": 0.5, "beta": 0.5},
            "fragmentation": {"type": "power_law", "C_F": 0.5, "gamma": 2},
            "daughters": {"type": "power_law", "nu": 0},
        },
        "diffusion": {"type": "convergent", "params": {"d1": 1.0, "d_inf": 0.5}},
        "initial": {"type": "monodisperse", "density": "gaussian_bump", "params": {"amplitude": 1.0, "base": 0.1}},
        "time": {"T": 0.5},
        "outputs": {"moment_orders": [0, 2], "sample_every": 0.1},
    }
    doc.update(overrides)
    return cf.Scenario.from_json(json.dumps(doc))


def check(name, ok, detail=""):
    print(f"{'ok  ' if ok else 'FAIL'} {name} {detail}")
    return ok


def main():
    results = []

    grid = cf.Grid([1.0, 2.0], [4, 5])
    results.append(check("grid", len(grid) == 20 and grid.dim == 2 and abs(grid.measure() - 2.0) < 1e-15))

    s = scenario()
    r = cf.run(s)
    masses = r.masses()
    drift = max(abs(m - masses[0]) for m in masses) / masses[0]
    results.append(check("conservative run", drift < 1e-10 and r.times()[-1] == 0.5, f"drift={drift:.2e}"))
    results.append(check("moments csv", r.moments_csv().startswith("t,dt,total_mass,int_rho_1,int_rho_0,int_rho_2")))
    results.append(check("final state", len(r.final_state()) == 32 and len(r.final_state()[0]) == 8))

    results.append(check("C_Q,2", cf.superadditivity_constant(2.0, 2000) == 1.0))
    c3 = cf.superadditivity_constant(3.0, 2000)
    results.append(check("C_Q,3", abs(c3 - 3.0) < 1e-12, f"{c3}"))
    results.append(check("closed form", cf.constant_kernel_exact(2, 2.0) == 0.125))
    results.append(check("bound_elem1", cf.bound_elem1(3.0, 0.5) == 16.0))

    ref = cf.reference_trajectory(cf.Kernels.power_law(0.5, 0.0, 0.0), [1.0] + [0.0] * 63, [1.0])
    err = max(abs(ref[0][i - 1] - cf.constant_kernel_exact(i, 1.0)) for i in range(1, 11))
    results.append(check("reference trajectory", err < 1e-8, f"err={err:.2e}"))

    unit = cf.constant_forcing_ratio(cf.Grid([1.0], [64]))
    est = cf.estimate_mr_constant(trials=8, cells=64)
    results.append(check("maximal regularity", abs(unit - 1.0) < 1e-10 and est["estimate"] <= 1.0 + 1e-12))

    report = cf.audit(s, samples=1000)
    results.append(check("audit", all(c["pass"] for c in report), f"{len(report)} checks"))

    try:
        cf.Scenario.from_json("{}")
        results.append(check("invalid scenario rejected", False))
    except ValueError:
        results.append(check("invalid scenario rejected", True))

    stiff = scenario(
        truncation={"n": 128, "mode": "conservative"},
        kernels={
            "coagulation": {"type": "power_law", "C_Q": 0.5, "alpha": 0, "beta": 0},
            "fragmentation": {"type": "power_law", "C_F": 100, "gamma": 6},
            "daughters": {"type": "power_law", "nu": 0},
        },
        initial={"type": "geometric"},
        time={"T": 1.0, "scheme": "explicit"},
        outputs={},
    )
    try:
        cf.run(stiff)
        results.append(check("stiffness error", False))
    except cf.StiffnessError:
        results.append(check("stiffness error", True))

    swept = cf.sweep(scenario(truncation={"n": 8, "mode": "full_loss"}))
    results.append(check("sweep", swept["gel_report"]["levels"] == [8, 16, 32]))
    results.append(check("finite", all(math.isfinite(g) for g in r.gel_fractions())))

    passed = sum(results)
    print(f"{passed}/{len(results)} smoke checks passed")
    return 0 if passed == len(results) else 1


if __name__ == "__main__":
    sys.exit(main())
