#!/usr/bin/env python3
"""End-to-end smoke test of the zrp_pme_py extension module.

Builds nothing itself: expects the cdylib under target/{release,debug}.
Run from the repository root:

    cargo build -p zrp-pme-py --release
    python3 python/smoke_test.py
"""

import math
import os
import shutil
import sys
import tempfile


def load_module():
    here = os.path.dirname(os.path.abspath(__file__))
    root = os.path.dirname(here)
    candidates = [
        os.path.join(root, "target", "release", "libzrp_pme_py.so"),
        os.path.join(root, "target", "debug", "libzrp_pme_py.so"),
        os.path.join(root, "target", "release", "libzrp_pme_py.dylib"),
        os.path.join(root, "target", "debug", "libzrp_pme_py.dylib"),
    ]
    built = next((c for c in candidates if os.path.exists(c)), None)
    if built is None:
        sys.exit("build the extension first: cargo build -p zrp-pme-py")
    stage = tempfile.mkdtemp(prefix="zrp_pme_py_")
    ext = ".so" if built.endswith(".so") else ".dylib"
    shutil.copy(built, os.path.join(stage, "zrp_pme_py" + ext))
    sys.path.insert(0, stage)
    import zrp_pme_py

    return zrp_pme_py


def main():
    z = load_module()
    checks = 0

    def check(name, cond):
        nonlocal checks
        checks += 1
        if not cond:
            sys.exit(f"FAIL: {name}")
        print(f"ok: {name}")

    # Partition function: Z_1(phi) = e^phi.
    check("log_partition exponential series", abs(z.log_partition(1.0, 3.0) - 3.0) < 1e-9)
    v = z.scaled_log_partition_diff(2.0, 0.5, 2.0, 1e-4)
    check("scaled partition diff near lambda*(b-a)", abs(v - 3.0) < 5e-3)

    # Poisson single site: mean rho, variance rho*chi.
    mean, var = z.single_site_moments(1.5, 0.01, 1.0)
    check("poisson mean", abs(mean - 1.5) < 1e-9)
    check("poisson variance", abs(var - 0.015) < 1e-9)

    # Detailed balance is exact.
    res = z.detailed_balance_residual(1.0, 0.05, 2.0, 5, 3)
    check("detailed balance", abs(res) < 1e-10)

    # Sampling is reproducible and mass is conserved by the dynamics.
    n, chi, alpha = 32, 0.05, 2.0
    counts = z.sample_configuration([1.0] * n, 1, n, chi, alpha, seed=7)
    counts2 = z.sample_configuration([1.0] * n, 1, n, chi, alpha, seed=7)
    check("sampling deterministic", counts == counts2)
    out = z.simulate_zrp(counts, 1, n, chi, alpha, t_fin=2e-3, n_snap=8, seed=11)
    check("mass conserved", len(set(out["mass"])) == 1)
    check("events happened", out["events"] > 0)

    # Tilted run carries ledger functionals.
    tilted = z.simulate_zrp(
        counts, 1, n, chi, alpha, t_fin=1e-3, n_snap=4, seed=13, tilt_eps=0.2
    )
    check("ledger populated", "a1" in tilted and "a2" in tilted)

    # PME solver: entropy decreases, mass constant.
    cells = 128
    u0 = [1.0 + 0.5 * math.cos(2 * math.pi * (c + 0.5) / cells) for c in range(cells)]
    sol = z.solve_pme(u0, 2.0, 0.02, cells, 16)
    check("pde mass conserved", abs(sol["mass"][0] - sol["mass"][-1]) < 1e-12)
    check("entropy decreases", sol["entropy"][-1] < sol["entropy"][0])

    # Rate function: the PME path has (near) zero dynamic cost, and the
    # gradient-flow identity closes.
    j = z.dynamic_cost(sol["times"], sol["fields"], cells, 2.0, 6)
    h0 = z.entropy(u0, 1, cells, 1.0)
    check("dynamic cost of PME path vanishes", j < 1e-3 * 2.0 * h0)
    rep = z.gradient_flow_report(sol["times"], sol["fields"], cells, 2.0, 1.0, 6)
    scale = max(rep["static_cost"], rep["dynamic_cost"])
    check(
        "gradient flow identity",
        abs(rep["gradient_flow_residual"]) < 5e-3 * scale,
    )
    check("report mass flag", rep["mass_conserved"])

    # Local averages are mass preserving.
    avg = z.local_average([float(k) for k in counts], 1, n, 0.25)
    check("local average mass", abs(sum(avg) - sum(counts)) < 1e-9 * sum(counts))

    print(f"\nall {checks} smoke checks passed")


if __name__ == "__main__":
    main()
