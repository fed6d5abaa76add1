"""Smoke test for the segregation_py extension.

Uses an installed module if there is one, otherwise the shared library from
`cargo build --release -p segregation-py`.
"""

import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    try:
        import segregation_py

        return segregation_py
    except ImportError:
        pass
    lib = os.path.join(ROOT, "target", "release", "libsegregation_py.so")
    if not os.path.exists(lib):
        sys.exit(f"build the extension first: cargo build --release -p segregation-py ({lib} missing)")
    where = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(where, "segregation_py.so"))
    sys.path.insert(0, where)
    import segregation_py

    return segregation_py


def main():
    seg = load()

    g = seg.Geometry(16)
    assert (g.side, g.dim, g.sites) == (16, 1, 16)
    flat = g.heat(0.01, [1.0 if x == 0 else 0.0 for x in range(16)])
    assert abs(sum(flat) - 1.0) < 1e-12 and min(flat) >= 0.0

    n = 32
    u0 = [0.8 * 0.5 * (1 - math.cos(2 * math.pi * x / n)) if x < n // 2 else 1e-9 for x in range(n)]
    v0 = [1e-9 if x < n // 2 else 0.6 for x in range(n)]
    traj = seg.rd_solve(2, 1, n, 20.0, u0, v0, 0.02, [0.0, 0.01, 0.02])
    assert traj["times"] == [0.0, 0.01, 0.02]
    assert traj["monitors"]["breaches"] == [], traj["monitors"]
    assert all(0.0 <= x <= 1.0 for row in traj["u"] + traj["v"] for x in row)

    profiles = seg.kmc_profiles(2, 1, 8, 5.0, [0.5] * 8, [0.3] * 8, [0.0, 0.05], replicas=50, seed=3)
    assert len(profiles) == 2 and len(profiles[1]["eta1"]) == 8

    series = seg.master_entropy(2, 1, 3, 2.0, [0.6, 0.4, 0.5], [0.2, 0.3, 0.25], [0.0, 0.05, 0.1])
    assert abs(series[0]["h"]) < 1e-12 and all(math.isfinite(p["h"]) for p in series)

    scaling = seg.flow_scaling(2, [2, 4, 8])
    assert scaling["matches"], scaling
    assert seg.flow_energy(2, 1) > 0.0
    assert seg.concentration([0.1, 0.5, 0.9])["pass"]
    assert 0.6 < seg.stefan_lambda(1.0, 1.0) < 0.7

    assert "case2-demo" in seg.presets()
    cfg = seg.Config.preset("case2-demo")
    again = seg.Config.from_json(cfg.to_json())
    assert again.hash() == cfg.hash()
    out = tempfile.mkdtemp()
    result = cfg.run(out=out, dry_run=True)
    manifest = json.loads(result["manifest"])
    assert manifest["dry_run"] and manifest["config_hash"] == cfg.hash()

    print("python smoke test: OK")


if __name__ == "__main__":
    main()
