"""Exercise the facts_planner extension on the bundled desk case.

Build first:  pip install --no-build-isolation ./crates/python
Then run:     python python/smoke_test.py
"""

import json
import sys
import tempfile
from pathlib import Path

import facts_planner as fp

ROOT = Path(__file__).resolve().parent.parent
DESK = ROOT / "data" / "desk" / "case11" / "plan.toml"

RING = """
base_mva = 100.0
[[buses]]
id = 1
[[buses]]
id = 2
[[buses]]
id = 3
reference = true
[[branches]]
id = 1
from = 1
to = 2
x = 0.1
s_max = 100.0
[[branches]]
id = 2
from = 2
to = 3
x = 0.1
s_max = 100.0
[[branches]]
id = 3
from = 1
to = 3
x = 0.1
s_max = 50.0
[[generators]]
id = 1
bus = 1
cost = 10.0
p_min = 0.0
p_max = 300.0
[[loads]]
id = 1
bus = 3
peak = 120.0
"""


def close(a, b, tol=1e-6):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    ring = fp.Case.from_toml(RING)
    h = ring.ptdf()
    assert [round(r[0], 12) for r in h] == [round(1 / 3, 12), round(1 / 3, 12), round(2 / 3, 12)], h
    flows = ring.flows([120.0, 0.0, -120.0])
    assert all(close(f, w) for f, w in zip(flows, [40.0, 40.0, 80.0])), flows
    assert len(ring.ptdf(monitored=[3])) == 1

    cfg = fp.Config.load(str(DESK))
    assert cfg.budget == (2, 2)
    case = cfg.load_case()
    print(case)

    d1 = fp.dcopf(cfg, 4, "shift-factor")
    d2 = fp.dcopf(cfg, 4, "btheta")
    assert close(d1.objective, d2.objective), (d1.objective, d2.objective)
    print(f"dcopf scenario 4: {d1.objective:.4f} $/h")

    s = fp.screen(cfg)
    assert s.vsr_candidates and s.pst_candidates
    print("screened vsr", s.vsr_candidates, "pst", s.pst_candidates)

    p = fp.plan(cfg)
    bf = fp.plan(cfg, brute_force=True)
    lb, ub, gap = p.bounds
    assert p.converged and gap <= 1e-3
    assert close(p.objective, bf.objective, 1e-3), (p.objective, bf.objective)
    assert sum(p.x) <= 4
    report = json.loads(p.report_json())
    assert close(report["objective"], p.objective)
    print(f"plan: {p.objective / 1e6:.4f} M$ in {p.iterations} iterations, placements {p.placements}")

    with tempfile.TemporaryDirectory() as tmp:
        files = p.write(tmp, dump_lp=True)
        names = {Path(f).name for f in files}
        assert {"report.json", "iterations.csv", "master.lp"} <= names, names

    try:
        fp.plan(fp.Config.load(str(DESK), ["algorithm.max_iter=1"]))
    except fp.GapNotClosed as e:
        print("gap check:", e)
    else:
        raise AssertionError("expected GapNotClosed")

    try:
        fp.Config.load(str(DESK), ["algorithm.epsilon=0"])
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")

    print("smoke test ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
