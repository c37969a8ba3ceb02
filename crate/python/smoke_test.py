"""Smoke test for the lbp extension module.

Build first with `pip install --no-build-isolation -e crates/py`.
"""

import json
import math
import pathlib
import sys

import lbp

ROOT = pathlib.Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def close(a, b, tol):
    return math.isclose(a, b, abs_tol=tol)


def main():
    toy = lbp.Scenario.load(str(SCENARIOS / "toy2.scenario.json"))
    scm = toy.scm()
    assert scm.validate() == [], scm.validate()
    assert scm.enumeration_eligible()

    sidecar = json.loads((SCENARIOS / "toy2.oracle.json").read_text())
    frozen = {e["request"]: e["value"] for e in sidecar["entries"] if e.get("value") is not None}

    exact = scm.exact("cte")
    assert close(exact["value"], frozen["cte"], 1e-12), exact["value"]
    mc = scm.cte(20_000, 7)
    assert abs(mc["value"] - exact["value"]) < 5 * mc["mc_se"] + 1e-9

    policy = scm.derive_policy(0)
    assert policy.kind.startswith("counterfactual_marginal")
    csde = scm.exact("csde", policy=policy)
    nde = scm.exact("nde_marginal")
    assert close(csde["value"], nde["value"], 1e-12)

    data = lbp.Dataset.from_csv(scm.simulate(5_000, 11))
    assert len(data) == 5_000
    assert data.arm_size(0) + data.arm_size(1) == 5_000
    opts = {"bootstrap_replicates": 5, "seed": 3}
    est = data.estimate_cte(options=opts)
    assert est["method"] == "g_formula", est["method"]
    hazards = lbp.Policy.from_hazards([0.05, 0.05], [0.5, 0.5])
    for method in ("gcomp", "ipw"):
        r = data.estimate_csde(scm, hazards, method=method, options=opts)
        assert -1.0 <= r["value"] <= 1.0
    pos = data.positivity(data.fit_policy(0))
    assert "flagged" in pos

    zero = lbp.Policy.from_hazards([0.05, 0.05], [0.0, 0.0])
    try:
        scm.exact("csde", policy=zero)
    except lbp.UndefinedEstimandError:
        pass
    else:
        raise AssertionError("zero-birth policy should leave the estimand undefined")

    report = lbp.Scenario.load(str(SCENARIOS / "null.scenario.json")).run()
    assert all(r["status"] == "ok" for r in report["results"])
    truths = [r["report"] for r in report["results"] if r["report"]["method"] == "monte_carlo_truth"]
    assert truths and all(t["value"] == 0.0 for t in truths)

    print("python smoke test: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
