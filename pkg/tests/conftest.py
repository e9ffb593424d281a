"""Session fixtures for the acceptance suite.

The expensive piece is the fine-grid reference ensemble (10^6 trajectories
at refinement level 12, about six minutes on one core).  Simulated
terminals do not depend on the test function, so a single estimate_many
pass yields the reference expectation for all three functions at once;
each per-function value is identical to what fine_grid_reference would
return for the same seed (test_acceptance asserts this at small size).
Only the acceptance module requests these fixtures, so unit-test runs
never pay for them.
"""

import pytest

from expsde.cli import CASES
from expsde.montecarlo import estimate_many, weak_error_sweep
from expsde.reference import ReferenceMethod, ReferenceValue
from expsde.schemes import SchemeKind

ACCEPTANCE_FS = ("x", "x2", "exp_neg_x2")
REFERENCE_N0 = 10**6
REFERENCE_P = 12
SWEEP_N = 10**5
SWEEP_P = list(range(2, 8))
MASTER_SEED = 0


@pytest.fixture(scope="session")
def case1_references():
    model = CASES["case1"]
    ests = estimate_many(model, SchemeKind.ExpES, ACCEPTANCE_FS, REFERENCE_P,
                         REFERENCE_N0, MASTER_SEED, workers=1)
    out = {}
    for f, est in zip(ACCEPTANCE_FS, ests):
        assert est.n_diverged == 0
        out[f] = ReferenceValue(est.mean, ReferenceMethod.FineGridMC,
                                est.stderr,
                                {"n0": REFERENCE_N0, "p_ref": REFERENCE_P,
                                 "seed": MASTER_SEED,
                                 "scheme": SchemeKind.ExpES.value})
    return out


@pytest.fixture(scope="session")
def case1_sweeps(case1_references):
    model = CASES["case1"]
    return {
        f: weak_error_sweep(model, SchemeKind.ExpES, f, SWEEP_P, SWEEP_N,
                            case1_references[f], MASTER_SEED, workers=1)
        for f in ACCEPTANCE_FS
    }
