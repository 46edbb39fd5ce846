import numpy as np
import pytest

from ivcate.crossfit import NuisanceLearners, compute_residuals, fit_nuisances
from ivcate.dataset import make_splits
from ivcate.dgp import DgpSpec, generate
from ivcate.harness import run_coverage


@pytest.fixture(scope="session")
def coverage_data():
    """One moderate coverage-family dataset with fitted linear nuisances."""
    spec = DgpSpec("coverage", n=20000, seed=42)
    data, truth = generate(spec)
    plan = make_splits(data.n, 2, seed=0)
    nuis = fit_nuisances(data, NuisanceLearners.linear(), plan, fixed_r=0.5)
    res = compute_residuals(data, nuis)
    return {"spec": spec, "data": data, "truth": truth, "plan": plan,
            "nuis": nuis, "res": res}


@pytest.fixture(scope="session")
def coverage_mc_100k():
    """The expensive 100-replicate coverage experiment, shared across tests."""
    spec = DgpSpec("coverage", n=100000, seed=3)
    return run_coverage(spec, ["dmlateiv", "driv"], R=100, seed=0,
                        keep_rows=False)


def nlsym_augment(data):
    """Quadratic feature expansion that makes the outcome nuisance linear."""
    x4 = data.X[:, 4]
    x7 = data.X[:, 7]
    X = np.column_stack([data.X, x4**2, x4 * x7])
    names = list(data.column_names) + ["mother_educ_sq", "mother_educ_black"]
    return data.with_features(X, names)
