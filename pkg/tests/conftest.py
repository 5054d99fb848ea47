"""Shared fixtures and the acceptance-criteria summary hook.

The dataset builders here are deliberately plain: fixed formulas, seeded
generators, no file I/O. The terminal-summary hook collects the outcome of
every ``test_criterion_*`` test in test_acceptance.py and prints one line per
criterion at the end of the run.
"""

import re

import numpy as np
import pytest

from ruleblend.data import (CATEGORICAL, MISSING_LEVEL, NUMERIC, Dataset,
                            Feature, FeatureSchema, dataset_from_arrays)

# ---- dataset builders -------------------------------------------------------


def make_sine(n: int, seed: int):
    """The two-variable sine benchmark: y = sin(2 pi x1) sin(2 pi x2) + noise.

    Noise is N(0, 1/4), so signal and noise each contribute variance 1/4 and
    the irreducible unexplained-variance floor is 1/2. Returns (dataset,
    signal) with features x1, x2 only.
    """
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(0.0, 1.0, n)
    x2 = rng.uniform(0.0, 1.0, n)
    signal = np.sin(2 * np.pi * x1) * np.sin(2 * np.pi * x2)
    y = signal + rng.normal(0.0, 0.5, n)
    return dataset_from_arrays(np.column_stack([x1, x2]), y), signal


def make_blend(seed: int, n: int, p_num: int, cat_levels: int = 0,
               missing_rate: float = 0.0, task: str = "regression") -> Dataset:
    """A random mixed-type table with a partly nonlinear response.

    ``cat_levels`` > 0 appends one categorical column with that many levels
    and a per-level effect. ``missing_rate`` blanks feature cells at random
    (the response is never blanked). Classification thresholds the latent
    response at its median, so both classes are always present.
    """
    rng = np.random.default_rng([77, seed])
    x = rng.normal(size=(n, p_num))
    coef = rng.uniform(0.5, 1.5, p_num) * rng.choice([-1.0, 1.0], p_num)
    latent = x @ coef + np.sin(2.0 * x[:, 0])
    columns = [x]
    feats = [Feature(f"x{j + 1}", NUMERIC) for j in range(p_num)]
    if cat_levels:
        codes = rng.integers(0, cat_levels, n).astype(float)
        effect = rng.normal(0.0, 1.0, cat_levels)
        latent = latent + effect[codes.astype(int)]
        columns.append(codes[:, None])
        levels = tuple(f"lv{k}" for k in range(cat_levels))
        feats.append(Feature("grp", CATEGORICAL, levels))
    values = np.column_stack(columns)
    latent = latent + rng.normal(0.0, 0.5, n)
    if task == "classification":
        y = (latent > np.median(latent)).astype(float)
    else:
        y = latent
    missing = np.zeros(values.shape, dtype=bool)
    if missing_rate > 0.0:
        missing = rng.random(values.shape) < missing_rate
        values = values.copy()
        for j, f in enumerate(feats):
            fill = np.nan if f.kind == NUMERIC else MISSING_LEVEL
            values[missing[:, j], j] = fill
    ds = Dataset(FeatureSchema(tuple(feats), "y"), values, missing, y)
    ds.check()
    return ds


@pytest.fixture
def tiny_numeric():
    """Four rows, one feature, a clean step response."""
    x = np.array([1.0, 2.0, 3.0, 4.0])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    return dataset_from_arrays(x[:, None], y, names=["x1"])


# ---- tiny reduced-QP instances ----------------------------------------------


def random_qp_instance(trial: int):
    """One small reduced problem (n <= 10, q <= 6), or None if degenerate.

    Tiny ensembles sometimes collapse to the root alone or leave no
    nullspace; those trials are discarded by the caller.
    """
    import warnings

    from ruleblend.errors import GenerationWarning
    from ruleblend.matrices import build_design
    from ruleblend.nodegen import generate_node_set
    from ruleblend.qp import assemble_reduced, nullspace_basis

    rng = np.random.default_rng([99, trial])
    n = int(rng.integers(4, 11))
    x = rng.uniform(size=(n, 2))
    y = rng.normal(size=n)
    ds = dataset_from_arrays(x, y)
    q = int(rng.integers(2, 7))
    with warnings.catch_warnings():
        # tiny tables often cannot yield q distinct rules; that is fine here
        warnings.simplefilter("ignore", GenerationWarning)
        nodes = generate_node_set(ds, q=q, min_node_size=2,
                                  seed=int(rng.integers(0, 1000)))
    if nodes.q < 2:
        return None
    design = build_design(nodes, ds)
    basis = nullspace_basis(design.indicator)
    if basis.shape[1] == 0:
        return None
    nu = 10.0 ** rng.uniform(-1.3, -0.3)
    lam = [np.inf, np.inf, 3.0, 1.5, np.inf, 2.0][trial % 6]
    return assemble_reduced(design, basis, ds.response, nu=nu, lam=lam)


def collect_qp_instances(count: int, cap: int = 400):
    problems = []
    trial = 0
    while len(problems) < count and trial < cap:
        problem = random_qp_instance(trial)
        if problem is not None:
            problems.append(problem)
        trial += 1
    assert len(problems) == count, f"only {len(problems)} usable instances"
    return problems


# ---- acceptance summary -----------------------------------------------------

_CRITERIA = {
    1: "weighted-mean arithmetic",
    2: "smoothing-matrix identities",
    3: "mean preservation and shrinkage",
    4: "optimizer certification",
    5: "feasibility identities",
    6: "budget endpoints",
    7: "sparsity on the sine benchmark",
    8: "sine predictive sanity",
    9: "housing reproduction",
    10: "missing-value contract",
}

_outcomes: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if m is None:
        return
    num = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        reason = ""
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            reason = report.longrepr[2]
            reason = reason[len("Skipped: "):] if reason.startswith("Skipped: ") else reason
        _outcomes[num] = (report.outcome, reason)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    wording = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP", "error": "ERROR"}
    for num in sorted(_CRITERIA):
        label = _CRITERIA[num]
        if num in _outcomes:
            outcome, reason = _outcomes[num]
            status = wording.get(outcome, outcome.upper())
            if reason:
                status = f"{status} ({reason})"
        else:
            status = "NOT RUN"
        terminalreporter.write_line(f"criterion {num:2d}  {label:<34s} {status}")
