"""Simulation harness: synthetic data generation with correlated covariates,
out-of-sample metrics (CRPS, predictor RMSE, selection counts) and a
replication runner over the method zoo."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import baseline, engine
from .data import Dataset, build_dataset
from .exceptions import InputError
from .families import get_family

# True linear predictors: intercept plus (column index, coefficient) pairs
# per distribution parameter; columns are 0-based into x1..x6.
TRUE_PREDICTORS = {
    "NO": [
        (0.0, [(0, 1.0), (1, 2.0), (2, 0.5), (3, -1.0)]),
        (0.0, [(2, 0.5), (3, 0.25), (4, -0.25), (5, -0.5)]),
    ],
    "GA": [
        (0.0, [(0, 1.0), (2, 2.0), (4, 0.5), (5, -1.0)]),
        (0.0, [(2, 0.5), (3, 0.75), (4, -0.3), (5, -0.5)]),
    ],
    "ZANBI": [
        (0.5, [(0, 0.5), (2, -1.0), (4, 0.75), (5, 0.75)]),
        (-1.0, [(1, 1.0), (3, -1.25), (4, 1.0)]),
        (-0.5, [(2, 1.0), (3, -1.0), (4, -1.0)]),
    ],
}

N_INFORMATIVE = 6


@dataclass
class ScenarioSpec:
    """One simulation scenario: family, size, noise, correlation, methods."""

    family: str
    nobs: int
    nnoise: int = 30
    rho_corr: float = 0.0
    replications: int = 1
    methods: tuple = ("bs+cf",)
    seed: int = 0
    validation_n: int = 10000
    fit_overrides: dict = field(default_factory=dict)
    gb_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in TRUE_PREDICTORS:
            raise InputError(f"no scenario definition for family {self.family!r}")
        if self.nobs < 10:
            raise InputError("nobs must be >= 10")
        if not 0.0 <= self.rho_corr < 1.0:
            raise InputError("rho_corr must be in [0, 1)")
        self.methods = tuple(self.methods)

    def to_dict(self):
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d


@dataclass
class MetricsRow:
    """Out-of-sample metrics for one (method, replication) pair."""

    method: str
    replication: int
    crps: float = np.nan
    rmse: dict = field(default_factory=dict)
    tp: int = 0
    fp: int = 0
    seconds: float = np.nan
    failed: bool = False
    error: str = ""


def ar1_correlation(ncols, rho):
    """AR(1)-structured correlation matrix with entries rho^|i-j|."""
    idx = np.arange(ncols)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_covariates(nobs, ncols, rho_corr, seed, permute=True):
    """Uniform(-1, 1) covariates, optionally mixed to pairwise correlation.

    With ``rho_corr > 0`` the matrix is multiplied by the upper Cholesky
    factor of the AR(1) correlation so neighboring columns correlate at
    ``rho_corr`` with the strength decaying geometrically; a seeded random
    column permutation then varies which pairs end up correlated.
    """
    if ncols < 1:
        raise InputError("ncols must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(nobs, ncols))
    if rho_corr > 0:
        L = np.linalg.cholesky(ar1_correlation(ncols, rho_corr))
        X = X @ L.T
        if permute:
            X = X[:, rng.permutation(ncols)]
    return X


def true_etas(family_name, X):
    """Linear predictors per distribution parameter from the true model."""
    spec = TRUE_PREDICTORS[family_name]
    if X.shape[1] < N_INFORMATIVE:
        raise InputError(f"need at least {N_INFORMATIVE} covariate columns")
    etas = []
    for intercept, terms in spec:
        eta = np.full(X.shape[0], intercept)
        for j, coef in terms:
            eta = eta + coef * X[:, j]
        etas.append(eta)
    return etas


def true_selection_sets(family_name):
    return [sorted(j for j, _ in terms) for _, terms in TRUE_PREDICTORS[family_name]]


def gen_response(family_name, X, seed):
    """Sample a response from the scenario's true predictors."""
    family = get_family(family_name)
    etas = true_etas(family_name, X)
    theta = family.theta_from_eta(etas)
    rng = np.random.default_rng(seed)
    return family.sample(theta, rng, size=X.shape[0])


def make_sim_dataset(family_name, X, y):
    family = get_family(family_name)
    names = [f"x{j + 1}" for j in range(X.shape[1])]
    return build_dataset(y, X, names, n_params=family.n_params)


def predict_etas(coef, stats_list, raw):
    """Linear predictors for raw covariates given standardized-space coefficients."""
    out = []
    for beta, st in zip(coef, stats_list):
        Z = st.transform(raw)
        out.append(beta[0] + Z @ beta[1:])
    return out


def evaluate(family_name, coef, train_stats, val_X, val_y, method, replication,
             seconds=np.nan, crps_m=1000, crps_seed=0):
    """Score fitted coefficients on a validation set drawn from the truth."""
    family = get_family(family_name)
    etas_hat = predict_etas(coef, train_stats, val_X)
    etas_true = true_etas(family_name, val_X)
    rmse = {}
    for name, eh, et in zip(family.param_names, etas_hat, etas_true):
        rmse[name] = float(np.sqrt(np.mean((eh - et) ** 2)))
    theta_hat = family.theta_from_eta(etas_hat)
    crps = float(np.mean(family.crps(theta_hat, val_y,
                                     rng=np.random.default_rng(crps_seed), m=crps_m)))
    truth = true_selection_sets(family_name)
    tp = fp = 0
    for k, beta in enumerate(coef):
        nz = set(np.flatnonzero(beta[1:]).tolist())
        tp += len(nz & set(truth[k]))
        fp += len(nz - set(truth[k]))
    return MetricsRow(method=method, replication=replication, crps=crps,
                      rmse=rmse, tp=tp, fp=fp, seconds=seconds)


# ---------------------------------------------------------------------------
# Method registry
# ---------------------------------------------------------------------------

SBDR_METHODS = {
    # name: (update_mode, cf_enabled, batchwise)
    "standard": ("noncyclical", False, False),
    "bs": ("best_subset", False, False),
    "cf": ("noncyclical", True, False),
    "bs+cf": ("best_subset", True, False),
    "bw": ("noncyclical", False, True),
    "bw+bs": ("best_subset", False, True),
    "bw+cf": ("noncyclical", True, True),
    "bw+bs+cf": ("best_subset", True, True),
}

METHOD_NAMES = tuple(SBDR_METHODS) + ("thresdesc", "gb", "vardes")

DEFAULT_BATCH_SIZE = 1000


def resolve_fit_config(method, n, seed, overrides=None):
    """FitConfig for a stagewise method name, batch size defaulted for bw."""
    mode, cf, bw = SBDR_METHODS[method]
    opts = dict(update_mode=mode, cf_enabled=cf, seed=seed)
    if bw:
        opts["bs"] = min(n, DEFAULT_BATCH_SIZE)
    opts.update(overrides or {})
    return engine.FitConfig(**opts)


def run_method(method, family_name, dataset, seed, fit_overrides=None, gb_overrides=None):
    """Fit one method; returns (final coefficients, elapsed fit seconds)."""
    family = get_family(family_name)
    if method in SBDR_METHODS:
        config = resolve_fit_config(method, dataset.n, seed, fit_overrides)
        t0 = time.perf_counter()
        res = engine.fit_and_refit(family, dataset, config)
        return res.final_coef(), time.perf_counter() - t0, res
    if method == "thresdesc":
        opts = dict(update_mode="best_subset", cf_enabled=True, seed=seed)
        opts.update(fit_overrides or {})
        config = engine.FitConfig(**opts)
        t0 = time.perf_counter()
        res = engine.threshold_descent(family, dataset, config)
        return res.final_coef(), time.perf_counter() - t0, res
    if method in ("gb", "vardes"):
        config = baseline.GBConfig(seed=seed, **(gb_overrides or {}))
        t0 = time.perf_counter()
        mstop = baseline.cv_mstop(family, dataset, config)
        res = baseline.gb_fit(family, dataset, config)
        if method == "gb":
            state = engine.state_at(res, mstop)
            res.mstop = mstop
            res.coef = [b.copy() for b in state.betas]
            res.selected = [np.flatnonzero(b[1:]).tolist() for b in res.coef]
            res.refit_coef = None
            return res.coef, time.perf_counter() - t0, res
        selected, refit_res = baseline.var_deselect(
            family, dataset, res, mstop, threshold=config.deselect_threshold, config=config)
        res.mstop = mstop
        res.selected = selected
        res.refit_coef = [b.copy() for b in refit_res.coef]
        return res.refit_coef, time.perf_counter() - t0, res
    raise InputError(f"unknown method {method!r}; choose from {sorted(METHOD_NAMES)}")


def run_replication(spec: ScenarioSpec, rep: int):
    """One replication: generate data, fit every method, score on validation."""
    ncols = N_INFORMATIVE + spec.nnoise
    train_seed = [spec.seed, rep, 0]
    resp_seed = [spec.seed, rep, 1]
    val_seed = [spec.seed, rep, 2]
    val_resp_seed = [spec.seed, rep, 3]
    X = gen_covariates(spec.nobs, ncols, spec.rho_corr, train_seed)
    y = gen_response(spec.family, X, resp_seed)
    dataset = make_sim_dataset(spec.family, X, y)
    val_X = gen_covariates(spec.validation_n, ncols, spec.rho_corr, val_seed)
    val_y = gen_response(spec.family, val_X, val_resp_seed)
    rows = []
    for method in spec.methods:
        try:
            coef, seconds, _ = run_method(method, spec.family, dataset,
                                          seed=spec.seed + rep,
                                          fit_overrides=spec.fit_overrides,
                                          gb_overrides=spec.gb_overrides)
            row = evaluate(spec.family, coef, dataset.stats, val_X, val_y,
                           method, rep, seconds=seconds,
                           crps_seed=spec.seed + rep)
        except Exception as exc:  # failures recorded, run continues
            row = MetricsRow(method=method, replication=rep, failed=True,
                             error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


def run_scenario(spec: ScenarioSpec, jobs=1):
    """All replications of a scenario; reproducible from the spec's seed."""
    reps = range(spec.replications)
    if jobs and jobs > 1 and spec.replications > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_rep_worker, [(spec, r) for r in reps]))
    else:
        chunks = [run_replication(spec, r) for r in reps]
    rows = [row for chunk in chunks for row in chunk]
    return rows


def _rep_worker(args):
    spec, rep = args
    return run_replication(spec, rep)


def aggregate(rows):
    """Per-method means over successful replications."""
    out = {}
    methods = []
    for row in rows:
        if row.method not in methods:
            methods.append(row.method)
    for method in methods:
        ok = [r for r in rows if r.method == method and not r.failed]
        failed = sum(1 for r in rows if r.method == method and r.failed)
        if not ok:
            out[method] = {"n_ok": 0, "n_failed": failed}
            continue
        rmse_names = ok[0].rmse.keys()
        out[method] = {
            "n_ok": len(ok),
            "n_failed": failed,
            "crps": float(np.mean([r.crps for r in ok])),
            "rmse": {name: float(np.mean([r.rmse[name] for r in ok])) for name in rmse_names},
            "tp": float(np.mean([r.tp for r in ok])),
            "fp": float(np.mean([r.fp for r in ok])),
            "seconds": float(np.mean([r.seconds for r in ok])),
        }
    return out
