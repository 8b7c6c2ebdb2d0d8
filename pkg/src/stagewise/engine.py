"""Stagewise boosting core: semi-constant steps, best-subset updates,
correlation filtering, batchwise fitting, BIC stopping, threshold descent
and refitting.

The fit loop follows a strict accept/reject scheme: candidate variables are
chosen on the current batch, a joint update is formed for every non-empty
subset of distribution parameters, and the update is kept only when it
improves the log-likelihood on the *next* batch. With a full batch this
makes the fit monotone; with random batches the decision is quasi
out-of-sample.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import stats as _scipy_stats

from .data import Dataset, make_batches
from .exceptions import InputError, NumericError

# Implicit early stopping: give up after this many consecutive iterations
# in which no update improved the next-batch log-likelihood.
NO_UPDATE_PATIENCE = 50

# Refit convergence constants (selection-stage budget T scales the cap).
REFIT_CAP_FACTOR = 50
REFIT_GRAD_TOL = 1e-6
REFIT_GRAD_STREAK = 25
REFIT_STALL_TOL = 1e-9
REFIT_STALL_WINDOW = 100


# ---------------------------------------------------------------------------
# Configuration and result containers
# ---------------------------------------------------------------------------

@dataclass
class FitConfig:
    """Tuning constants for the stagewise fit.

    ``kappa`` is either an explicit correlation threshold or ``"auto"`` to
    derive it from the significance level ``alpha`` (clamped into
    ``[kappa_min, kappa_max]`` unless a clamp is ``None``). ``bs`` of ``None``
    (or equal to ``n``) selects full-batch updating.
    """

    eps: float = 0.01
    nu: float = 0.1
    rho: float = 0.8
    T: int = 1000
    kappa: float | str = "auto"
    alpha: float = 0.05
    kappa_min: float | None = 0.075
    kappa_max: float | None = 0.175
    bs: int | None = None
    update_mode: str = "best_subset"
    cf_enabled: bool = True
    bic_ma_window: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.eps > 0:
            raise InputError("eps must be > 0")
        if not 0.0 <= self.nu <= 1.0:
            raise InputError("nu must be in [0, 1]")
        if not 0.0 <= self.rho <= 1.0:
            raise InputError("rho must be in [0, 1]")
        if self.T < 2:
            raise InputError("T must be at least 2")
        if not isinstance(self.kappa, str) and self.kappa < 0:
            raise InputError("kappa must be >= 0")
        if isinstance(self.kappa, str) and self.kappa != "auto":
            raise InputError(f"kappa must be a number or 'auto', got {self.kappa!r}")
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must be in (0, 1)")
        if self.bic_ma_window < 1:
            raise InputError("bic_ma_window must be >= 1")
        if self.update_mode not in ("best_subset", "noncyclical"):
            raise InputError(f"unknown update_mode {self.update_mode!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class CoefficientState:
    """Per-parameter coefficient vectors; index 0 of each is the intercept."""

    betas: list
    t: int = 0

    def copy(self):
        return CoefficientState([b.copy() for b in self.betas], self.t)

    def eta(self, dataset: Dataset, rows=None):
        out = []
        for beta, Xk in zip(self.betas, dataset.X):
            Xs = Xk if rows is None else Xk[rows]
            out.append(beta[0] + Xs @ beta[1:])
        return out

    def df(self):
        """Count of nonzero non-intercept coefficients (intercepts never count)."""
        return int(sum(np.count_nonzero(b[1:]) for b in self.betas))

    def nonzero_slopes(self):
        return [np.flatnonzero(b[1:]) for b in self.betas]


@dataclass
class FitResult:
    """Recorded fit: sparse coefficient path, BIC/log-likelihood paths,
    the BIC-optimal iteration, selections and optional refit coefficients."""

    family: str
    method: str
    n: int
    config: dict
    column_names: list
    init_coef: list
    path: list                       # (iteration, parameter, coef index, new value)
    loglik_path: np.ndarray
    df_path: np.ndarray
    bic_path: np.ndarray
    accepted: np.ndarray
    mstop: int
    coef: list                       # coefficients at mstop
    selected: list                   # nonzero slope indices per parameter at mstop
    refit_coef: list | None = None
    refit_converged: bool | None = None
    timings: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    # next-batch log-likelihoods before/after each iteration's update,
    # kept for invariant checks; not serialized.
    tilde_before: np.ndarray | None = None
    tilde_after: np.ndarray | None = None

    def final_coef(self):
        return self.refit_coef if self.refit_coef is not None else self.coef

    def to_dict(self):
        return {
            "family": self.family,
            "method": self.method,
            "n": self.n,
            "config": self.config,
            "column_names": self.column_names,
            "init_coef": [list(map(float, b)) for b in self.init_coef],
            "path": [[int(t), int(k), int(j), float(v)] for t, k, j, v in self.path],
            "loglik_path": [float(v) for v in self.loglik_path],
            "df_path": [int(v) for v in self.df_path],
            "bic_path": [float(v) for v in self.bic_path],
            "accepted": [bool(a) for a in self.accepted],
            "mstop": int(self.mstop),
            "coef": [list(map(float, b)) for b in self.coef],
            "selected": [[int(j) for j in s] for s in self.selected],
            "refit_coef": None if self.refit_coef is None
            else [list(map(float, b)) for b in self.refit_coef],
            "refit_converged": self.refit_converged,
            "timings": self.timings,
            "meta": self.meta,
        }


# ---------------------------------------------------------------------------
# Elemental operations
# ---------------------------------------------------------------------------

def bic(loglik, df, n):
    """Bayesian information criterion -2*loglik + df*log(n)."""
    if n < 1:
        raise InputError("n must be >= 1")
    return -2.0 * loglik + df * np.log(n)


def kappa_auto(alpha, n_cols, m, kappa_min=None, kappa_max=None):
    """Correlation threshold matching significance level ``alpha``.

    Under independence the max of ``n_cols`` absolute sample correlations on
    ``m`` observations exceeds the returned value with probability ``alpha``.
    Clamps apply only when given.
    """
    if n_cols < 1:
        raise InputError("n_cols must be >= 1")
    if m < 2:
        raise InputError("m must be >= 2")
    q = (1.0 + (1.0 - alpha) ** (1.0 / n_cols)) / 2.0
    k = _scipy_stats.norm.ppf(q) * np.sqrt(m) / (m - 1)
    if kappa_min is not None:
        k = max(k, kappa_min)
    if kappa_max is not None:
        k = min(k, kappa_max)
    return float(k)


def semi_constant_step(dl, eps, nu, t, rho, T):
    """Semi-constant step magnitude for a mean partial derivative ``dl``.

    Inside ``[nu*eps, eps]`` the step follows ``|dl|``; larger derivatives are
    clipped to ``eps``; smaller ones are lifted to ``nu*eps`` during the first
    ``rho*T`` iterations and released afterwards so the fit can converge.
    """
    a = abs(dl)
    if a < nu * eps:
        return nu * eps if t < rho * T else a
    if a <= eps:
        return a
    return eps


def best_subset_step(dls, eps, nu, t, rho, T):
    """Joint semi-constant step for a subset of distribution parameters.

    The vector of mean partial derivatives is rescaled to Euclidean length at
    most ``eps``, then each component is clipped from below like
    :func:`semi_constant_step`. Returns a map parameter -> signed step.
    """
    if not dls:
        raise InputError("best_subset_step needs a nonempty subset")
    norm = float(np.sqrt(sum(v * v for v in dls.values())))
    scale = 1.0 if norm < eps else eps / norm
    out = {}
    for k, dl in dls.items():
        a = scale * abs(dl)
        if a < nu * eps:
            mag = nu * eps if t < rho * T else a
        elif a <= eps:
            mag = a
        else:
            mag = eps
        out[k] = float(np.sign(dl) * mag)
    return out


def select_candidate(Xk, g):
    """Index with the largest |column . gradient| and its correlation.

    Columns are assumed standardized; the correlation is the Pearson
    coefficient, i.e. the inner product normalized by ``(m-1)`` times the
    sample sd of ``g`` (so the correlation-filter threshold keeps its
    hypothesis-test calibration whatever the gradient's scale). Ties break
    to the lowest column index. Returns ``None`` when there are no columns.
    """
    if Xk.shape[1] == 0:
        return None
    ip = g @ Xk
    j = int(np.argmax(np.abs(ip)))
    sg = g.std(ddof=1)
    c = 0.0 if sg <= 0 else float(ip[j] / ((g.shape[0] - 1) * sg))
    return j, c


def correlation_filter(candidates, kappa):
    """Drop candidates whose absolute correlation does not exceed ``kappa``.

    ``candidates`` maps parameter -> (column, correlation); ``kappa`` may be a
    scalar or a per-parameter map. An empty result means no update this
    iteration.
    """
    out = {}
    for k, cand in candidates.items():
        if cand is None:
            continue
        j, c = cand
        kap = kappa[k] if isinstance(kappa, (dict, list, np.ndarray)) else kappa
        if abs(c) > kap:
            out[k] = (j, c)
    return out


def gradient_vector(family, state, dataset, k, rows=None):
    """Per-observation gradient of the log-density w.r.t. eta_k at ``state``."""
    etas = state.eta(dataset, rows)
    y = dataset.y if rows is None else dataset.y[rows]
    g = family.grad_eta_from_eta(y, etas)[k]
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise NumericError(f"non-finite gradient for parameter {k} at row {bad}")
    return g


def init_state(family, dataset):
    """Intercepts at their maximum likelihood estimates, slopes at zero."""
    intercepts = family.mle_intercepts(dataset.y)
    betas = []
    for k, Xk in enumerate(dataset.X):
        b = np.zeros(1 + Xk.shape[1])
        b[0] = intercepts[k]
        betas.append(b)
    return CoefficientState(betas)


def state_at(result, t, like=None):
    """Reconstruct the coefficient state after iteration ``t`` by replaying
    the sparse path onto the initial coefficients."""
    betas = [np.asarray(b, dtype=float).copy() for b in (like or result.init_coef)]
    for it, k, j, v in result.path:
        if it > t:
            break
        betas[k][j] = v
    return CoefficientState(betas, t)


def _moving_average(values, window):
    if window <= 1:
        return np.asarray(values, dtype=float)
    v = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    t = np.arange(1, v.size + 1)
    lo = np.maximum(t - window, 0)
    return (c[t] - c[lo]) / (t - lo)


def _subsets(members, singletons_only):
    """Deterministic subset enumeration: bitmask order over ascending members."""
    members = sorted(members)
    if singletons_only:
        return [(m,) for m in members]
    out = []
    for mask in range(1, 1 << len(members)):
        out.append(tuple(members[i] for i in range(len(members)) if mask >> i & 1))
    return out


class _LazyBatches:
    """Sequentially generated random batches for long refit runs.

    Batches are produced on demand from a dedicated generator so arbitrarily
    long runs need no precomputed schedule; lookups must be non-decreasing
    apart from the one-ahead peek used for the next-batch evaluation.
    """

    def __init__(self, n, bs, seed, strata=None, replace=False):
        self.n, self.bs = n, bs
        self.rng = np.random.default_rng(seed)
        self.strata = strata
        self.replace = replace
        self.cache = {}
        self.next_t = 0

    def __getitem__(self, t):
        while self.next_t <= t:
            if self.strata is None:
                batch = (np.arange(self.n) if self.bs == self.n
                         else self.rng.choice(self.n, size=self.bs, replace=False))
            else:
                parts = [self.rng.choice(members, size=count,
                                         replace=self.replace or count > len(members))
                         for members, count in self.strata.values()]
                batch = np.concatenate(parts)
            self.cache[self.next_t] = batch
            self.cache.pop(self.next_t - 2, None)
            self.next_t += 1
        return self.cache[t]


# ---------------------------------------------------------------------------
# The boosting loop
# ---------------------------------------------------------------------------

class _Boost:
    """Mutable fitting machinery shared by selection, threshold descent and refit."""

    def __init__(self, family, dataset, config, state=None, allowed=None):
        self.family = family
        self.ds = dataset
        self.cfg = config
        self.n = dataset.n
        self.K = family.n_params
        if self.K != len(dataset.X):
            raise InputError(f"dataset has {len(dataset.X)} design matrices, "
                             f"family {family.name} needs {self.K}")
        self.bs = config.bs if config.bs is not None else self.n
        if not 1 <= self.bs <= self.n:
            raise InputError(f"batch size {self.bs} must be in [1, {self.n}]")
        self.full_batch = self.bs == self.n
        self.state = state.copy() if state is not None else init_state(family, dataset)
        self.etas = self.state.eta(dataset)
        self.allowed = allowed  # per-parameter candidate column indices, or None for all
        # recorded paths
        self.path = []
        self.loglik_path = []
        self.df_path = []
        self.bic_path = []
        self.accepted = []
        self.tilde_before = []
        self.tilde_after = []

    # -- helpers ------------------------------------------------------------
    def _ll(self, rows, etas_rows):
        y = self.ds.y[rows]
        ll = self.family.loglik_eta(y, etas_rows)
        return ll

    def _etas_rows(self, rows, delta0=None):
        out = []
        for k in range(self.K):
            e = self.etas[k][rows]
            if delta0 is not None and delta0[k] != 0.0:
                e = e + delta0[k]
            out.append(e)
        return out

    def _cols(self, k):
        if self.allowed is None:
            return None
        return self.allowed[k]

    def kappas(self, override=None):
        """Per-parameter correlation thresholds under the active config."""
        cfg = self.cfg
        if override is not None:
            return [float(override)] * self.K
        if not cfg.cf_enabled:
            return [0.0] * self.K
        if isinstance(cfg.kappa, str):  # "auto"
            out = []
            for k in range(self.K):
                cols = self._cols(k)
                jk = self.ds.X[k].shape[1] if cols is None else len(cols)
                out.append(kappa_auto(cfg.alpha, max(jk, 1), self.bs,
                                      cfg.kappa_min, cfg.kappa_max))
            return out
        return [float(cfg.kappa)] * self.K

    def record(self, t, ll_tilde, new_entries, accepted, before):
        if not np.isfinite(ll_tilde):
            raise NumericError(f"non-finite log-likelihood at iteration {t}")
        scale = self.n / self.bs
        df = self.state.df()
        self.path.extend(new_entries)
        self.loglik_path.append(ll_tilde * scale)
        self.df_path.append(df)
        self.bic_path.append(bic(ll_tilde * scale, df, self.n))
        self.accepted.append(accepted)
        self.tilde_before.append(before)
        self.tilde_after.append(ll_tilde)

    def record_init(self, rows):
        ll = self._ll(rows, self._etas_rows(rows))
        entries = [(0, k, 0, float(self.state.betas[k][0])) for k in range(self.K)]
        self.record(0, ll, entries, False, ll)

    # -- one boosting iteration ----------------------------------------------
    def iterate(self, t, rows_i, rows_t, kappas, t_clip, T_clip, singletons_only):
        """Run iteration ``t``; returns (accepted, best mean |derivative|).

        ``t_clip``/``T_clip`` position the iteration on the semi-constant
        clip schedule (they differ from ``t`` inside threshold descent and
        refit segments).
        """
        cfg = self.cfg
        y_i = self.ds.y[rows_i]

        eta_i = self._etas_rows(rows_i)
        eta_t = self._etas_rows(rows_t)
        ll_old = self._ll(rows_t, eta_t)

        # intercept proposals: clipped gradient steps from the previous state
        g_prev = self.family.grad_eta_from_eta(y_i, eta_i)
        delta0 = np.empty(self.K)
        for k in range(self.K):
            dl0 = float(np.mean(g_prev[k]))
            delta0[k] = np.sign(dl0) * min(abs(dl0), cfg.eps)

        # candidate search on the current batch, gradients at updated intercepts
        eta_i2 = [eta_i[k] + delta0[k] for k in range(self.K)]
        grads = self.family.grad_eta_from_eta(y_i, eta_i2)
        m = rows_i.shape[0]
        cand = {}
        dls = {}
        best_abs_dl = 0.0
        for k in range(self.K):
            Xk = self.ds.X[k]
            cols = self._cols(k)
            Xi = Xk[rows_i] if not self.full_batch else Xk
            if cols is not None:
                Xi = Xi[:, cols]
            picked = select_candidate(Xi, grads[k])
            if picked is None:
                cand[k] = None
                continue
            j_local, c = picked
            j = int(cols[j_local]) if cols is not None else j_local
            cand[k] = (j, c)
            dl = float(Xi[:, j_local] @ grads[k]) / m
            dls[k] = dl
            best_abs_dl = max(best_abs_dl, abs(dl))

        survivors = correlation_filter(cand, dict(enumerate(kappas)))

        best_ll = ll_old
        best_subset = None
        best_steps = None
        if survivors:
            # cache next-batch columns for the surviving candidates
            col_t = {}
            for k, (j, _) in survivors.items():
                Xk = self.ds.X[k]
                col_t[k] = Xk[rows_t, j] if not self.full_batch else Xk[:, j]
            base_t = [eta_t[k] + delta0[k] for k in range(self.K)]
            for S in _subsets(survivors, singletons_only):
                steps = best_subset_step({s: dls[s] for s in S},
                                         cfg.eps, cfg.nu, t_clip, cfg.rho, T_clip)
                etas_new = list(base_t)
                for s in S:
                    etas_new[s] = base_t[s] + steps[s] * col_t[s]
                ll_new = self._ll(rows_t, etas_new)
                if ll_new > best_ll:
                    best_ll = ll_new
                    best_subset = S
                    best_steps = steps

        if best_subset is None:
            # nothing improved the next-batch log-likelihood: keep previous
            # coefficients (the intercept proposals are discarded with it)
            self.record(t, ll_old, [], False, ll_old)
            return False, best_abs_dl

        entries = []
        for k in range(self.K):
            self.state.betas[k][0] += delta0[k]
            self.etas[k] += delta0[k]
            entries.append((t, k, 0, float(self.state.betas[k][0])))
        for s in best_subset:
            j = survivors[s][0]
            self.state.betas[s][1 + j] += best_steps[s]
            self.etas[s] += best_steps[s] * self.ds.X[s][:, j]
            entries.append((t, s, 1 + j, float(self.state.betas[s][1 + j])))
        self.state.t = t
        self.record(t, best_ll, entries, True, ll_old)
        return True, best_abs_dl


def _resolve_schedule(dataset, config, batches, length):
    if batches is not None:
        if len(batches) < length:
            raise InputError(f"batch schedule has {len(batches)} batches, need {length}")
        return batches
    bs = config.bs if config.bs is not None else dataset.n
    if bs == dataset.n:
        full = np.arange(dataset.n)
        return [full] * length
    return make_batches(dataset.n, bs, length, config.seed)


def sbdr_fit(family, dataset, config, batches=None, method_tag=None):
    """Stagewise boosting selection stage.

    Runs ``T - 1`` update iterations from the intercept-MLE initialization,
    recording the sparse coefficient path and the BIC path, and returns the
    BIC-optimal iterate (moving-average smoothed in batchwise mode). An
    iteration updates at most one coefficient per distribution parameter and,
    after correlation filtering, only the parameter subset that improves the
    next-batch log-likelihood most; 50 consecutive improvement-free
    iterations end the loop early.
    """
    t0 = time.perf_counter()
    run = _Boost(family, dataset, config)
    schedule = _resolve_schedule(dataset, config, batches, config.T)
    T = config.T
    singles = config.update_mode == "noncyclical"
    kappas = run.kappas()
    run.record_init(schedule[1 if T > 1 else 0])
    stale = 0
    for t in range(1, T):
        rows_i = schedule[t]
        rows_t = schedule[t + 1] if t + 1 < T else schedule[0]
        accepted, _ = run.iterate(t, rows_i, rows_t, kappas, t, T, singles)
        stale = 0 if accepted else stale + 1
        if stale >= NO_UPDATE_PATIENCE:
            break
    return _finalize(run, config, method_tag or _default_tag(config), t0, kappas)


def _default_tag(config):
    tag = "noncyclical" if config.update_mode == "noncyclical" else "best-subset"
    if config.cf_enabled:
        tag += "+cf"
    return tag


def _finalize(run, config, method_tag, t0, kappas, meta=None):
    bic_arr = np.asarray(run.bic_path)
    if run.full_batch:
        mstop = int(np.argmin(bic_arr))
    else:
        mstop = int(np.argmin(_moving_average(bic_arr, config.bic_ma_window)))
    init = [b.copy() for b in state_at_init(run)]
    res = FitResult(
        family=run.family.name,
        method=method_tag,
        n=run.n,
        config=config.to_dict(),
        column_names=run.ds.columns,
        init_coef=init,
        path=run.path,
        loglik_path=np.asarray(run.loglik_path),
        df_path=np.asarray(run.df_path, dtype=int),
        bic_path=bic_arr,
        accepted=np.asarray(run.accepted, dtype=bool),
        mstop=mstop,
        coef=[b.copy() for b in _replay(init, run.path, mstop)],
        selected=[],
        timings={"fit_seconds": time.perf_counter() - t0},
        meta={"kappas": [float(k) for k in kappas], **(meta or {})},
        tilde_before=np.asarray(run.tilde_before),
        tilde_after=np.asarray(run.tilde_after),
    )
    res.selected = [np.flatnonzero(b[1:]).tolist() for b in res.coef]
    return res


def state_at_init(run):
    init = []
    for k, b in enumerate(run.state.betas):
        z = np.zeros_like(b)
        init.append(z)
    for t, k, j, v in run.path:
        if t > 0:
            break
        init[k][j] = v
    return init


def _replay(init, path, t):
    betas = [b.copy() for b in init]
    for it, k, j, v in path:
        if it > t:
            break
        betas[k][j] = v
    return betas


@dataclass
class RefitResult:
    state: CoefficientState
    converged: bool
    iterations: int
    loglik: float


def refit(family, dataset, selected, config, start=None, batches_seed=None):
    """Boost the selected columns without correlation filtering until
    convergence (or an iteration cap of ``50 * T``).

    Convergence: either the best available mean |derivative| over the
    selected columns stays below 1e-6 for 25 consecutive iterations, or the
    full-data log-likelihood changes by less than 1e-9 (relative) over 100
    iterations. A stall before the lower clip is released simply releases the
    clip early. An empty selection returns the intercept-only MLE state.
    """
    selected = [np.asarray(s, dtype=int) for s in selected]
    if all(s.size == 0 for s in selected):
        state = init_state(family, dataset)
        ll = family.loglik_eta(dataset.y, state.eta(dataset))
        return RefitResult(state, True, 0, ll)

    run = _Boost(family, dataset, config, state=start, allowed=selected)
    cap = REFIT_CAP_FACTOR * config.T
    release_at = config.rho * config.T  # lower clip released on the refit's own budget
    seed = batches_seed if batches_seed is not None else [config.seed, 1]
    if run.full_batch:
        full = np.arange(dataset.n)
        schedule = _ConstantSchedule(full)
    else:
        schedule = _LazyBatches(dataset.n, run.bs, seed)
    kappas = [0.0] * run.K
    singles = config.update_mode == "noncyclical"

    ll_hist = []
    grad_streak = 0
    released = False
    converged = False
    t = 0
    for t in range(1, cap + 1):
        rows_i = schedule[t]
        rows_t = schedule[t + 1]
        clip_below = not released and t < release_at
        # (0, 1) keeps the lower clip active, (1, 1) releases it
        t_clip, T_clip = (0, 1) if clip_below else (1, 1)
        accepted, best_dl = run.iterate(t, rows_i, rows_t, kappas,
                                        t_clip, T_clip, singles)
        grad_streak = grad_streak + 1 if best_dl < REFIT_GRAD_TOL else 0
        if grad_streak >= REFIT_GRAD_STREAK:
            converged = True
            break
        if run.full_batch:
            ll_full = run.tilde_after[-1]
        else:
            ll_full = family.loglik_eta(dataset.y, run.etas)
        ll_hist.append(ll_full)
        if len(ll_hist) > REFIT_STALL_WINDOW:
            prev = ll_hist[-1 - REFIT_STALL_WINDOW]
            if abs(ll_full - prev) < REFIT_STALL_TOL * (abs(ll_full) + 1.0):
                if released or t >= release_at:
                    converged = True
                    break
                released = True
                ll_hist.clear()
    ll = family.loglik_eta(dataset.y, run.state.eta(dataset))
    return RefitResult(run.state.copy(), converged, t, ll)


class _ConstantSchedule:
    def __init__(self, rows):
        self.rows = rows

    def __getitem__(self, t):
        return self.rows


def fit_and_refit(family, dataset, config, batches=None, method_tag=None):
    """Two-stage fit: stagewise selection, then refit of the selected columns."""
    res = sbdr_fit(family, dataset, config, batches=batches, method_tag=method_tag)
    t0 = time.perf_counter()
    start = CoefficientState([np.asarray(b, dtype=float).copy() for b in res.coef])
    rr = refit(family, dataset, res.selected, config, start=start)
    res.refit_coef = [b.copy() for b in rr.state.betas]
    res.refit_converged = rr.converged
    res.timings["refit_seconds"] = time.perf_counter() - t0
    res.meta["refit_iterations"] = rr.iterations
    res.meta["refit_loglik"] = rr.loglik
    return res


def threshold_descent(family, dataset, config, kappa_start=0.19, kappa_step=0.02,
                      iters_per_level=200, batches=None):
    """Grid search over a descending correlation threshold.

    Boosts ``iters_per_level`` iterations at each level ``kappa_start,
    kappa_start - kappa_step, ..., 0``, continuing from the previous level's
    coefficients and snapshotting the selected variable set at each level.
    Every distinct snapshot is refitted to convergence and the one minimizing
    the full-data BIC wins.
    """
    if kappa_start <= 0:
        raise InputError("kappa_start must be > 0")
    if kappa_step <= 0:
        raise InputError("kappa_step must be > 0")
    t_start = time.perf_counter()
    levels = [float(k) for k in np.arange(kappa_start, 0.0, -kappa_step)]
    levels.append(0.0)
    total = len(levels) * iters_per_level
    run = _Boost(family, dataset, config)
    schedule = _resolve_schedule(dataset, config, batches, total + 1)
    singles = config.update_mode == "noncyclical"
    run.record_init(schedule[1])

    snapshots = []
    t = 0
    for level, kap in enumerate(levels):
        kappas = [kap] * run.K
        stale = 0
        for _ in range(iters_per_level):
            t += 1
            rows_i = schedule[t]
            rows_t = schedule[t + 1] if t + 1 <= total else schedule[0]
            accepted, _ = run.iterate(t, rows_i, rows_t, kappas, t, total + 1, singles)
            stale = 0 if accepted else stale + 1
            if stale >= NO_UPDATE_PATIENCE:
                break
        snapshots.append({
            "kappa": kap,
            "iteration": t,
            "selected": [np.flatnonzero(b[1:]).tolist() for b in run.state.betas],
            "coef": [b.copy() for b in run.state.betas],
        })

    # refit each distinct selected set, compare by full-data BIC
    best = None
    seen = set()
    for snap in snapshots:
        key = tuple(tuple(s) for s in snap["selected"])
        if key in seen:
            continue
        seen.add(key)
        rr = refit(family, dataset, snap["selected"], config,
                   start=CoefficientState([b.copy() for b in snap["coef"]]))
        df = sum(len(s) for s in snap["selected"])
        score = bic(rr.loglik, df, dataset.n)
        snap["bic"] = score
        snap["refit"] = rr
        if best is None or score < best["bic"]:
            best = snap

    res = _finalize(run, config, "thresdesc", t_start, [best["kappa"]],
                    meta={"levels": [
                        {"kappa": s["kappa"], "iteration": s["iteration"],
                         "selected_sizes": [len(x) for x in s["selected"]],
                         "bic": s.get("bic")}
                        for s in snapshots],
                        "winning_kappa": best["kappa"]})
    res.mstop = best["iteration"]
    res.coef = [b.copy() for b in best["coef"]]
    res.selected = best["selected"]
    res.refit_coef = [b.copy() for b in best["refit"].state.betas]
    res.refit_converged = best["refit"].converged
    res.meta["refit_loglik"] = best["refit"].loglik
    return res
