"""Response distribution families for distributional regression.

Each family models all of its parameters (location, scale, shape) through
link functions, exposes per-observation log-densities and analytic gradients
with respect to the *linked* predictors, and provides sampling plus proper
scoring (CRPS / discrete RPS) for validation.

Parameterizations:

* ``NO(mu, sigma)``    -- normal, identity/log links.
* ``GA(mu, sigma)``    -- gamma with mean ``mu`` and variance ``mu^2 sigma^2``
  (shape ``1/sigma^2``), log/log links.
* ``NBI(mu, sigma)``   -- negative binomial type I, mean ``mu`` and variance
  ``mu + sigma mu^2``, log/log links.
* ``ZANBI(mu, sigma, nu)`` -- zero-adjusted NBI: point mass ``nu`` at zero,
  zero-truncated NBI scaled by ``1 - nu`` on positive integers,
  log/log/logit links.
"""

from __future__ import annotations

import numpy as np
from scipy import special, stats

from .exceptions import InputError, NumericError

_LOG_2PI = np.log(2.0 * np.pi)

# Below this value of sigma*mu the NBI log-pmf switches to its Poisson limit
# to avoid catastrophic cancellation in the log-gamma differences.
_POISSON_SWITCH = 1e-8

_EXPIT_CLIP = 1e-15


class Link:
    """Monotone map between a parameter's domain and the real line."""

    def __init__(self, name, fun, inv):
        self.name = name
        self.fun = fun
        self.inv = inv

    def __repr__(self):
        return f"Link({self.name!r})"


def _logit(theta):
    theta = np.asarray(theta, dtype=float)
    return np.log(theta) - np.log1p(-theta)


def _expit(eta):
    # clip so downstream log(nu), log(1-nu) stay finite for any real eta
    return np.clip(special.expit(eta), _EXPIT_CLIP, 1.0 - _EXPIT_CLIP)


IDENTITY = Link("identity", lambda t: np.asarray(t, dtype=float), lambda e: np.asarray(e, dtype=float))
LOG = Link("log", np.log, np.exp)
LOGIT = Link("logit", _logit, _expit)


def _as_arrays(y, theta, k):
    y = np.asarray(y, dtype=float)
    if len(theta) != k:
        raise InputError(f"expected {k} parameters, got {len(theta)}")
    return (y,) + tuple(np.asarray(p, dtype=float) for p in theta)


def _require(cond_array, message):
    if not np.all(cond_array):
        raise InputError(message)


class Family:
    """Base class: K-parameter response distribution with linked predictors.

    Subclasses implement ``_logpdf``, ``_grad_eta``, ``_sample``, ``cdf`` and
    ``mle_intercepts`` in the natural parameter space; domain validation is
    shared. Instances are immutable and safe for concurrent use; all sampling
    takes an explicit ``numpy.random.Generator``.
    """

    name: str = ""
    param_names: tuple = ()
    links: tuple = ()
    discrete: bool = False

    def __init__(self):
        if len(self.links) != len(self.param_names) or not self.param_names:
            raise InputError(f"{self.name}: links must match parameter count")

    @property
    def n_params(self):
        return len(self.param_names)

    # -- domain / support ---------------------------------------------------
    def check_theta(self, theta):
        """Validate natural parameters, naming the offender on violation."""
        raise NotImplementedError

    def check_support(self, y):
        raise NotImplementedError

    def theta_from_eta(self, etas):
        """Map linked predictors to natural parameters."""
        return [link.inv(e) for link, e in zip(self.links, etas)]

    # -- densities and gradients --------------------------------------------
    def logpdf(self, y, theta):
        """Per-observation log-density log d(y; theta_1..theta_K)."""
        arrs = _as_arrays(y, theta, self.n_params)
        self.check_support(arrs[0])
        self.check_theta(arrs[1:])
        return self._logpdf(arrs[0], *arrs[1:])

    def grad_eta(self, y, theta):
        """Per-observation partials of the log-density w.r.t. eta_1..eta_K."""
        arrs = _as_arrays(y, theta, self.n_params)
        self.check_support(arrs[0])
        self.check_theta(arrs[1:])
        return self._grad_eta(arrs[0], *arrs[1:])

    def loglik_eta(self, y, etas):
        """Total log-likelihood of a response vector given linked predictors."""
        return float(np.sum(self._logpdf(np.asarray(y, dtype=float),
                                         *self.theta_from_eta(etas))))

    def grad_eta_from_eta(self, y, etas):
        """Gradients w.r.t. eta, skipping domain checks (etas are always valid)."""
        return self._grad_eta(np.asarray(y, dtype=float), *self.theta_from_eta(etas))

    # -- sampling and scoring -----------------------------------------------
    def sample(self, theta, rng, size=None):
        theta = tuple(np.asarray(p, dtype=float) for p in theta)
        self.check_theta(theta)
        if size is None:
            size = np.broadcast(*theta).shape if len(theta) > 1 else np.shape(theta[0])
            size = size or None
        return self._sample(theta, rng, size)

    def cdf(self, q, theta):
        raise NotImplementedError

    def crps(self, theta, y, rng=None, m=1000):
        """Per-observation (continuous) ranked probability score, >= 0."""
        arrs = _as_arrays(y, theta, self.n_params)
        self.check_theta(arrs[1:])
        return self._crps(arrs[0], arrs[1:], rng=rng, m=m)

    def mle_intercepts(self, y):
        """Intercept-only maximum likelihood estimates in link (eta) space."""
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Newton solver for intercept-only MLEs
# ---------------------------------------------------------------------------

def _newton_eta(mean_ll, mean_score, eta0, max_iter=100, tol=1e-8):
    """Maximize a mean log-likelihood over eta by damped Newton iterations.

    The Hessian is a central finite difference of the analytic score; steps
    are capped and backtracked so the objective never decreases.
    """
    eta = np.atleast_1d(np.asarray(eta0, dtype=float)).copy()
    d = eta.size
    h = 1e-6
    for _ in range(max_iter):
        g = np.atleast_1d(mean_score(eta))
        if np.max(np.abs(g)) < tol:
            return eta
        H = np.empty((d, d))
        for j in range(d):
            ep = eta.copy()
            em = eta.copy()
            ep[j] += h
            em[j] -= h
            H[:, j] = (np.atleast_1d(mean_score(ep)) - np.atleast_1d(mean_score(em))) / (2 * h)
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            step = g.copy()
        if float(g @ step) <= 0.0:  # not an ascent direction
            step = g.copy()
        cap = np.max(np.abs(step))
        if cap > 2.0:
            step *= 2.0 / cap
        ll0 = mean_ll(eta)
        for _ in range(30):
            cand = eta + step
            if mean_ll(cand) >= ll0:
                break
            step *= 0.5
        eta = eta + step
    g = np.atleast_1d(mean_score(eta))
    if np.max(np.abs(g)) < tol:
        return eta
    raise NumericError(
        f"intercept MLE did not converge after {max_iter} iterations "
        f"(max |score| = {np.max(np.abs(g)):.3g})",
        last_iterate=eta,
    )


# ---------------------------------------------------------------------------
# Normal
# ---------------------------------------------------------------------------

class NormalFamily(Family):
    """NO(mu, sigma): identity link for mu, log link for sigma."""

    name = "NO"
    param_names = ("mu", "sigma")
    links = (IDENTITY, LOG)

    def check_theta(self, theta):
        mu, sigma = theta
        _require(np.isfinite(mu), "mu must be finite")
        _require(np.isfinite(sigma) & (sigma > 0), "sigma must be positive")

    def check_support(self, y):
        _require(np.isfinite(y), "response must be finite")

    def _logpdf(self, y, mu, sigma):
        z = (y - mu) / sigma
        return -0.5 * _LOG_2PI - np.log(sigma) - 0.5 * z * z

    def _grad_eta(self, y, mu, sigma):
        r = (y - mu) / sigma
        return [r / sigma, r * r - 1.0]

    def _sample(self, theta, rng, size):
        mu, sigma = theta
        return rng.normal(mu, sigma, size=size)

    def cdf(self, q, theta):
        mu, sigma = theta
        return stats.norm.cdf(q, loc=mu, scale=sigma)

    def _crps(self, y, theta, rng=None, m=1000):
        mu, sigma = theta
        z = (y - mu) / sigma
        return sigma * (z * (2.0 * stats.norm.cdf(z) - 1.0)
                        + 2.0 * stats.norm.pdf(z) - 1.0 / np.sqrt(np.pi))

    def mle_intercepts(self, y):
        y = np.asarray(y, dtype=float)
        self.check_support(y)
        if y.size == 0:
            raise InputError("response is empty")
        sd = y.std()  # MLE (1/n) divisor
        if sd <= 0:
            raise InputError("response has zero variance; sigma MLE undefined")
        return np.array([y.mean(), np.log(sd)])


# ---------------------------------------------------------------------------
# Gamma
# ---------------------------------------------------------------------------

class GammaFamily(Family):
    """GA(mu, sigma): mean mu, variance mu^2 sigma^2 (shape 1/sigma^2)."""

    name = "GA"
    param_names = ("mu", "sigma")
    links = (LOG, LOG)

    def check_theta(self, theta):
        mu, sigma = theta
        _require(np.isfinite(mu) & (mu > 0), "mu must be positive")
        _require(np.isfinite(sigma) & (sigma > 0), "sigma must be positive")

    def check_support(self, y):
        _require(np.isfinite(y) & (y > 0), "response must be positive for GA")

    def _logpdf(self, y, mu, sigma):
        a = 1.0 / (sigma * sigma)
        scale = mu * sigma * sigma
        return (a - 1.0) * np.log(y) - y / scale - special.gammaln(a) - a * np.log(scale)

    def _grad_eta(self, y, mu, sigma):
        s2 = sigma * sigma
        # already in eta-space (log links): dmu = mu * dl/dmu, dsig = sigma * dl/dsigma
        dmu_eta = (y - mu) / (mu * s2)
        dsig_eta = (2.0 / s2) * (y / mu - np.log(y) + np.log(mu) + np.log(s2)
                                 + special.digamma(1.0 / s2) - 1.0)
        return [dmu_eta, dsig_eta]

    def _sample(self, theta, rng, size):
        mu, sigma = theta
        s2 = sigma * sigma
        return rng.gamma(shape=1.0 / s2, scale=mu * s2, size=size)

    def cdf(self, q, theta):
        mu, sigma = theta
        s2 = sigma * sigma
        return stats.gamma.cdf(q, a=1.0 / s2, scale=mu * s2)

    def _crps(self, y, theta, rng=None, m=1000):
        if rng is None:
            rng = np.random.default_rng(0)
        mu, sigma = theta
        mu, sigma, y = np.broadcast_arrays(np.atleast_1d(mu), sigma, y)
        s2 = sigma * sigma
        draws = rng.gamma(shape=(1.0 / s2)[..., None],
                          scale=(mu * s2)[..., None],
                          size=mu.shape + (m,))
        term1 = np.mean(np.abs(draws - y[..., None]), axis=-1)
        term2 = 0.5 * np.mean(np.abs(draws[..., 0::2] - draws[..., 1::2]), axis=-1)
        return term1 - term2

    def mle_intercepts(self, y):
        y = np.asarray(y, dtype=float)
        self.check_support(y)
        mean = y.mean()
        # mu MLE separates: score in mu vanishes at the sample mean
        s2_start = np.clip(y.var(ddof=0) / mean**2, 1e-4, 1e4)
        eta_mu = np.log(mean)

        def mean_ll(eta):
            return float(np.mean(self._logpdf(y, mean, np.exp(eta[0]))))

        def mean_score(eta):
            return np.array([np.mean(self._grad_eta(y, mean, np.exp(eta[0]))[1])])

        eta_sig = _newton_eta(mean_ll, mean_score, [0.5 * np.log(s2_start)])
        return np.array([eta_mu, eta_sig[0]])


# ---------------------------------------------------------------------------
# Negative binomial type I
# ---------------------------------------------------------------------------

def _nbi_logpmf(y, mu, sigma):
    sm = sigma * mu
    inv = 1.0 / sigma
    out = (special.gammaln(y + inv) - special.gammaln(inv) - special.gammaln(y + 1.0)
           + y * np.log(sm) - (y + inv) * np.log1p(sm))
    poisson = y * np.log(mu) - mu - special.gammaln(y + 1.0)
    return np.where(sm < _POISSON_SWITCH, poisson, out)


def _nbi_grad_eta(y, mu, sigma):
    sm = sigma * mu
    inv = 1.0 / sigma
    dmu = (y - mu) / (1.0 + sm)
    dsig = -inv * (special.digamma(y + inv) - special.digamma(inv)
                   - np.log1p(sm) - (y - mu) * sigma / (1.0 + sm))
    # Poisson-limit expansions keep the sigma gradient stable as sigma*mu -> 0
    dsig_lim = sigma * ((y - mu) ** 2 - y) / 2.0
    small = sm < _POISSON_SWITCH
    return [np.where(small, y - mu, dmu), np.where(small, dsig_lim, dsig)]


def _nbi_logp0(mu, sigma):
    """log P(Y=0) for NBI: -(1/sigma) log(1 + sigma mu)."""
    return -np.log1p(sigma * mu) / sigma


class NBIFamily(Family):
    """NBI(mu, sigma): mean mu, variance mu + sigma mu^2, log/log links."""

    name = "NBI"
    param_names = ("mu", "sigma")
    links = (LOG, LOG)
    discrete = True

    def check_theta(self, theta):
        mu, sigma = theta
        _require(np.isfinite(mu) & (mu > 0), "mu must be positive")
        _require(np.isfinite(sigma) & (sigma > 0), "sigma must be positive")

    def check_support(self, y):
        ok = np.isfinite(y) & (y >= 0) & (np.floor(y) == y)
        _require(ok, "response must be a nonnegative integer for NBI")

    def _logpdf(self, y, mu, sigma):
        return _nbi_logpmf(y, mu, sigma)

    def _grad_eta(self, y, mu, sigma):
        return _nbi_grad_eta(y, mu, sigma)

    def _sample(self, theta, rng, size):
        mu, sigma = theta
        lam = rng.gamma(shape=1.0 / sigma, scale=sigma * mu, size=size)
        return np.asarray(rng.poisson(lam), dtype=float)

    def cdf(self, q, theta):
        mu, sigma = theta
        return stats.nbinom.cdf(q, 1.0 / sigma, 1.0 / (1.0 + sigma * mu))

    def _crps(self, y, theta, rng=None, m=1000):
        return _discrete_rps(self, y, theta)

    def mle_intercepts(self, y):
        y = np.asarray(y, dtype=float)
        self.check_support(y)
        mean = y.mean()
        if mean <= 0:
            raise InputError("response is all zero; mu MLE undefined for NBI")
        var = y.var(ddof=0)
        sig_start = np.clip((var - mean) / mean**2, 1e-3, 1e3)

        def mean_ll(eta):
            return float(np.mean(_nbi_logpmf(y, mean, np.exp(eta[0]))))

        def mean_score(eta):
            return np.array([np.mean(_nbi_grad_eta(y, mean, np.exp(eta[0]))[1])])

        eta_sig = _newton_eta(mean_ll, mean_score, [np.log(sig_start)])
        return np.array([np.log(mean), eta_sig[0]])


# ---------------------------------------------------------------------------
# Zero-adjusted negative binomial type I
# ---------------------------------------------------------------------------

class ZANBIFamily(Family):
    """ZANBI(mu, sigma, nu): P(Y=0) = nu, truncated NBI scaled by 1-nu above."""

    name = "ZANBI"
    param_names = ("mu", "sigma", "nu")
    links = (LOG, LOG, LOGIT)
    discrete = True

    def check_theta(self, theta):
        mu, sigma, nu = theta
        _require(np.isfinite(mu) & (mu > 0), "mu must be positive")
        _require(np.isfinite(sigma) & (sigma > 0), "sigma must be positive")
        _require(np.isfinite(nu) & (nu > 0) & (nu < 1), "nu must be in (0, 1)")

    def check_support(self, y):
        ok = np.isfinite(y) & (y >= 0) & (np.floor(y) == y)
        _require(ok, "response must be a nonnegative integer for ZANBI")

    def _logpdf(self, y, mu, sigma, nu):
        y, mu, sigma, nu = np.broadcast_arrays(y, mu, sigma, nu)
        logp0 = _nbi_logp0(mu, sigma)
        # log(1 - p0) computed from logp0 without forming p0 - 1
        log1m_p0 = np.log(-np.expm1(logp0))
        pos = np.log1p(-nu) + _nbi_logpmf(np.maximum(y, 1.0), mu, sigma) - log1m_p0
        return np.where(y == 0, np.log(nu), pos)

    def _grad_eta(self, y, mu, sigma, nu):
        y, mu, sigma, nu = np.broadcast_arrays(y, mu, sigma, nu)
        zero = y == 0
        ypos = np.maximum(y, 1.0)
        sm = sigma * mu
        logp0 = _nbi_logp0(mu, sigma)
        p0 = np.exp(logp0)
        one_m_p0 = -np.expm1(logp0)
        nbi_dmu, nbi_dsig = _nbi_grad_eta(ypos, mu, sigma)
        # d p0 / d eta_mu and / d eta_sigma
        dp0_dmu = -mu * np.exp(-(1.0 / sigma + 1.0) * np.log1p(sm))
        dp0_dsig = p0 * (np.log1p(sm) / sigma - mu / (1.0 + sm))
        gmu = np.where(zero, 0.0, nbi_dmu + dp0_dmu / one_m_p0)
        gsig = np.where(zero, 0.0, nbi_dsig + dp0_dsig / one_m_p0)
        gnu = np.where(zero, 1.0 - nu, -nu)
        return [gmu, gsig, gnu]

    def _sample(self, theta, rng, size):
        mu, sigma, nu = theta
        if size is None:
            size = np.broadcast(mu, sigma, nu).shape or (1,)
        mu = np.broadcast_to(np.asarray(mu, dtype=float), size)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), size)
        nu = np.broadcast_to(np.asarray(nu, dtype=float), size)
        out = np.zeros(size, dtype=float)
        positive = rng.random(size) >= nu
        if np.any(positive):
            out[positive] = _sample_truncated_nbi(mu[positive], sigma[positive], rng)
        return out

    def cdf(self, q, theta):
        mu, sigma, nu = theta
        q = np.asarray(q, dtype=float)
        p0 = np.exp(_nbi_logp0(mu, sigma))
        fnbi = stats.nbinom.cdf(q, 1.0 / sigma, 1.0 / (1.0 + sigma * mu))
        full = nu + (1.0 - nu) * (fnbi - p0) / (1.0 - p0)
        return np.where(q < 0, 0.0, full)

    def _crps(self, y, theta, rng=None, m=1000):
        return _discrete_rps(self, y, theta)

    def mle_intercepts(self, y):
        y = np.asarray(y, dtype=float)
        self.check_support(y)
        frac0 = np.mean(y == 0)
        if not 0.0 < frac0 < 1.0:
            raise InputError("response needs both zero and positive counts for ZANBI")
        yp = y[y > 0]
        mean = yp.mean()
        var = yp.var(ddof=0)
        sig_start = np.clip((var - mean) / mean**2, 1e-3, 1e3)

        def mean_ll(eta):
            mu, sigma = np.exp(eta)
            return float(np.mean(_nbi_logpmf(yp, mu, sigma)
                                 - np.log(-np.expm1(_nbi_logp0(mu, sigma)))))

        def mean_score(eta):
            mu, sigma = np.exp(eta)
            g = self._grad_eta(yp, mu, sigma, 0.5)
            return np.array([np.mean(g[0]), np.mean(g[1])])

        eta = _newton_eta(mean_ll, mean_score, [np.log(mean), np.log(sig_start)])
        return np.array([eta[0], eta[1], _logit(frac0)])


def _sample_truncated_nbi(mu, sigma, rng, max_rounds=200):
    """Draw from NBI conditioned on Y > 0.

    Rejection from the untruncated NBI; rows where P(Y=0) > 0.99 fall back to
    inversion of the truncated cdf so the expected cost stays bounded.
    """
    mu = np.atleast_1d(mu)
    sigma = np.atleast_1d(sigma)
    n = mu.shape[0]
    out = np.zeros(n)
    p0 = np.exp(_nbi_logp0(mu, sigma))
    hard = p0 > 0.99
    easy = ~hard
    pending = np.flatnonzero(easy)
    for _ in range(max_rounds):
        if pending.size == 0:
            break
        lam = rng.gamma(shape=1.0 / sigma[pending], scale=sigma[pending] * mu[pending])
        draw = rng.poisson(lam).astype(float)
        out[pending] = draw
        pending = pending[draw == 0]
    if pending.size:  # stubborn rows: treat like the hard case
        hard = hard.copy()
        hard[pending] = True
    if np.any(hard):
        idx = np.flatnonzero(hard)
        u = p0[idx] + rng.random(idx.size) * (1.0 - p0[idx])
        out[idx] = stats.nbinom.ppf(u, 1.0 / sigma[idx], 1.0 / (1.0 + sigma[idx] * mu[idx]))
    return out


def _discrete_rps(family, y, theta, tail=1e-6, chunk=512):
    """Discrete ranked probability score sum_k (F(k) - 1{y<=k})^2.

    The sum is truncated at the first k where F(k) > 1 - ``tail``; terms
    beyond contribute less than tail^2 each.
    """
    theta = [np.atleast_1d(p) for p in np.broadcast_arrays(*theta)]
    y = np.broadcast_to(np.asarray(y, dtype=float), theta[0].shape)
    n = theta[0].shape[0] if theta[0].ndim else 1
    out = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        th = [p[lo:hi] for p in theta]
        yc = y[lo:hi]
        nmax = int(max(yc.max(), 8))
        while True:
            ks = np.arange(nmax + 1.0)
            F = family.cdf(ks[None, :], [p[:, None] for p in th])
            if F[:, -1].min() > 1.0 - tail:
                break
            nmax *= 2
            if nmax > 10_000_000:
                raise NumericError("discrete RPS truncation bound exceeded")
        H = yc[:, None] <= ks[None, :]
        out[lo:hi] = np.sum((F - H) ** 2, axis=1)
    return out


FAMILIES = {
    "NO": NormalFamily,
    "GA": GammaFamily,
    "NBI": NBIFamily,
    "ZANBI": ZANBIFamily,
}


def get_family(name):
    """Look up a family by its string id ("NO", "GA", "NBI", "ZANBI")."""
    try:
        return FAMILIES[name]()
    except KeyError:
        raise InputError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}") from None
