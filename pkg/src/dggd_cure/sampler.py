"""No-U-Turn Hamiltonian Monte Carlo with windowed warm-up adaptation.

The transition follows the multinomial variant of NUTS: the trajectory is
doubled in a random direction until the generalized no-U-turn criterion
fails (checked on every subtree, including across subtree boundaries) or the
maximum depth is reached, and the next state is drawn from the trajectory with
weights ``exp(-H)``.  New subtrees are accepted with a bias toward the later
subtree; states inside a subtree are chosen uniformly by weight.

Warm-up tunes the step size by dual averaging toward ``target_accept`` and a
diagonal inverse mass matrix from the regularized marginal variances of the
draws in doubling slow windows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SamplerConfig",
    "SamplerError",
    "PosteriorDraws",
    "leapfrog",
    "NUTS",
    "DualAveraging",
    "WarmupSchedule",
    "sample",
    "split_rhat",
    "effective_sample_size",
]

logger = logging.getLogger(__name__)


class SamplerError(RuntimeError):
    """Raised when the sampler cannot produce usable draws."""


@dataclass(frozen=True)
class SamplerConfig:
    """Run configuration of :func:`sample`.

    ``max_tree_depth`` counts trajectory doublings; a value of 0 still takes a
    single leapfrog step (plain HMC with one step).
    """

    chains: int = 4
    warmup_iters: int = 1000
    sampling_iters: int = 1000
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    init_radius: float = 2.0
    max_delta_energy: float = 1000.0

    def __post_init__(self):
        if self.chains < 1 or self.sampling_iters < 1 or self.warmup_iters < 0:
            raise ValueError("chains and sampling_iters must be >= 1, warmup_iters >= 0")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 0:
            raise ValueError("max_tree_depth must be non-negative")
        if not self.init_radius > 0:
            raise ValueError("init_radius must be positive")


def chain_rng(seed, chain):
    """Independent generator for ``chain`` derived from the run seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(chain),))))


# ---------------------------------------------------------------------------
# Integrator


def leapfrog(q, p, step_size, inv_mass, logp_and_grad, grad=None):
    """One half-kick / drift / half-kick step of the Störmer-Verlet scheme.

    Parameters
    ----------
    q, p : ndarray
        Position and momentum.
    step_size : float
        Signed step size (negative integrates backward in time).
    inv_mass : ndarray
        Diagonal of the inverse mass matrix.
    logp_and_grad : callable
        Returns ``(log density, gradient)`` at a position.
    grad : ndarray, optional
        Gradient at ``q`` when already known.

    Returns
    -------
    q_new, p_new, logp_new, grad_new
    """
    if grad is None:
        grad = logp_and_grad(q)[1]
    p_half = p + 0.5 * step_size * grad
    q_new = q + step_size * inv_mass * p_half
    logp_new, grad_new = logp_and_grad(q_new)
    p_new = p_half + 0.5 * step_size * grad_new
    return q_new, p_new, logp_new, grad_new


@dataclass
class _Point:
    q: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


@dataclass
class _Subtree:
    end: _Point
    sample: _Point
    log_sum_w: float
    rho: np.ndarray
    p_beg: np.ndarray
    p_end: np.ndarray
    p_sharp_beg: np.ndarray
    p_sharp_end: np.ndarray


def _no_u_turn(p_sharp_a, p_sharp_b, rho):
    return float(p_sharp_a @ rho) > 0 and float(p_sharp_b @ rho) > 0


@dataclass
class Transition:
    point: _Point
    accept_stat: float
    tree_depth: int
    n_leapfrog: int
    divergent: bool
    energy: float


class NUTS:
    """Multinomial No-U-Turn transition kernel with a diagonal metric."""

    def __init__(self, logp_and_grad, max_tree_depth=10, max_delta_energy=1000.0):
        self.logp_and_grad = logp_and_grad
        self.max_tree_depth = max_tree_depth
        self.max_delta_energy = max_delta_energy

    def _energy(self, point, inv_mass):
        return -point.logp + 0.5 * float(point.p @ (inv_mass * point.p))

    def transition(self, q, logp, grad, step_size, inv_mass, rng):
        p0 = rng.standard_normal(q.shape[0]) / np.sqrt(inv_mass)
        z0 = _Point(q, p0, logp, grad)
        self._H0 = self._energy(z0, inv_mass)
        self._eps = step_size
        self._inv_mass = inv_mass
        self._rng = rng
        self._n_leapfrog = 0
        self._sum_metro = 0.0
        self._divergent = False

        z_minus = z_plus = z0
        p_sharp0 = inv_mass * p0
        p_minus = p_plus = p0
        p_sharp_minus = p_sharp_plus = p_sharp0
        rho = p0.copy()
        log_sum_w = 0.0
        sample = z0
        depth = 0
        limit = max(self.max_tree_depth, 1)
        while depth < limit:
            direction = 1 if rng.uniform() > 0.5 else -1
            start = z_plus if direction > 0 else z_minus
            sub = self._build(start, depth, direction)
            if sub is None:
                break
            depth += 1
            if sub.log_sum_w > log_sum_w or rng.uniform() < np.exp(sub.log_sum_w - log_sum_w):
                sample = sub.sample
            log_sum_w = np.logaddexp(log_sum_w, sub.log_sum_w)

            if direction > 0:
                near_p, near_sharp = p_plus, p_sharp_plus
                far_sharp = p_sharp_minus
                z_plus, p_plus, p_sharp_plus = sub.end, sub.p_end, sub.p_sharp_end
            else:
                near_p, near_sharp = p_minus, p_sharp_minus
                far_sharp = p_sharp_plus
                z_minus, p_minus, p_sharp_minus = sub.end, sub.p_end, sub.p_sharp_end
            rho_old = rho
            rho = rho_old + sub.rho
            persist = _no_u_turn(p_sharp_minus, p_sharp_plus, rho)
            persist = persist and _no_u_turn(far_sharp, sub.p_sharp_beg, rho_old + sub.p_beg)
            persist = persist and _no_u_turn(near_sharp, sub.p_sharp_end, sub.rho + near_p)
            if not persist:
                break

        if self._divergent:
            sample = z0
        accept = self._sum_metro / max(self._n_leapfrog, 1)
        return Transition(
            point=sample,
            accept_stat=accept,
            tree_depth=depth,
            n_leapfrog=self._n_leapfrog,
            divergent=self._divergent,
            energy=self._energy(sample, inv_mass),
        )

    def _build(self, z, depth, direction):
        """Build a subtree of ``2**depth`` steps; ``None`` marks an invalid one."""
        if depth == 0:
            q, p, logp, grad = leapfrog(z.q, z.p, direction * self._eps, self._inv_mass, self.logp_and_grad, z.grad)
            self._n_leapfrog += 1
            zn = _Point(q, p, logp, grad)
            H = self._energy(zn, self._inv_mass) if np.isfinite(logp) and np.all(np.isfinite(grad)) else np.inf
            if not np.isfinite(H):
                H = np.inf
            delta = self._H0 - H
            self._sum_metro += 1.0 if delta > 0 else float(np.exp(delta))
            if -delta > self.max_delta_energy:
                self._divergent = True
                return None
            p_sharp = self._inv_mass * p
            return _Subtree(zn, zn, delta, p.copy(), p, p, p_sharp, p_sharp)

        left = self._build(z, depth - 1, direction)
        if left is None:
            return None
        right = self._build(left.end, depth - 1, direction)
        if right is None:
            return None
        log_sum_w = np.logaddexp(left.log_sum_w, right.log_sum_w)
        sample = right.sample if self._rng.uniform() < np.exp(right.log_sum_w - log_sum_w) else left.sample
        rho = left.rho + right.rho
        persist = (
            _no_u_turn(left.p_sharp_beg, right.p_sharp_end, rho)
            and _no_u_turn(left.p_sharp_beg, right.p_sharp_beg, left.rho + right.p_beg)
            and _no_u_turn(left.p_sharp_end, right.p_sharp_end, right.rho + left.p_end)
        )
        if not persist:
            return None
        return _Subtree(right.end, sample, log_sum_w, rho, left.p_beg, right.p_end, left.p_sharp_beg, right.p_sharp_end)


# ---------------------------------------------------------------------------
# Adaptation


class DualAveraging:
    """Nesterov dual averaging of ``log(step_size)``."""

    def __init__(self, step_size, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = np.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat):
        """Feed one acceptance statistic; returns the next step size."""
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * np.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return float(np.exp(x))

    @property
    def final_step_size(self):
        return float(np.exp(self.x_bar))


class WarmupSchedule:
    """Fast / doubling slow / fast warm-up windows.

    Defaults are an initial buffer of 75 iterations, a terminal buffer of 50
    and a first slow window of 25; for short warm-ups they shrink to 15%, 10%
    and the remainder.
    """

    def __init__(self, num_warmup, init_buffer=75, term_buffer=50, base_window=25):
        self.num_warmup = num_warmup
        if num_warmup < 20:
            self.init_buffer, self.term_buffer, self.base_window = num_warmup, 0, 0
            self.adapt_metric = False
            return
        self.adapt_metric = True
        if init_buffer + term_buffer + base_window > num_warmup:
            init_buffer = int(0.15 * num_warmup)
            term_buffer = int(0.1 * num_warmup)
            base_window = num_warmup - (init_buffer + term_buffer)
        self.init_buffer, self.term_buffer, self.base_window = init_buffer, term_buffer, base_window

    def windows(self):
        """List of ``(start, end)`` iteration ranges (end exclusive) for the metric."""
        if not self.adapt_metric:
            return []
        last = self.num_warmup - self.term_buffer
        out = []
        start, size = self.init_buffer, self.base_window
        while start < last:
            end = start + size
            # absorb a final window that would be less than twice the next one
            if end + 2 * size > last:
                end = last
            out.append((start, end))
            start, size = end, 2 * size
        return out


def _regularized_variance(draws):
    n = draws.shape[0]
    var = draws.var(axis=0, ddof=1) if n > 1 else np.ones(draws.shape[1])
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _initial_step_size(kernel, q, logp, grad, inv_mass, rng, step_size=1.0):
    """Double or halve the step until a single-step acceptance crosses 0.8."""
    log_target = np.log(0.8)
    direction = 0
    for _ in range(100):
        p = rng.standard_normal(q.shape[0]) / np.sqrt(inv_mass)
        H0 = -logp + 0.5 * float(p @ (inv_mass * p))
        _, p1, logp1, grad1 = leapfrog(q, p, step_size, inv_mass, kernel.logp_and_grad, grad)
        H1 = -logp1 + 0.5 * float(p1 @ (inv_mass * p1))
        delta = H0 - H1 if np.isfinite(H1) else -np.inf
        if direction == 0:
            direction = 1 if delta > log_target else -1
        if direction == 1 and not delta > log_target:
            break
        if direction == -1 and not delta < log_target:
            break
        step_size = step_size * 2.0 if direction == 1 else step_size / 2.0
        if step_size > 1e7 or step_size < 1e-12:
            break
    return float(step_size)


# ---------------------------------------------------------------------------
# Output container and convergence diagnostics


def _autocovariance(x):
    n = x.shape[-1]
    m = 1 << int(np.ceil(np.log2(2 * n)))
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, n=m, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=m, axis=-1)[..., :n] / n
    return acov


def effective_sample_size(x):
    """Multi-chain effective sample size of a ``(chains, draws)`` array.

    Autocorrelations are combined across chains and truncated with Geyer's
    initial monotone positive-pair sequence.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    if n < 4:
        return float("nan")
    acov = _autocovariance(x)
    chain_mean = x.mean(axis=1)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if not var_plus > 0:
        return float(m * n)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum positive pairs, enforce monotone decrease
    pairs = []
    for t in range(0, n - 1, 2):
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        pairs.append(s)
    pairs = np.minimum.accumulate(np.asarray(pairs)) if pairs else np.array([1.0])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n)) if m * n > 1 else tau
    return float(m * n / tau)


def split_rhat(x):
    """Split potential scale reduction of a ``(chains, draws)`` array."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[1] // 2
    if n < 2:
        return float("nan")
    halves = np.concatenate([x[:, :n], x[:, -n:]], axis=0)
    means = halves.mean(axis=1)
    within = halves.var(axis=1, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float("inf")
    var_plus = (n - 1.0) / n * within + between / n
    return float(np.sqrt(var_plus / within))


@dataclass
class PosteriorDraws:
    """Sampling-phase output of :func:`sample`.

    Arrays are indexed ``[chain, iteration, ...]``.  ``constrained`` holds the
    model-space parameters named by ``param_names``.
    """

    param_names: list
    unconstrained: np.ndarray
    constrained: np.ndarray
    logp: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    energy: np.ndarray
    accept_stat: np.ndarray
    n_leapfrog: np.ndarray
    step_size: np.ndarray = field(default_factory=lambda: np.empty(0))
    inv_mass: np.ndarray = field(default_factory=lambda: np.empty(0))
    warmup_divergences: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def n_chains(self) -> int:
        return self.constrained.shape[0]

    @property
    def n_draws(self) -> int:
        return self.constrained.shape[1]

    @property
    def n_divergent(self) -> int:
        return int(self.divergent.sum())

    def flat(self):
        """Constrained draws stacked chain by chain, shape ``(chains * draws, P)``."""
        return self.constrained.reshape(-1, self.constrained.shape[-1])

    def column(self, name):
        return self.constrained[..., self.param_names.index(name)]

    def mean(self):
        return self.flat().mean(axis=0)

    def sd(self):
        return self.flat().std(axis=0, ddof=1)

    def quantile(self, q):
        return np.quantile(self.flat(), q, axis=0)

    def ess(self):
        return np.array([effective_sample_size(self.constrained[..., j]) for j in range(len(self.param_names))])

    def rhat(self):
        return np.array([split_rhat(self.constrained[..., j]) for j in range(len(self.param_names))])

    def mcse(self):
        return self.sd() / np.sqrt(self.ess())

    def summary(self, interval=0.95):
        """Posterior summary table with equal-tailed credible intervals."""
        import pandas as pd

        tail = (1.0 - interval) / 2.0
        lo, hi = self.quantile([tail, 1.0 - tail])
        return pd.DataFrame(
            {
                "parameter": self.param_names,
                "mean": self.mean(),
                "sd": self.sd(),
                "ci_low": lo,
                "ci_high": hi,
                "ess": self.ess(),
                "rhat": self.rhat(),
            }
        )

    def to_frame(self):
        """One row per draw: chain, iteration, parameters, log posterior, divergence."""
        import pandas as pd

        C, S = self.logp.shape
        frame = pd.DataFrame(self.flat(), columns=self.param_names)
        frame.insert(0, "iteration", np.tile(np.arange(S), C))
        frame.insert(0, "chain", np.repeat(np.arange(C), S))
        frame["lp"] = self.logp.reshape(-1)
        frame["divergent"] = self.divergent.reshape(-1).astype(int)
        return frame


# ---------------------------------------------------------------------------
# Driver


def _initial_point(logp_and_grad, dim, rng, radius, attempts=100):
    for _ in range(attempts):
        q = rng.uniform(-radius, radius, size=dim)
        logp, grad = logp_and_grad(q)
        if np.isfinite(logp) and np.all(np.isfinite(grad)):
            return q, logp, grad
    raise SamplerError(f"no finite initial point found in {attempts} attempts")


def run_chain(logp_and_grad, dim, config, chain, init=None):
    """Run warm-up and sampling for a single chain.

    Returns a dict of per-iteration arrays for the sampling phase plus the
    adapted step size and inverse metric.
    """
    rng = chain_rng(config.seed, chain)
    if init is None:
        q, logp, grad = _initial_point(logp_and_grad, dim, rng, config.init_radius)
    else:
        q = np.asarray(init, dtype=float)
        logp, grad = logp_and_grad(q)
    kernel = NUTS(logp_and_grad, config.max_tree_depth, config.max_delta_energy)
    inv_mass = np.ones(dim)
    W = config.warmup_iters

    step_size = _initial_step_size(kernel, q, logp, grad, inv_mass, rng)
    adapter = DualAveraging(step_size, config.target_accept)
    schedule = WarmupSchedule(W)
    windows = schedule.windows()
    window_ends = {end: start for start, end in windows}
    warm_q = np.empty((W, dim))
    warm_div = 0

    for it in range(W):
        tr = kernel.transition(q, logp, grad, step_size, inv_mass, rng)
        q, logp, grad = tr.point.q, tr.point.logp, tr.point.grad
        warm_div += tr.divergent
        warm_q[it] = q
        step_size = adapter.update(tr.accept_stat)
        start = window_ends.get(it + 1)
        if start is not None:
            inv_mass = _regularized_variance(warm_q[start : it + 1])
            step_size = _initial_step_size(kernel, q, logp, grad, inv_mass, rng, step_size)
            adapter.restart(step_size)
    if W > 0:
        if warm_div == W:
            raise SamplerError(
                f"chain {chain}: all {W} warm-up transitions diverged; "
                "the posterior is likely improper or badly scaled"
            )
        step_size = adapter.final_step_size

    S = config.sampling_iters
    out = {
        "q": np.empty((S, dim)),
        "logp": np.empty(S),
        "divergent": np.zeros(S, dtype=bool),
        "tree_depth": np.empty(S, dtype=np.int64),
        "energy": np.empty(S),
        "accept_stat": np.empty(S),
        "n_leapfrog": np.empty(S, dtype=np.int64),
    }
    for it in range(S):
        tr = kernel.transition(q, logp, grad, step_size, inv_mass, rng)
        q, logp, grad = tr.point.q, tr.point.logp, tr.point.grad
        out["q"][it] = q
        out["logp"][it] = logp
        out["divergent"][it] = tr.divergent
        out["tree_depth"][it] = tr.tree_depth
        out["energy"][it] = tr.energy
        out["accept_stat"][it] = tr.accept_stat
        out["n_leapfrog"][it] = tr.n_leapfrog
    out["step_size"] = step_size
    out["inv_mass"] = inv_mass
    out["warmup_divergences"] = warm_div
    return out


def sample(logp_and_grad, dim, config=None, constrain=None, param_names=None, inits=None):
    """Draw posterior samples with NUTS.

    Parameters
    ----------
    logp_and_grad : callable
        Maps an unconstrained point of length ``dim`` to ``(log density,
        gradient)``.
    dim : int
        Number of unconstrained coordinates.
    config : SamplerConfig, optional
    constrain : callable, optional
        Maps an array of unconstrained rows to model-space parameters.
        Identity when omitted.
    param_names : list of str, optional
    inits : sequence of arrays, optional
        One starting point per chain; drawn uniformly in
        ``[-init_radius, init_radius]`` otherwise.

    Returns
    -------
    PosteriorDraws
    """
    config = config if config is not None else SamplerConfig()
    chains = []
    for c in range(config.chains):
        init = None if inits is None else inits[c]
        chains.append(run_chain(logp_and_grad, dim, config, c, init))
        logger.debug("chain %d finished: step size %.4g", c, chains[-1]["step_size"])

    q = np.stack([ch["q"] for ch in chains])
    theta = constrain(q) if constrain is not None else q.copy()
    names = list(param_names) if param_names is not None else [f"x{j}" for j in range(theta.shape[-1])]
    return PosteriorDraws(
        param_names=names,
        unconstrained=q,
        constrained=theta,
        logp=np.stack([ch["logp"] for ch in chains]),
        divergent=np.stack([ch["divergent"] for ch in chains]),
        tree_depth=np.stack([ch["tree_depth"] for ch in chains]),
        energy=np.stack([ch["energy"] for ch in chains]),
        accept_stat=np.stack([ch["accept_stat"] for ch in chains]),
        n_leapfrog=np.stack([ch["n_leapfrog"] for ch in chains]),
        step_size=np.array([ch["step_size"] for ch in chains]),
        inv_mass=np.stack([ch["inv_mass"] for ch in chains]),
        warmup_divergences=np.array([ch["warmup_divergences"] for ch in chains]),
    )
