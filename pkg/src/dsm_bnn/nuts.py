"""No-U-Turn sampler with dual-averaging step size and a diagonal metric.

Trajectories are built by repeated doubling with multinomial sampling of the
proposal and the generalized no-U-turn criterion, including the extra checks
across merged subtrees. Warmup follows the usual windowed schedule: a fast
initial buffer, slow windows of doubling length that re-estimate the metric,
and a fast terminal buffer.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

MAX_DELTA_H = 1000.0
INIT_ATTEMPTS = 100
INIT_JITTER = 0.1


class SamplerInitError(RuntimeError):
    """No finite starting point was found."""


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1 or self.draws < 1 or self.warmup < 0 or self.max_treedepth < 1:
            raise ValueError(f"invalid sampler configuration {self}")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass
class Trace:
    """Post-warmup draws of every chain plus per-draw sampler statistics."""

    draws: np.ndarray  # (chains, draws, dim)
    divergent: np.ndarray  # (chains, draws) bool
    step_size: np.ndarray  # (chains,)
    inv_metric: np.ndarray  # (chains, dim)
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    accept_stat: np.ndarray
    energy_error: np.ndarray
    coordinate_names: list | None = None
    derived: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    @property
    def dim(self) -> int:
        return self.draws.shape[2]

    @property
    def divergence_fraction(self) -> float:
        return float(np.mean(self.divergent))

    def flat(self) -> np.ndarray:
        """All draws stacked chain after chain, shape (chains * draws, dim)."""
        return self.draws.reshape(-1, self.dim)

    def thinned(self, step: int) -> np.ndarray:
        return self.draws[:, ::step].reshape(-1, self.dim)

    def to_csv(self, path, header_lines=()):
        names = self.coordinate_names or [f"theta[{i}]" for i in range(self.dim)]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# step_size={' '.join(repr(float(s)) for s in self.step_size)}\n")
            writer = csv.writer(fh)
            writer.writerow(["chain", "draw", "divergent", *names])
            for c in range(self.n_chains):
                for m in range(self.n_draws):
                    writer.writerow([c, m, int(self.divergent[c, m]),
                                     *(repr(float(v)) for v in self.draws[c, m])])

    @classmethod
    def from_csv(cls, path) -> "Trace":
        step_sizes = None
        rows = []
        with open(path, newline="") as fh:
            lines = []
            for line in fh:
                if line.startswith("#"):
                    if line.startswith("# step_size="):
                        step_sizes = [float(s) for s in line.split("=", 1)[1].split()]
                    continue
                lines.append(line)
        reader = csv.reader(lines)
        header = next(reader)
        names = header[3:]
        for row in reader:
            rows.append(row)
        if not rows:
            raise ValueError(f"trace file {path} has no draws")
        data = np.array([[float(v) for v in row] for row in rows])
        chains = int(data[:, 0].max()) + 1
        per_chain = len(data) // chains
        draws = data[:, 3:].reshape(chains, per_chain, -1)
        divergent = data[:, 2].reshape(chains, per_chain).astype(bool)
        zeros = np.zeros((chains, per_chain))
        counts = np.zeros((chains, per_chain), dtype=int)
        step = np.array(step_sizes if step_sizes else [np.nan] * chains)
        return cls(draws=draws, divergent=divergent, step_size=step,
                   inv_metric=np.full((chains, draws.shape[2]), np.nan), tree_depth=counts,
                   n_leapfrog=counts.copy(), accept_stat=zeros, energy_error=zeros.copy(),
                   coordinate_names=names)


class _DualAveraging:
    def __init__(self, delta, gamma=0.05, kappa=0.75, t0=10.0):
        self.delta, self.gamma, self.kappa, self.t0 = delta, gamma, kappa, t0
        self.mu = 0.0
        self.restart()

    def restart(self):
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def learn(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class _Windows:
    """Slow-window schedule for metric estimation during warmup."""

    def __init__(self, warmup, init_buffer=75, term_buffer=50, base_window=25):
        self.warmup = warmup
        if warmup < 20:
            self.enabled = False
            return
        self.enabled = True
        if init_buffer + base_window + term_buffer > warmup:
            init_buffer = int(0.15 * warmup)
            term_buffer = int(0.1 * warmup)
            base_window = warmup - (init_buffer + term_buffer)
        self.init_buffer, self.term_buffer = init_buffer, term_buffer
        self.window_size = base_window
        self.next_end = init_buffer + base_window - 1
        self.counter = 0

    def in_window(self) -> bool:
        return (self.counter >= self.init_buffer
                and self.counter < self.warmup - self.term_buffer
                and self.counter != self.warmup)

    def at_window_end(self) -> bool:
        return self.counter == self.next_end and self.counter != self.warmup

    def advance_window(self):
        last = self.warmup - self.term_buffer - 1
        if self.next_end == last:
            return
        self.window_size *= 2
        self.next_end = self.counter + self.window_size
        if self.next_end != last and self.next_end + 2 * self.window_size >= self.warmup - self.term_buffer:
            self.next_end = last


class _Sampler:
    def __init__(self, logp_and_grad, dim, rng, max_depth):
        self.f = logp_and_grad
        self.dim = dim
        self.rng = rng
        self.max_depth = max_depth
        self.inv_metric = np.ones(dim)
        self.eps = 1.0

    # state of the moving integrator endpoint
    def _set(self, point):
        self.q, self.p, self.lp, self.grad = point

    def _point(self):
        return (self.q, self.p, self.lp, self.grad)

    def _leapfrog(self, eps):
        p = self.p + 0.5 * eps * self.grad
        q = self.q + eps * self.inv_metric * p
        lp, grad = self.f(q)
        if not math.isfinite(lp):
            self.q, self.p, self.lp, self.grad = q, p, -math.inf, grad
            return
        self.q, self.lp, self.grad = q, lp, grad
        self.p = p + 0.5 * eps * grad

    def _hamiltonian(self):
        if not math.isfinite(self.lp):
            return math.inf
        h = -self.lp + 0.5 * float(np.dot(self.p, self.inv_metric * self.p))
        return h if math.isfinite(h) else math.inf

    def _build_tree(self, depth, H0, sign):
        """Returns (valid, proposal, log_weight, rho, p_sharp_beg, p_sharp_end, p_beg, p_end)."""
        if depth == 0:
            self._leapfrog(sign * self.eps)
            self.n_leapfrog += 1
            h = self._hamiltonian()
            if h - H0 > MAX_DELTA_H:
                self.divergent = True
            log_w = H0 - h
            self.sum_metro += 1.0 if log_w > 0 else math.exp(log_w)
            p_sharp = self.inv_metric * self.p
            return (not self.divergent, (self.q, self.lp, self.grad, h), log_w, self.p,
                    p_sharp, p_sharp, self.p, self.p)

        valid, prop, lw_init, rho_init, ps_beg, ps_init_end, p_beg, p_init_end = \
            self._build_tree(depth - 1, H0, sign)
        if not valid:
            return (False, prop, lw_init, rho_init, ps_beg, ps_init_end, p_beg, p_init_end)
        valid, prop_final, lw_final, rho_final, ps_final_beg, ps_end, p_final_beg, p_end = \
            self._build_tree(depth - 1, H0, sign)
        if not valid:
            return (False, prop, lw_init, rho_init, ps_beg, ps_end, p_beg, p_end)

        lw_sub = np.logaddexp(lw_init, lw_final)
        if self.rng.uniform() < math.exp(lw_final - lw_sub):
            prop = prop_final
        rho_sub = rho_init + rho_final
        persist = _criterion(ps_beg, ps_end, rho_sub)
        persist = persist and _criterion(ps_beg, ps_final_beg, rho_init + p_final_beg)
        persist = persist and _criterion(ps_init_end, ps_end, rho_final + p_init_end)
        return (persist, prop, lw_sub, rho_sub, ps_beg, ps_end, p_beg, p_end)

    def transition(self, q, lp, grad):
        p0 = self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)
        self._set((q, p0, lp, grad))
        H0 = self._hamiltonian()
        fwd = bck = (q, p0, lp, grad)
        sample = (q, lp, grad, H0)
        ps0 = self.inv_metric * p0
        p_fwd_fwd, ps_fwd_fwd = p0, ps0
        p_fwd_bck, ps_fwd_bck = p0, ps0
        p_bck_fwd, ps_bck_fwd = p0, ps0
        p_bck_bck, ps_bck_bck = p0, ps0
        rho = p0.copy()
        log_w = 0.0
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False
        depth = 0
        while depth < self.max_depth:
            if self.rng.uniform() > 0.5:
                self._set(fwd)
                rho_bck = rho
                p_bck_fwd, ps_bck_fwd = p_fwd_bck, ps_fwd_bck
                valid, prop, lw_sub, rho_fwd, ps_fwd_bck, ps_fwd_fwd, p_fwd_bck, p_fwd_fwd = \
                    self._build_tree(depth, H0, 1.0)
                fwd = self._point()
            else:
                self._set(bck)
                rho_fwd = rho
                p_fwd_bck, ps_fwd_bck = p_bck_fwd, ps_bck_fwd
                valid, prop, lw_sub, rho_bck, ps_bck_fwd, ps_bck_bck, p_bck_fwd, p_bck_bck = \
                    self._build_tree(depth, H0, -1.0)
                bck = self._point()
            if not valid:
                break
            depth += 1
            if lw_sub > log_w or self.rng.uniform() < math.exp(lw_sub - log_w):
                sample = prop
            log_w = np.logaddexp(log_w, lw_sub)
            rho = rho_bck + rho_fwd
            persist = _criterion(ps_bck_bck, ps_fwd_fwd, rho)
            persist = persist and _criterion(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
            persist = persist and _criterion(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd)
            if not persist:
                break
        accept = self.sum_metro / max(self.n_leapfrog, 1)
        q_new, lp_new, grad_new, h_new = sample
        stats = (depth, self.n_leapfrog, accept, self.divergent, h_new - H0)
        return q_new, lp_new, grad_new, stats

    def init_stepsize(self, q, lp, grad):
        # double or halve until the one-step acceptance crosses 0.8
        direction = 0
        for _ in range(100):
            p0 = self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)
            self._set((q, p0, lp, grad))
            H0 = self._hamiltonian()
            self._leapfrog(self.eps)
            h = self._hamiltonian()
            delta_h = H0 - h
            if direction == 0:
                direction = 1 if delta_h > math.log(0.8) else -1
            if direction == 1 and not delta_h > math.log(0.8):
                break
            if direction == -1 and not delta_h < math.log(0.8):
                break
            self.eps = self.eps * 2.0 if direction == 1 else self.eps * 0.5
            if self.eps > 1e7 or self.eps < 1e-12:
                break
        self._set((q, None, lp, grad))


def _criterion(p_sharp_minus, p_sharp_plus, rho) -> bool:
    return float(np.dot(p_sharp_plus, rho)) > 0 and float(np.dot(p_sharp_minus, rho)) > 0


def chain_seed(seed: int, chain: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & (2**64 - 1), int(chain)])


def _initial_point(f, dim, rng, init):
    candidates = []
    if init is not None:
        candidates.append(np.asarray(init, dtype=float).copy())
    for attempt in range(INIT_ATTEMPTS):
        base = candidates[0] if init is not None else np.zeros(dim)
        q = base + INIT_JITTER * rng.standard_normal(dim) if attempt or init is None else base
        lp, grad = f(q)
        if math.isfinite(lp) and np.all(np.isfinite(grad)):
            return q, lp, grad
    raise SamplerInitError(f"no finite initial point after {INIT_ATTEMPTS} attempts")


def run_chain(logp_and_grad, dim: int, config: SamplerConfig, chain: int, init=None):
    """Run warmup and sampling for one chain; returns a dict of arrays."""
    rng = np.random.default_rng(chain_seed(config.seed, chain))
    q, lp, grad = _initial_point(logp_and_grad, dim, rng, init)
    sampler = _Sampler(logp_and_grad, dim, rng, config.max_treedepth)
    sampler.init_stepsize(q, lp, grad)
    dual = _DualAveraging(config.target_accept)
    dual.mu = math.log(10.0 * sampler.eps)
    windows = _Windows(config.warmup)
    window_draws = []

    for _ in range(config.warmup):
        q, lp, grad, stats = sampler.transition(q, lp, grad)
        sampler.eps = dual.learn(stats[2])
        if windows.enabled:
            if windows.in_window():
                window_draws.append(q)
            if windows.at_window_end():
                windows.advance_window()
                window = np.array(window_draws)
                n = len(window)
                var = window.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
                sampler.inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                window_draws = []
                sampler.init_stepsize(q, lp, grad)
                dual.mu = math.log(10.0 * sampler.eps)
                dual.restart()
            windows.counter += 1
    if config.warmup > 0:
        sampler.eps = dual.final()

    out = {
        "draws": np.empty((config.draws, dim)),
        "divergent": np.zeros(config.draws, dtype=bool),
        "tree_depth": np.zeros(config.draws, dtype=int),
        "n_leapfrog": np.zeros(config.draws, dtype=int),
        "accept_stat": np.zeros(config.draws),
        "energy_error": np.zeros(config.draws),
    }
    for m in range(config.draws):
        q, lp, grad, (depth, n_leap, accept, divergent, d_energy) = sampler.transition(q, lp, grad)
        out["draws"][m] = q
        out["divergent"][m] = divergent
        out["tree_depth"][m] = depth
        out["n_leapfrog"][m] = n_leap
        out["accept_stat"][m] = accept
        out["energy_error"][m] = d_energy
    out["step_size"] = sampler.eps
    out["inv_metric"] = sampler.inv_metric.copy()
    return out


def _run_chain_task(args):
    return run_chain(*args)


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit value, then DSM_BNN_THREADS, then 1."""
    if threads is None:
        env = os.environ.get("DSM_BNN_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def run_nuts(logp_and_grad, dim: int, config: SamplerConfig, init=None, threads: int | None = None,
             coordinate_names=None) -> Trace:
    """Sample ``config.chains`` independent chains and merge them into a Trace.

    ``logp_and_grad(theta)`` must return ``(log_density, gradient)``. With more
    than one thread, chains run in worker processes and the callable must be
    picklable; results do not depend on the thread count.
    """
    threads = min(resolve_threads(threads), config.chains)
    tasks = [(logp_and_grad, dim, config, c, init) for c in range(config.chains)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_chain_task, tasks))
    else:
        results = [_run_chain_task(t) for t in tasks]
    stack = lambda key: np.stack([r[key] for r in results])
    return Trace(
        draws=stack("draws"),
        divergent=stack("divergent"),
        step_size=np.array([r["step_size"] for r in results]),
        inv_metric=stack("inv_metric"),
        tree_depth=stack("tree_depth"),
        n_leapfrog=stack("n_leapfrog"),
        accept_stat=stack("accept_stat"),
        energy_error=stack("energy_error"),
        coordinate_names=list(coordinate_names) if coordinate_names is not None else None,
    )
