"""Directed information, information density and finite-horizon capacity.

All information quantities are in bits. Joint tables use the interleaved
layout ``(a_1, b_1, ..., a_T, b_T)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .codefunctions import InputDistribution, parse_pattern, pattern_name, visible_outputs
from .errors import InternalDisagreement, ZeroMassCell
from .filtering import belief_tables, channel_tables
from .kernels import (
    MarkovChannelSpec,
    check_cap,
    entropy,
    history_shape,
    log2_or_zero,
)

AGREE_TOL = 1e-10


def _sizes(channel):
    return channel.A.size, channel.B.size


def step_tables(channel, T):
    """p(b_t | a^t, b^{t-1}) tables (interleaved) for either channel kind."""
    nA, nB = _sizes(channel)
    check_cap("joint measure", (nA * nB) ** T)
    if isinstance(channel, MarkovChannelSpec):
        return channel_tables(channel, T)
    if channel.horizon < T:
        raise ValueError(f"channel horizon {channel.horizon} < {T}")
    return list(channel.steps[:T])


def _expand(table, t, T):
    """Broadcast a table over the first t steps (plus nothing) to T steps."""
    return table.reshape(table.shape + (1, 1) * (T - t))


def channel_product(tables, T):
    """p(b^T || a^T) = prod_t p(b_t | a^t, b^{t-1}), shape (A, B) * T."""
    out = tables[0]
    for t in range(2, T + 1):
        out = out[..., None, None] * tables[t - 1]
    return out


@dataclass(frozen=True, eq=False)
class JointMeasure:
    nA: int
    nB: int
    horizon: int
    table: np.ndarray
    provenance: tuple = ("", "")

    def __post_init__(self):
        total = self.table.sum()
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"joint mass {total:.15g} != 1")

    def prefix(self, t):
        """Marginal over (a^t, b^t)."""
        T = self.horizon
        if t == T:
            return self.table
        return self.table.sum(axis=tuple(range(2 * t, 2 * T)))

    def b_marginal(self, t=None):
        t = self.horizon if t is None else t
        return self.prefix(t).sum(axis=tuple(range(0, 2 * t, 2)))

    def a_marginal(self, t=None):
        t = self.horizon if t is None else t
        return self.prefix(t).sum(axis=tuple(range(1, 2 * t, 2)))


def joint_measure(channel, input_dist):
    """P(a^T, b^T) = prod_t p(a_t | a^{t-1}, b^{t-1}) p(b_t | a^t, b^{t-1})."""
    T = input_dist.horizon
    tables = step_tables(channel, T)
    chan = channel_product(tables, T)
    inp = input_dist.causal_prefix(T)[..., None]
    table = np.asarray(inp * chan)
    name = getattr(channel, "name", "")
    return JointMeasure(input_dist.nA, input_dist.nB, T, table, (name, input_dist.pattern))


def _H(p):
    return float(entropy(p))


def _drop_last_b(prefix):
    return prefix.sum(axis=-1)


def _causal_input_from_joint(j):
    """P(a^T || b^{T-1}) computed from the joint's own conditionals (layout (A,B)*T)."""
    T = j.horizon
    out = np.ones(())
    for t in range(1, T + 1):
        num = _drop_last_b(j.prefix(t))  # P(a^t, b^{t-1})
        den = j.prefix(t - 1)[..., None] if t > 1 else np.ones(1)  # P(a^{t-1}, b^{t-1})
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(den > 0, num / den, 0.0)
        out = out[..., None, None] * cond if t > 1 else cond
    return out[..., None]


def directed_information(j, tol=AGREE_TOL, return_parts=False):
    """I(A^T -> B^T) by the divergence form and by Massey's per-step sum.

    Raises :class:`InternalDisagreement` if the two differ by more than ``tol``.
    """
    T = j.horizon
    P = j.table
    causal = _causal_input_from_joint(j)
    pb = j.b_marginal().reshape((1, j.nB) * T)
    denom = causal * pb
    mask = P > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(mask, P / np.where(mask, denom, 1.0), 1.0)
    value_div = float(np.sum(np.where(mask, P * np.log2(ratio), 0.0)))
    per_step = []
    for t in range(1, T + 1):
        pr = j.prefix(t)
        h_ab_prev = _H(_drop_last_b(pr))
        h_b = _H(j.b_marginal(t))
        h_ab = _H(pr)
        h_b_prev = _H(j.b_marginal(t - 1)) if t > 1 else 0.0
        per_step.append(h_ab_prev + h_b - h_ab - h_b_prev)
    value_massey = float(sum(per_step))
    if abs(value_div - value_massey) > tol:
        raise InternalDisagreement(f"divergence form {value_div!r} vs Massey sum {value_massey!r}")
    if return_parts:
        return value_massey, per_step
    return value_massey


def reverse_directed_information(j):
    """I(B^T -> A^T) = sum_t I(A_t; B^{t-1} | A^{t-1})."""
    T = j.horizon
    total = 0.0
    for t in range(1, T + 1):
        pr = _drop_last_b(j.prefix(t))  # (a^t, b^{t-1})
        if t == 1:
            continue
        h_ab_prev = _H(j.prefix(t - 1))  # H(A^{t-1}, B^{t-1})
        h_a = _H(pr.sum(axis=tuple(range(1, 2 * t - 1, 2))))
        h_ab = _H(pr)
        h_a_prev = _H(j.a_marginal(t - 1))
        total += h_ab_prev + h_a - h_ab - h_a_prev
    return total


def mutual_information_ab(j):
    return _H(j.a_marginal()) + _H(j.b_marginal()) - _H(j.table)


def markov_directed_information(spec, input_dist, tol=AGREE_TOL):
    """sum_t I(A_t, Pi_t; B_t | B^{t-1}) for a Markov channel.

    Conditionals given (Pi_t, A_t, B^{t-1}) are formed by pooling histories
    that share a filter belief, then checked against the plain directed
    information of the same joint.
    """
    T = input_dist.horizon
    nS, nA, nB = spec.shape
    beliefs, preds, _ = belief_tables(spec, T)
    # forward pass: P(a^t, b^t)
    joint = None
    per_step = []
    for t in range(1, T + 1):
        q = input_dist.steps[t - 1]
        pa = q if t == 1 else joint[..., None] * q  # P(a^t, b^{t-1})
        joint = pa[..., None] * preds[t - 1]  # P(a^t, b^t)
        # H(B_t | B^{t-1})
        pb_t = joint.sum(axis=tuple(range(0, 2 * t, 2)))
        h_bt = _H(pb_t) - (_H(pb_t.sum(axis=-1)) if t > 1 else 0.0)
        # H(B_t | A_t, Pi_t, B^{t-1}) by pooling histories with equal belief
        pi = np.broadcast_to(beliefs[t - 1][..., None, :], history_shape(nA, nB, t) + (nA, nS))
        flat_pi = np.round(pi.reshape(-1, nS), 12)
        idx = np.indices(history_shape(nA, nB, t) + (nA,)).reshape(2 * t - 1, -1).T
        a_t = idx[:, -1:]
        b_hist = idx[:, 1:-1:2]
        keys = np.concatenate([flat_pi, a_t, b_hist], axis=1)
        _, group = np.unique(keys, axis=0, return_inverse=True)
        group = group.ravel()
        w = pa.reshape(-1)
        wb = joint.reshape(-1, nB)
        n_g = group.max() + 1
        mass = np.bincount(group, weights=w, minlength=n_g)
        massb = np.stack([np.bincount(group, weights=wb[:, k], minlength=n_g) for k in range(nB)], axis=1)
        h_cond = _H(massb) - _H(mass)
        per_step.append(h_bt - h_cond)
    value = float(sum(per_step))
    plain = directed_information(joint_measure(spec, input_dist))
    if abs(plain - value) > tol:
        raise InternalDisagreement(f"belief-augmented sum {value!r} vs directed information {plain!r}")
    return value, per_step


@dataclass(frozen=True)
class InfoDensitySample:
    value: float
    a: tuple
    b: tuple
    increments: tuple


def _conditional_b(j, t):
    """P(b_t | a^t, b^{t-1}) and P(b_t | b^{t-1}) tables from the joint."""
    pr = j.prefix(t)
    num = pr
    den = _drop_last_b(pr)[..., None]
    with np.errstate(invalid="ignore", divide="ignore"):
        cond_ab = np.where(den > 0, num / den, 0.0)
    pb = j.b_marginal(t)
    pb_prev = pb.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond_b = np.where(pb_prev > 0, pb / pb_prev, 0.0)
    return cond_ab, cond_b


def information_density(j, a, b):
    """Per-step log-ratios log P(b_t | a^t, b^{t-1}) / P(b_t | b^{t-1}) and their sum."""
    a = tuple(int(v) for v in a)
    b = tuple(int(v) for v in b)
    T = j.horizon
    cell = tuple(v for pair in zip(a, b) for v in pair)
    if j.table[cell] <= 0:
        raise ZeroMassCell(f"P(a={a}, b={b}) = 0")
    inc = []
    for t in range(1, T + 1):
        cond_ab, cond_b = _conditional_b(j, t)
        num = cond_ab[cell[:2 * t]]
        den = cond_b[b[:t]]
        inc.append(math.log2(num / den))
    return InfoDensitySample(float(sum(inc)), a, b, tuple(inc))


def density_table(j):
    """Information density of every cell (0 on zero-mass cells)."""
    T = j.horizon
    total = np.zeros(j.table.shape)
    for t in range(1, T + 1):
        cond_ab, cond_b = _conditional_b(j, t)
        cb = cond_b.reshape((1, j.nB) * t)
        with np.errstate(invalid="ignore", divide="ignore"):
            inc = np.where(cond_ab > 0, np.log2(np.where(cond_ab > 0, cond_ab, 1.0) / np.where(cb > 0, cb, 1.0)), 0.0)
        total = total + _expand(inc, t, T)
    return np.where(j.table > 0, total, 0.0)


# -- finite-horizon capacity ----------------------------------------------

class _Objective:
    """(1/T) I(A^T -> B^T) as a function of the input tables, for a fixed channel."""

    def __init__(self, channel, T):
        self.T = T
        tables = step_tables(channel, T)
        self.chan = channel_product(tables, T)
        self.logchan = log2_or_zero(self.chan)
        self.b_axes = tuple(range(0, 2 * T, 2))
        self.evals = 0

    def __call__(self, steps):
        self.evals += 1
        cp = steps[0]
        for t in range(2, self.T + 1):
            cp = cp[..., None, None] * steps[t - 1]
        joint = cp[..., None] * self.chan
        pb = joint.sum(axis=self.b_axes)
        return float(entropy(pb) + np.sum(joint * self.logchan)) / self.T


def _reduced_shape(nA, nB, t, pattern):
    shape = list(history_shape(nA, nB, t)) + [nA]
    for i in range(visible_outputs(pattern, t), t - 1):
        shape[2 * i + 1] = 1
    return tuple(shape)


@dataclass
class StartResult:
    start: int
    value: float
    sweeps: int
    trajectory: list
    steps: list = field(repr=False, default=None)


@dataclass
class CapacityResult:
    value: float
    input: InputDistribution
    starts: list
    pattern: str
    horizon: int
    evaluations: int

    @property
    def spread(self):
        vals = [s.value for s in self.starts]
        return max(vals) - min(vals)


def _row_search(f, row, tol):
    """Improve one simplex row by scalar searches; returns (row, value)."""
    nA = row.size
    best_row = row.copy()
    best = f(best_row)
    if nA == 1:
        return best_row, best
    pairs = [(0, 1)] if nA == 2 else [(i, k) for i in range(nA) for k in range(i + 1, nA)]
    for i, k in pairs:
        total = best_row[i] + best_row[k]
        if total <= 0:
            continue
        seen = {}

        def g(x):
            r = best_row.copy()
            r[i], r[k] = x, total - x
            v = f(r)
            seen[x] = v
            return -v

        minimize_scalar(g, bounds=(0.0, total), method="bounded", options={"xatol": tol})
        g(0.0)
        g(total)
        x_best = max(seen, key=lambda x: seen[x])
        if seen[x_best] > best:
            best = seen[x_best]
            best_row[i], best_row[k] = x_best, total - x_best
    return best_row, best


def _ascend(objective, init_steps, pattern, nA, nB, T, sweep_tol, max_sweeps, xatol):
    steps = [np.array(s, dtype=np.float64) for s in init_steps]
    full = [history_shape(nA, nB, t) + (nA,) for t in range(1, T + 1)]

    def expanded():
        return [np.broadcast_to(s, full[t]) for t, s in enumerate(steps)]

    value = objective(expanded())
    trajectory = [value]
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        before = value
        for t in range(T):
            for idx in np.ndindex(*steps[t].shape[:-1]):
                def f(row, t=t, idx=idx):
                    old = steps[t][idx].copy()
                    steps[t][idx] = row
                    v = objective(expanded())
                    steps[t][idx] = old
                    return v

                row, v = _row_search(f, steps[t][idx].copy(), xatol)
                if v > value:
                    steps[t][idx] = row
                    value = v
        trajectory.append(value)
        if value - before < sweep_tol:
            break
    return value, steps, sweeps, trajectory


def finite_horizon_capacity(channel, T, pattern="full", starts=16, seed=0, sweep_tol=1e-9,
                            max_sweeps=200, xatol=1e-10, warm_starts=(), threads=1):
    """Maximize (1/T) I(A^T -> B^T) over causal input laws with a feedback pattern.

    Blockwise coordinate ascent over the per-history rows, from a uniform
    start plus ``starts - 1`` seeded Dirichlet starts plus any ``warm_starts``
    (input distributions feasible for the pattern). Every start is reported.
    """
    pattern = pattern_name(parse_pattern(pattern))
    nA, nB = _sizes(channel)
    n_vars = sum(nA * int(np.prod(_reduced_shape(nA, nB, t, pattern)[:-1])) for t in range(1, T + 1))
    check_cap("capacity decision variables", n_vars)
    shapes = [_reduced_shape(nA, nB, t, pattern) for t in range(1, T + 1)]

    inits = [[np.full(s, 1.0 / nA) for s in shapes]]
    for k in range(1, starts):
        rng = np.random.default_rng([seed, k])
        inits.append([rng.dirichlet(np.ones(nA), size=s[:-1]) for s in shapes])
    for ws in warm_starts:
        if ws.pattern_violation(pattern) > 1e-12:
            raise ValueError("warm start is not feasible for the requested feedback pattern")
        init = []
        for t, s in enumerate(shapes):
            sl = tuple(slice(0, 1) if n == 1 else slice(None) for n in s)
            init.append(np.array(ws.steps[t][sl]))
        inits.append(init)

    def run(k):
        obj = _Objective(channel, T)
        value, steps, sweeps, traj = _ascend(obj, inits[k], pattern, nA, nB, T, sweep_tol, max_sweeps, xatol)
        return StartResult(k, value, sweeps, traj, steps), obj.evals

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outs = list(pool.map(run, range(len(inits))))
    else:
        outs = [run(k) for k in range(len(inits))]
    results = [o[0] for o in outs]
    evals = sum(o[1] for o in outs)
    best = max(results, key=lambda r: (r.value, -r.start))
    full = [history_shape(nA, nB, t) + (nA,) for t in range(1, T + 1)]
    cert = InputDistribution(nA, nB, T, tuple(np.broadcast_to(s, full[t]) for t, s in enumerate(best.steps)),
                             pattern)
    return CapacityResult(best.value, cert, results, pattern, T, evals)


def per_use_directed_information(channel, input_dist):
    return directed_information(joint_measure(channel, input_dist)) / input_dist.horizon


# -- error exponent --------------------------------------------------------

@dataclass
class ExponentResult:
    nats: float
    bits: float
    rho: float
    rate_bits: float
    curve: np.ndarray = field(repr=False, default=None)


def error_exponent(channel, input_dist, rate_bits, rho_grid=101):
    """Inner maximization of the feedback random-coding exponent for one input law.

    Evaluates ``-rho R - (1/T) ln sum_b [sum_a p(a||b) p(b||a)^{1/(1+rho)}]^{1+rho}``
    on a grid over [0, 1] with R converted to nats. Returns the maximum in
    nats and bits and the maximizing rho.
    """
    if rate_bits < 0:
        raise ValueError("rate must be nonnegative")
    T = input_dist.horizon
    rhos = np.linspace(0.0, 1.0, rho_grid) if np.isscalar(rho_grid) else np.asarray(rho_grid, dtype=float)
    if np.any((rhos < 0) | (rhos > 1)):
        raise ValueError("rho grid must lie in [0, 1]")
    chan = channel_product(step_tables(channel, T), T)
    causal = input_dist.causal_prefix(T)[..., None]
    a_axes = tuple(range(0, 2 * T, 2))
    rate = rate_bits * math.log(2)
    vals = np.empty(rhos.size)
    for k, rho in enumerate(rhos):
        inner = (causal * chan ** (1.0 / (1.0 + rho))).sum(axis=a_axes)
        vals[k] = -rho * rate - math.log(float(np.sum(inner ** (1.0 + rho)))) / T
    k = int(np.argmax(vals))
    return ExponentResult(float(vals[k]), float(vals[k] / math.log(2)), float(rhos[k]), rate_bits, vals)
