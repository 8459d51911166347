"""Code-function spaces, consistent interconnection measures and good distributions.

A code function f^T is a tree: ``f_t`` maps every output history b^{t-1}
to an input symbol. Trees are stored flat: node ``(t, b^{t-1})`` sits at
``node_offset(t) + ravel(b^{t-1})``, and the space is indexed
lexicographically over the flat node table (node 0 most significant).

Histories use an interleaved axis layout throughout: a table indexed by
(a^{t-1}, b^{t-1}) and then a_t has axes ``a_1, b_1, ..., a_{t-1}, b_{t-1}, a_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import CapExceeded
from .kernels import (
    DEFAULT_CAP_CODEFUNCTIONS,
    MarkovChannelSpec,
    ROW_TOL,
    check_cap,
    enumeration_cap,
    history_shape,
    validate_kernel,
)

PATTERNS = ("full", "none")


def parse_pattern(pattern):
    """Normalize a feedback pattern to ``('full',)``, ``('none',)`` or ``('delay', k)``."""
    if isinstance(pattern, tuple):
        return pattern
    p = str(pattern)
    if p in PATTERNS:
        return (p,)
    if p.startswith("delay"):
        k = int(p.split(":", 1)[1])
        if k < 1:
            raise ValueError("delay must be >= 1")
        return ("full",) if k == 1 else ("delay", k)
    raise ValueError(f"unknown feedback pattern {pattern!r}")


def pattern_name(pattern):
    p = parse_pattern(pattern)
    return p[0] if len(p) == 1 else f"delay:{p[1]}"


def visible_outputs(pattern, t):
    """Number of leading outputs b_1..b_k the encoder may use at time t."""
    p = parse_pattern(pattern)
    if p[0] == "full":
        return t - 1
    if p[0] == "none":
        return 0
    return max(t - p[1], 0)


# -- input distributions ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class InputDistribution:
    """Causal input law {p(a_t | a^{t-1}, b^{t-1})}, one dense table per step.

    ``steps[t-1]`` has interleaved shape ``(A, B) * (t-1) + (A,)``.
    ``undefined`` optionally marks rows that were filled in uniformly because
    their history has zero probability.
    """

    nA: int
    nB: int
    horizon: int
    steps: tuple
    pattern: str = "full"
    undefined: tuple | None = None

    def __post_init__(self):
        steps = []
        for t, table in enumerate(self.steps, start=1):
            shape = history_shape(self.nA, self.nB, t) + (self.nA,)
            arr = np.broadcast_to(np.asarray(table, dtype=np.float64), shape).copy()
            report = validate_kernel(arr, shape)
            if not report.ok:
                row, msg = report.defects[0]
                raise ValueError(f"input step {t} row {list(row)}: {msg}")
            arr /= arr.sum(axis=-1, keepdims=True)
            arr.setflags(write=False)
            steps.append(arr)
        if len(steps) != self.horizon:
            raise ValueError("number of step tables must equal the horizon")
        object.__setattr__(self, "steps", tuple(steps))
        object.__setattr__(self, "pattern", pattern_name(self.pattern))
        dev = self.pattern_violation()
        if dev > ROW_TOL:
            raise ValueError(f"rows vary with hidden outputs under pattern {self.pattern} (by {dev:.3g})")

    def pattern_violation(self, pattern=None):
        """Largest variation of any row across outputs the pattern hides."""
        pattern = self.pattern if pattern is None else pattern
        worst = 0.0
        for t, table in enumerate(self.steps, start=1):
            k = visible_outputs(pattern, t)
            for i in range(k, t - 1):
                axis = 2 * i + 1
                ref = np.take(table, [0], axis=axis)
                worst = max(worst, float(np.max(np.abs(table - ref))))
        return worst

    def is_feedback_free(self, tol=1e-12):
        return self.pattern_violation("none") <= tol

    def causal_prefix(self, t):
        """p(a^t || b^{t-1}) = prod_{i<=t} p(a_i | a^{i-1}, b^{i-1}), layout (A,B)*(t-1)+(A,)."""
        cp = self.steps[0]
        for i in range(2, t + 1):
            cp = cp[..., None, None] * self.steps[i - 1]
        return cp

    def to_dict(self):
        return {"version": 1, "horizon": self.horizon, "alphabets": {"A": self.nA, "B": self.nB},
                "pattern": self.pattern, "steps": [s.tolist() for s in self.steps]}

    @classmethod
    def from_dict(cls, data, nA=None, nB=None):
        T = int(data["horizon"])
        alph = data.get("alphabets", {})
        nA = int(alph.get("A", nA))
        nB = int(alph.get("B", nB))
        pattern = data.get("pattern", "full")
        if "iid" in data:
            return iid_input(data["iid"], T, nB)
        return cls(nA, nB, T, tuple(data["steps"]), pattern)


def iid_input(row, T, nB):
    row = np.asarray(row, dtype=np.float64)
    nA = row.size
    steps = tuple(np.broadcast_to(row, history_shape(nA, nB, t) + (nA,)) for t in range(1, T + 1))
    return InputDistribution(nA, nB, T, steps, "none")


def random_input(rng, nA, nB, T, pattern="full", concentration=1.0):
    """Random causal input law honouring ``pattern`` (Dirichlet rows)."""
    steps = []
    for t in range(1, T + 1):
        k = visible_outputs(pattern, t)
        shape = list(history_shape(nA, nB, t)) + [nA]
        reduced = list(shape)
        for i in range(k, t - 1):
            reduced[2 * i + 1] = 1
        rows = rng.dirichlet(np.full(nA, concentration), size=tuple(reduced[:-1]))
        steps.append(np.broadcast_to(rows, shape))
    return InputDistribution(nA, nB, T, tuple(steps), pattern_name(pattern))


def history_coords(index, t, with_input=True):
    """Split an interleaved index tuple into (a^t, b^{t-1}) lists."""
    index = [int(v) for v in index]
    a = index[0::2]
    b = index[1::2]
    return (a if with_input else a[:-1]), b


# -- code-function spaces --------------------------------------------------

@dataclass(frozen=True, eq=False)
class CodeFunctionSpace:
    """Lexicographically indexed space F^T of all code functions."""

    nA: int
    nB: int
    horizon: int

    @property
    def n_nodes(self):
        return sum(self.nB ** (t - 1) for t in range(1, self.horizon + 1))

    def node_offset(self, t):
        return sum(self.nB ** (i - 1) for i in range(1, t))

    @property
    def size(self):
        return self.nA ** self.n_nodes

    @cached_property
    def tables(self):
        """(size, n_nodes) array of input symbols; row i is code function i."""
        idx = np.arange(self.size, dtype=np.int64)
        n = self.n_nodes
        powers = self.nA ** np.arange(n - 1, -1, -1, dtype=np.int64)
        return ((idx[:, None] // powers[None, :]) % self.nA).astype(np.int64)

    def index_of(self, table_row):
        n = self.n_nodes
        powers = self.nA ** np.arange(n - 1, -1, -1, dtype=np.int64)
        return int(np.dot(np.asarray(table_row, dtype=np.int64), powers))

    def step_values(self, t, tables=None):
        """f_t(b^{t-1}) for every function: shape (n_f,) + (B,) * (t-1)."""
        tables = self.tables if tables is None else tables
        off = self.node_offset(t)
        vals = tables[:, off:off + self.nB ** (t - 1)]
        return vals.reshape((tables.shape[0],) + (self.nB,) * (t - 1))

    def trajectories(self, tables=None):
        """a_t produced by each function along each b^{T-1}: (n_f,) + (B,)*(T-1) + (T,)."""
        tables = self.tables if tables is None else tables
        T = self.horizon
        full = (tables.shape[0],) + (self.nB,) * (T - 1)
        out = np.empty(full + (T,), dtype=np.int64)
        for t in range(1, T + 1):
            vals = self.step_values(t, tables)
            vals = vals.reshape(vals.shape + (1,) * (T - t))
            out[..., t - 1] = np.broadcast_to(vals, full)
        return out

    def prefix_index(self, t):
        """Map code-function index -> index of its prefix f^t."""
        later = self.n_nodes - self.node_offset(t + 1)
        return np.arange(self.size, dtype=np.int64) // (self.nA ** later)

    def evaluate(self, i, b_hist):
        """f_t(b^{t-1}) for function ``i`` with ``t = len(b_hist) + 1``."""
        t = len(b_hist) + 1
        node = self.node_offset(t) + (int(np.ravel_multi_index(tuple(b_hist), (self.nB,) * len(b_hist)))
                                      if b_hist else 0)
        return int(self.tables[i, node])


def enumerate_codefunctions(nA, nB, T, cap=None):
    cap = enumeration_cap(DEFAULT_CAP_CODEFUNCTIONS) if cap is None else cap
    space = CodeFunctionSpace(nA, nB, T)
    n_nodes = space.n_nodes
    # exact integer size; avoid materializing huge numbers of rows
    size = nA ** n_nodes
    if size > cap:
        raise CapExceeded("code-function space", size, cap)
    return space


@dataclass(frozen=True, eq=False)
class CodeFunctionDistribution:
    space: CodeFunctionSpace
    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        if m.shape != (self.space.size,):
            raise ValueError("mass must cover the whole enumerated space")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses must be nonnegative and sum to 1 (sum {m.sum():.15g})")
        m = m / m.sum()
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @property
    def horizon(self):
        return self.space.horizon


def dirac_distribution(space, index):
    m = np.zeros(space.size)
    m[index] = 1.0
    return CodeFunctionDistribution(space, m)


def upsilon_tables(space, mass):
    """P_F(Upsilon^t(b^{t-1}, a^t)) for t = 1..T, layout (A,B)*(t-1)+(A,).

    Upsilon^t(b^{t-1}, a^t) is the set of code functions that emit a^t when
    fed back b^{t-1}.
    """
    nA, nB, T = space.nA, space.nB, space.horizon
    traj = space.trajectories()
    out = []
    for t in range(1, T + 1):
        # restrict to b^{t-1}; later outputs fixed at 0 (irrelevant for a^t)
        sl = (slice(None),) + (slice(None),) * (t - 1) + (0,) * (T - t) + (slice(0, t),)
        a = traj[sl]  # (n_f,) + (B,)*(t-1) + (t,)
        shape = history_shape(nA, nB, t) + (nA,)
        n_f = a.shape[0]
        bgrid = np.indices((nB,) * (t - 1)).reshape(t - 1, -1) if t > 1 else np.zeros((0, 1), dtype=int)
        a_flat = a.reshape(n_f, -1, t)  # (n_f, nb_hist, t)
        coords = []
        for i in range(t):
            coords.append(a_flat[:, :, i])
            if i < t - 1:
                coords.append(np.broadcast_to(bgrid[i][None, :], a_flat.shape[:2]))
        flat = np.ravel_multi_index(tuple(coords), shape)
        weights = np.broadcast_to(mass[:, None], flat.shape)
        tab = np.bincount(flat.ravel(), weights=weights.ravel(), minlength=int(np.prod(shape)))
        out.append(tab.reshape(shape))
    return out


# -- measures --------------------------------------------------------------

def _place(arr, positions, ndim):
    """Reshape ``arr`` (axes in increasing ``positions`` order) for broadcasting into ``ndim`` axes."""
    shape = [1] * ndim
    for p, n in zip(positions, arr.shape):
        shape[p] = n
    return arr.reshape(shape)


@dataclass(frozen=True, eq=False)
class ConsistentMeasure:
    """Joint table Q over (f, [s_t,] a_t, b_t for t = 1..T).

    Axis 0 is the code-function index. General channels use per-step axes
    ``(a_t, b_t)``; Markov channels ``(s_t, a_t, b_t)``.
    """

    space: CodeFunctionSpace
    table: np.ndarray
    markov: bool
    nS: int = 1

    @property
    def horizon(self):
        return self.space.horizon

    @property
    def per_step(self):
        return 3 if self.markov else 2

    def fab(self):
        """Marginal over states: (n_f,) + (A, B) * T."""
        if not self.markov:
            return self.table
        T = self.horizon
        return self.table.sum(axis=tuple(1 + 3 * i for i in range(T)))

    def ab(self):
        return self.fab().sum(axis=0)

    def fb(self):
        T = self.horizon
        return self.fab().sum(axis=tuple(1 + 2 * i for i in range(T)))

    def code_marginal(self):
        return self.table.reshape(self.table.shape[0], -1).sum(axis=1)


def build_consistent_measure(channel, dist, cap=None):
    """Enumerate Q(f, [s,] a, b) from the raw channel kernels (no filtering)."""
    space = dist.space
    nA, nB, T = space.nA, space.nB, space.horizon
    markov = isinstance(channel, MarkovChannelSpec)
    if markov:
        nS = channel.S.size
        if (channel.A.size, channel.B.size) != (nA, nB):
            raise ValueError("alphabet mismatch between channel and code functions")
    else:
        nS = 1
        if channel.horizon < T or (channel.A.size, channel.B.size) != (nA, nB):
            raise ValueError("channel horizon/alphabet mismatch")
    per = 3 if markov else 2
    ndim = 1 + per * T
    cells = space.size * (nS * nA * nB) ** T
    check_cap("consistent measure", cells, cap)

    def pos(kind, t):
        base = 1 + per * (t - 1)
        if markov:
            return base + {"s": 0, "a": 1, "b": 2}[kind]
        return base + {"a": 0, "b": 1}[kind]

    Q = _place(np.asarray(dist.mass), [0], ndim)
    if markov:
        Q = Q * _place(channel.initial, [pos("s", 1)], ndim)
    for t in range(1, T + 1):
        vals = space.step_values(t)  # (n_f,) + (B,)*(t-1)
        delta = (vals[..., None] == np.arange(nA)).astype(np.float64)
        positions = [0] + [pos("b", i) for i in range(1, t)] + [pos("a", t)]
        Q = Q * _place(delta, positions, ndim)
        if markov:
            Q = Q * _place(channel.emission, [pos("s", t), pos("a", t), pos("b", t)], ndim)
            if t < T:
                Q = Q * _place(channel.transition, [pos("s", t), pos("a", t), pos("b", t), pos("s", t + 1)], ndim)
        else:
            positions = [pos(k, i) for i in range(1, t) for k in ("a", "b")] + [pos("a", t), pos("b", t)]
            Q = Q * _place(channel.steps[t - 1], positions, ndim)
    full = (space.size,) + ((nS, nA, nB) if markov else (nA, nB)) * T
    Q = np.broadcast_to(Q, full).copy()
    return ConsistentMeasure(space, Q, markov, nS)


def enumerate_markov_joint(spec, input_dist, final_state=True, cap=None):
    """Brute-force Q(s_1, a_1, b_1, ..., s_T, a_T, b_T[, s_{T+1}]) from raw kernels."""
    nS, nA, nB = spec.shape
    T = input_dist.horizon
    check_cap("markov joint", (nS * nA * nB) ** T * nS, cap)
    ndim = 3 * T + (1 if final_state else 0)
    Q = _place(spec.initial, [0], ndim)
    for t in range(1, T + 1):
        s, a, b = 3 * (t - 1), 3 * (t - 1) + 1, 3 * (t - 1) + 2
        hist = [p for i in range(1, t) for p in (3 * (i - 1) + 1, 3 * (i - 1) + 2)]
        Q = Q * _place(input_dist.steps[t - 1], hist + [a], ndim)
        Q = Q * _place(spec.emission, [s, a, b], ndim)
        if t < T or final_state:
            Q = Q * _place(spec.transition, [s, a, b, s + 3], ndim)
    full = (nS, nA, nB) * T + ((nS,) if final_state else ())
    return np.broadcast_to(Q, full).copy()


# -- induced and good distributions ---------------------------------------

def induced_input_distribution(measure):
    """Q(a_t | a^{t-1}, b^{t-1}) from Upsilon-set ratios.

    Rows on histories with zero probability under ``measure`` are set
    uniform and flagged in ``undefined``.
    """
    space = measure.space
    nA, nB, T = space.nA, space.nB, space.horizon
    ups = upsilon_tables(space, measure.code_marginal())
    ab = measure.ab()
    steps, undefined = [], []
    for t in range(1, T + 1):
        if t == 1:
            rows = ups[0] / ups[0].sum()
            dead = np.zeros((), dtype=bool)
        else:
            denom = ups[t - 2][..., None]  # (A, B) * (t-1)
            # Q(a^{t-1}, b^{t-1}): marginalize later steps of the (a, b) table
            hist_mass = ab.sum(axis=tuple(range(2 * (t - 1), 2 * T)))
            dead = (hist_mass <= 0) | (denom <= 0)
            with np.errstate(invalid="ignore", divide="ignore"):
                rows = ups[t - 1] / denom[..., None]
            rows = np.where(dead[..., None], 1.0 / nA, rows)
        steps.append(rows)
        undefined.append(dead)
    return InputDistribution(nA, nB, T, tuple(steps), "full", tuple(undefined))


def good_distribution(input_dist, space=None):
    """Product construction: p(f_t | f^{t-1}) = prod over b^{t-1} of p(f_t(b^{t-1}) | f^{t-1}(b^{t-2}), b^{t-1})."""
    nA, nB, T = input_dist.nA, input_dist.nB, input_dist.horizon
    space = enumerate_codefunctions(nA, nB, T) if space is None else space
    traj = space.trajectories()
    n_f = space.size
    logmass = np.zeros(n_f)
    zero = np.zeros(n_f, dtype=bool)
    for t in range(1, T + 1):
        sl = (slice(None),) + (slice(None),) * (t - 1) + (0,) * (T - t) + (slice(0, t),)
        a = traj[sl].reshape(n_f, -1, t)
        nb = a.shape[1]
        bgrid = np.indices((nB,) * (t - 1)).reshape(t - 1, -1) if t > 1 else np.zeros((0, 1), dtype=int)
        coords = []
        for i in range(t):
            coords.append(a[:, :, i])
            if i < t - 1:
                coords.append(np.broadcast_to(bgrid[i][None, :], (n_f, nb)))
        p = input_dist.steps[t - 1][tuple(coords)]  # (n_f, nb)
        zero |= np.any(p <= 0, axis=1)
        with np.errstate(divide="ignore"):
            logmass += np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0).sum(axis=1)
    mass = np.where(zero, 0.0, np.exp(logmass))
    return CodeFunctionDistribution(space, mass / mass.sum())


def codeword_distribution(input_dist, space=None):
    """Mass only on feedback-independent code functions (codewords)."""
    if not input_dist.is_feedback_free():
        raise ValueError("codeword construction needs a feedback-free input distribution")
    nA, nB, T = input_dist.nA, input_dist.nB, input_dist.horizon
    space = enumerate_codefunctions(nA, nB, T) if space is None else space
    mass = np.ones(space.size)
    const = np.ones(space.size, dtype=bool)
    for t in range(1, T + 1):
        vals = space.step_values(t).reshape(space.size, -1)
        const &= np.all(vals == vals[:, :1], axis=1)
    a = np.stack([space.step_values(t).reshape(space.size, -1)[:, 0] for t in range(1, T + 1)], axis=1)
    for t in range(1, T + 1):
        coords = []
        for i in range(t):
            coords.append(a[:, i])
            if i < t - 1:
                coords.append(np.zeros(space.size, dtype=int))
        mass *= input_dist.steps[t - 1][tuple(coords)]
    mass = np.where(const, mass, 0.0)
    return CodeFunctionDistribution(space, mass / mass.sum())


@dataclass
class GoodReport:
    ok: bool
    max_deviation: float
    worst: tuple | None
    fixed_point_deviation: float
    tol: float = 1e-12
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok


def verify_good(dist, input_dist, tol=1e-12):
    """Exhaustively check P_F(Upsilon^t(b^{t-1}, a^t)) = p(a^t || b^{t-1}).

    Also checks that the Upsilon-ratio induced rows reproduce the input rows
    wherever the ratio is defined.
    """
    space = dist.space
    T = space.horizon
    ups = upsilon_tables(space, dist.mass)
    worst, worst_at = 0.0, None
    fixed = 0.0
    for t in range(1, T + 1):
        target = input_dist.causal_prefix(t)
        dev = np.abs(ups[t - 1] - target)
        k = np.unravel_index(int(np.argmax(dev)), dev.shape)
        if dev[k] > worst:
            a, b = history_coords(k, t)
            worst, worst_at = float(dev[k]), (t, a, b, float(dev[k]))
        if t > 1:
            denom = ups[t - 2][..., None, None]
            ok_rows = np.broadcast_to(denom > 0, ups[t - 1].shape)
            with np.errstate(invalid="ignore", divide="ignore"):
                rows = ups[t - 1] / denom
            d = np.abs(np.where(ok_rows, rows - input_dist.steps[t - 1], 0.0))
        else:
            d = np.abs(ups[0] - input_dist.steps[0])
        fixed = max(fixed, float(d.max()))
    ok = worst <= tol and fixed <= max(tol, 1e-10)
    return GoodReport(ok, worst, worst_at, fixed, tol)
