"""Channel codes built from code functions, ML decoding and Monte-Carlo runs.

A code is a list of M code functions (encoding trees). Trees drawn from an
:class:`~feedcap.codefunctions.InputDistribution` are stored explicitly as
``(M, n_nodes)`` symbol arrays in the same node layout as
:class:`~feedcap.codefunctions.CodeFunctionSpace`. Trees drawn from an
exported :class:`~feedcap.mdp.PolicyRule` are materialized lazily along the
feedback histories that are actually visited, which keeps long horizons
cheap; each node's symbol depends only on ``(seed, message, node)``, so the
result does not depend on visiting order.

Every random draw comes from a counter-based Philox stream keyed by the
seed and a spawn key (message, trial or chain index), so parallel or
reordered runs reproduce serial ones exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codefunctions import CodeFunctionSpace, InputDistribution
from .kernels import GeneralChannelSpec, check_cap
from .mdp import PolicyRule, augment_receiver_csi, snap

TREE_NODE_CAP = 2**20
TIE_TOL = 1e-12
DENSITY_HORIZONS = (250, 500, 1000, 2000)


def substream(seed, *key):
    """Independent generator for ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))))


def _draw(row, u):
    """Inverse-CDF draw of one symbol from ``row`` with uniform ``u``."""
    c = np.cumsum(row)
    return int(min(np.searchsorted(c, u * c[-1], side="right"), len(row) - 1))


def effective_channel(spec, rule=None):
    """Channel the code actually runs on (outputs (b, s') for receiver-CSI rules)."""
    if isinstance(rule, PolicyRule) and rule.case == "receiver_csi":
        return augment_receiver_csi(spec)
    return spec


# -- codes -------------------------------------------------------------------

class ChannelCode:
    """M code functions of horizon T; ``trajectory(w, b)`` gives a^T."""

    M: int
    T: int
    nA: int
    nB: int
    decoder: str = "ml"

    def trajectory(self, w, b):
        raise NotImplementedError

    def symbol(self, w, b_prefix):
        """f_t[w](b^{t-1}) for ``t = len(b_prefix) + 1``."""
        return int(self.trajectory(w, list(b_prefix) + [0] * (self.T - len(b_prefix) - 1))[len(b_prefix)])


@dataclass(eq=False)
class TreeCode(ChannelCode):
    """Explicit trees: ``trees[w, node]``, nodes ordered by level then b-history."""

    trees: np.ndarray
    nA: int
    nB: int
    T: int
    decoder: str = "ml"

    @property
    def M(self):
        return len(self.trees)

    @property
    def space(self):
        return CodeFunctionSpace(self.nA, self.nB, self.T)

    def node(self, b_prefix):
        t = len(b_prefix) + 1
        off = (self.nB ** (t - 1) - 1) // (self.nB - 1) if self.nB > 1 else t - 1
        idx = 0
        for b in b_prefix:
            idx = idx * self.nB + int(b)
        return off + idx

    def trajectory(self, w, b):
        return np.array([self.trees[w, self.node(b[:t])] for t in range(self.T)], dtype=np.int64)

    def indices(self):
        """Index of each code function in the enumerated space F^T."""
        sp = self.space
        return np.array([sp.index_of(row) for row in self.trees], dtype=np.int64)


@dataclass(eq=False)
class PolicyCode(ChannelCode):
    """Lazily materialized trees driven by a policy rule and the state filter."""

    rule: PolicyRule
    channel: object  # effective MarkovChannelSpec
    M: int
    T: int
    seed: int
    decoder: str = "ml"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def nA(self):
        return self.rule.nA

    @property
    def nB(self):
        return self.rule.nB

    def _node(self, w, prefix):
        """(symbol, belief, MDP state) at node ``prefix`` of tree ``w``, built from cached ancestors."""
        key = (w, prefix)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if prefix:
            a_par, belief_par, state_par = self._node(w, prefix[:-1])
            b = prefix[-1]
            belief = _filter_or_keep(self.channel, belief_par, a_par, b)
            state = self.rule.step(state_par, b)
        else:
            belief = np.array(self.channel.initial)
            state = self.rule.initial
        idx = 0
        for v in prefix:
            idx = idx * self.nB + v
        u = float(substream(self.seed, w, len(prefix) + 1, idx).random())
        node = (_draw(self.rule.row(state, belief), u), belief, state)
        self._cache[key] = node
        return node

    def symbol(self, w, b_prefix):
        return self._node(w, tuple(int(v) for v in b_prefix))[0]

    def trajectory(self, w, b):
        b = tuple(int(v) for v in b)
        return np.array([self._node(w, b[:t])[0] for t in range(self.T)], dtype=np.int64)


def _filter_or_keep(spec, belief, a, b):
    num = (belief * spec.emission[:, a, b]) @ spec.transition[:, a, b, :]
    tot = num.sum()
    # off-path nodes (zero-probability outputs) keep the old belief; they are never reached
    return num / tot if tot > 0 else belief


def _visible_depth(step, t):
    """Number of leading outputs b_1..b_k that the rows of ``step`` actually depend on."""
    k = t - 1
    while k > 0 and (step.shape[2 * k - 1] == 1 or np.ptp(step, axis=2 * k - 1).max() == 0):
        k -= 1
    return k


def sample_code(rule, M, T=None, seed=0, channel=None, cap=TREE_NODE_CAP):
    """Draw M code functions from an input law or an exported policy rule.

    For an :class:`InputDistribution` every node's symbol at b^{t-1} is drawn
    from q(. | a^{t-1}, b^{t-1}) with a^{t-1} the tree's own earlier symbols
    along that history. Nodes are independent (the product law over
    histories) except that nodes agreeing on every output the rule reads
    reuse one draw; a feedback-free rule therefore yields codewords. For a
    :class:`PolicyRule`, ``channel`` (the spec) is needed to run the state
    filter along each node's history.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if isinstance(rule, PolicyRule):
        if channel is None:
            raise ValueError("policy rules need the channel spec")
        if T is None:
            raise ValueError("policy rules need a horizon T")
        return PolicyCode(rule, effective_channel(channel, rule), int(M), int(T), int(seed))
    if not isinstance(rule, InputDistribution):
        raise TypeError("rule must be an InputDistribution or PolicyRule")
    T = rule.horizon if T is None else T
    if T != rule.horizon:
        raise ValueError(f"input law has horizon {rule.horizon}, asked for {T}")
    nA, nB = rule.nA, rule.nB
    space = CodeFunctionSpace(nA, nB, T)
    check_cap("code-tree nodes per message", space.n_nodes, cap)
    trees = np.empty((M, space.n_nodes), dtype=np.int64)
    for w in range(M):
        u = substream(seed, w).random(space.n_nodes)
        level_a = np.zeros((1, 0), dtype=np.int64)  # a^{t-1} per node of the previous level
        for t in range(1, T + 1):
            n_level = nB ** (t - 1)
            off = space.node_offset(t)
            if t == 1:
                rows = rule.steps[0].reshape(-1, nA)[:1]
                hist_a = np.zeros((1, 0), dtype=np.int64)
            else:
                # node (b^{t-2}, b_{t-1}) inherits a^{t-1} from its parent b^{t-2}
                parent = np.repeat(np.arange(nB ** (t - 2)), nB)
                hist_a = level_a[parent]
                b_grid = np.indices((nB,) * (t - 1)).reshape(t - 1, -1).T
                coords = []
                for i in range(t - 1):
                    coords += [hist_a[:, i], b_grid[:, i]]
                table = np.broadcast_to(rule.steps[t - 1], (nA, nB) * (t - 1) + (nA,))
                rows = table[tuple(coords)]
            # nodes that agree on every output the rule reads share one uniform,
            # so a rule that ignores feedback yields codewords
            block = nB ** (t - 1 - _visible_depth(rule.steps[t - 1], t))
            ul = u[off + (np.arange(n_level) // block) * block]
            c = np.cumsum(rows, axis=1)
            sym = (ul[:, None] * c[:, -1:] >= c).sum(axis=1)
            sym = np.minimum(sym, nA - 1)
            trees[w, off:off + n_level] = sym
            level_a = np.concatenate([hist_a, sym[:, None]], axis=1)
    return TreeCode(trees, nA, nB, T)


def codeword_code(codewords, nB):
    """Feedback-free code: each row of ``codewords`` is used regardless of feedback."""
    cw = np.asarray(codewords, dtype=np.int64)
    M, T = cw.shape
    nA = int(cw.max()) + 1 if cw.size else 1
    space = CodeFunctionSpace(max(nA, 2), nB, T)
    trees = np.empty((M, space.n_nodes), dtype=np.int64)
    for t in range(1, T + 1):
        off = space.node_offset(t)
        trees[:, off:off + nB ** (t - 1)] = cw[:, t - 1:t]
    return TreeCode(trees, max(nA, 2), nB, T)


# -- channel simulation ------------------------------------------------------

def _is_general(channel):
    return isinstance(channel, GeneralChannelSpec)


def transmit(channel, code, w, seed=0, rng=None):
    """Send message ``w``; returns (a^T, b^T, s-path) with s-path of length T+1."""
    rng = substream(seed, w) if rng is None else rng
    T = code.T
    a = np.zeros(T, dtype=np.int64)
    b = np.zeros(T, dtype=np.int64)
    if _is_general(channel):
        for t in range(T):
            a[t] = code.symbol(w, b[:t])
            hist = tuple(v for pair in zip(a[:t], b[:t]) for v in pair) + (a[t],)
            b[t] = _draw(channel.steps[t][hist], rng.random())
        return a, b, np.zeros(0, dtype=np.int64)
    s = np.zeros(T + 1, dtype=np.int64)
    s[0] = _draw(channel.initial, rng.random())
    for t in range(T):
        a[t] = code.symbol(w, b[:t])
        b[t] = _draw(channel.emission[s[t], a[t]], rng.random())
        s[t + 1] = _draw(channel.transition[s[t], a[t], b[t]], rng.random())
    return a, b, s


def log_likelihood(channel, a, b):
    """log p(b^T || a^T) in nats (causal conditioning), -inf if impossible."""
    T = len(a)
    if _is_general(channel):
        total = 0.0
        for t in range(T):
            hist = tuple(v for pair in zip(a[:t], b[:t]) for v in pair) + (a[t],)
            p = channel.steps[t][hist][b[t]]
            if p <= 0:
                return -math.inf
            total += math.log(p)
        return total
    belief = np.array(channel.initial)
    total = 0.0
    for t in range(T):
        r = float(belief @ channel.emission[:, a[t], b[t]])
        if r <= 0:
            return -math.inf
        total += math.log(r)
        belief = _filter_or_keep(channel, belief, int(a[t]), int(b[t]))
    return total


@dataclass
class Decision:
    w: int
    scores: np.ndarray  # per-message log score (nats)
    multiplicity: np.ndarray  # |Upsilon| for each message's trajectory


def ml_decode(channel, code, b, return_scores=False):
    """Maximum-likelihood message estimate for observed outputs ``b``.

    Each message's trajectory a^T = f[w](b^{T-1}) is scored by the
    trajectory likelihood times the code-induced input probability
    Q(a_t | a^{t-1}, b^{t-1}), divided by the number of messages sharing
    that trajectory (uniform message prior). Ties go to the lowest index.
    """
    b = np.asarray(b, dtype=np.int64)
    M, T = code.M, code.T
    traj = np.array([code.trajectory(w, b) for w in range(M)], dtype=np.int64).reshape(M, T)
    # Q(a_t | a^{t-1}, b^{t-1}) from prefix coincidence counts among the M trajectories
    log_q = np.zeros(M)
    for t in range(T):
        _, inv_t, cnt_t = np.unique(traj[:, :t + 1], axis=0, return_inverse=True, return_counts=True)
        if t == 0:
            prev = np.full(M, M)
        else:
            _, inv_p, cnt_p = np.unique(traj[:, :t], axis=0, return_inverse=True, return_counts=True)
            prev = cnt_p[inv_p.ravel()]
        log_q += np.log(cnt_t[inv_t.ravel()] / prev)
    _, inv, mult = np.unique(traj, axis=0, return_inverse=True, return_counts=True)
    mult = mult[inv.ravel()]
    loglik = np.array([log_likelihood(channel, traj[w], b) for w in range(M)])
    scores = loglik + log_q - np.log(mult)
    best = np.max(scores)
    if not np.isfinite(best):
        w_hat = 0
    else:
        w_hat = int(np.flatnonzero(scores >= best - TIE_TOL)[0])
    if return_scores:
        return Decision(w_hat, scores, mult)
    return w_hat


# -- Monte-Carlo runs ----------------------------------------------------------

@dataclass
class SimulationReport:
    trials: int
    errors: int
    seed: int
    interval: tuple
    density: object = None

    @property
    def error_rate(self):
        return self.errors / self.trials if self.trials else 0.0

    def to_dict(self):
        d = {"trials": self.trials, "errors": self.errors, "error_rate": self.error_rate,
             "wilson95": list(self.interval), "seed": self.seed}
        if self.density is not None:
            d["density"] = self.density.to_dict()
        return d


def wilson_interval(errors, trials, alpha=0.05):
    from statsmodels.stats.proportion import proportion_confint

    if trials == 0:
        return (0.0, 1.0)
    lo, hi = proportion_confint(errors, trials, alpha=alpha, method="wilson")
    return (float(lo), float(hi))


def simulate(channel, code, trials, seed=0, collect_density=False, rule=None, chains=200,
             horizons=DENSITY_HORIZONS):
    """Uniform messages, transmission and ML decoding for ``trials`` runs.

    ``channel`` is the spec as given; codes from receiver-CSI rules run on
    the augmented channel automatically. With ``collect_density`` the
    policy ``rule`` is also run directly (no code) for long horizons.
    """
    eff = effective_channel(channel, getattr(code, "rule", None))
    errors = 0
    for trial in range(trials):
        rng = substream(seed, trial)
        w = int(rng.integers(code.M))
        _, b, _ = transmit(eff, code, w, rng=rng)
        if ml_decode(eff, code, b) != w:
            errors += 1
    density = None
    if collect_density:
        if rule is None:
            rule = getattr(code, "rule", None)
        if rule is None:
            raise ValueError("density collection needs a policy rule")
        density = density_chains(channel, rule, chains, max(horizons), seed, horizons)
    return SimulationReport(trials, errors, int(seed), wilson_interval(errors, trials), density)


@dataclass
class DensityReport:
    horizons: tuple
    values: np.ndarray  # (chains, len(horizons)) normalized density in bits
    state_visits: np.ndarray  # visits per MDP state over all chains and times
    state_density: np.ndarray  # mean per-step density at each state (nan if unvisited)

    @property
    def mean(self):
        return self.values.mean(axis=0)

    @property
    def variance(self):
        return self.values.var(axis=0, ddof=1) if len(self.values) > 1 else np.zeros(len(self.horizons))

    @property
    def standard_error(self):
        return np.sqrt(self.variance / len(self.values))

    def to_dict(self):
        return {"horizons": list(self.horizons), "chains": int(len(self.values)),
                "mean_bits": self.mean.tolist(), "variance": self.variance.tolist(),
                "standard_error": self.standard_error.tolist()}


def density_chains(channel, rule, chains, T, seed=0, horizons=None):
    """Normalized information density (1/T) sum_t i(a_t, pi_t; b_t | b^{t-1}) per chain.

    Each chain samples s_1, then per step: a_t from the rule's row at the
    tracked MDP state and the snapped filter belief, b_t and s_{t+1} from the
    channel. The per-step density is
    log2 r(b_t | pi_t, a_t) - log2 sum_{atom, a} u(atom, a | gamma_t) r(b_t | atom, a).
    """
    eff = effective_channel(channel, rule)
    horizons = tuple(sorted(h for h in (horizons or (T,)) if h <= T))
    nS, nA, nB = eff.shape
    atoms = rule.atoms
    R = np.einsum("js,sab->jab", atoms, eff.emission)
    D = rule.dense_rows()  # (n_states, n_atoms, A)
    pred_b = np.einsum("ij,ija,jab->ib", rule.states, D, R)  # receiver predictive per MDP state
    # per chain: one uniform for s_1, then (a_t, b_t, s_{t+1}) uniforms per step
    draws = [substream(seed, c).random(1 + 3 * T) for c in range(chains)]
    U0 = np.array([d[0] for d in draws])
    U = np.stack([d[1:].reshape(T, 3) for d in draws])
    belief = np.tile(np.asarray(eff.initial, dtype=np.float64), (chains, 1))
    state = np.full(chains, rule.initial, dtype=np.int64)
    c_init = np.cumsum(eff.initial)
    s = np.minimum((U0[:, None] >= c_init[None]).sum(axis=1), nS - 1)
    cum_dens = np.zeros(chains)
    out = np.empty((chains, len(horizons)))
    visits = np.zeros(len(rule.states))
    dens_sum = np.zeros(len(rule.states))
    h_pos = 0
    for t in range(T):
        atom, _ = snap(atoms, belief)
        rows = D[state, atom]
        a = np.minimum((U[:, t, 0:1] >= np.cumsum(rows, axis=1)).sum(axis=1), nA - 1)
        em = eff.emission[s, a]
        b = np.minimum((U[:, t, 1:2] >= np.cumsum(em, axis=1)).sum(axis=1), nB - 1)
        r_true = np.einsum("cs,cs->c", belief, eff.emission[:, a, b].T)
        step = np.log2(r_true) - np.log2(pred_b[state, b])
        cum_dens += step
        np.add.at(visits, state, 1)
        np.add.at(dens_sum, state, step)
        tr = eff.transition[s, a, b]
        s = np.minimum((U[:, t, 2:3] >= np.cumsum(tr, axis=1)).sum(axis=1), nS - 1)
        num = np.einsum("cs,cs,csz->cz", belief, eff.emission[:, a, b].T, eff.transition[:, a, b, :].transpose(1, 0, 2))
        belief = num / num.sum(axis=1, keepdims=True)
        nxt = rule.next_state[state, b]
        state = np.where(nxt >= 0, nxt, state)
        if h_pos < len(horizons) and t + 1 == horizons[h_pos]:
            out[:, h_pos] = cum_dens / (t + 1)
            h_pos += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        state_density = np.where(visits > 0, dens_sum / np.maximum(visits, 1), np.nan)
    return DensityReport(horizons, out, visits, state_density)

