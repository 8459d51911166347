"""Average-cost MDP formulation of feedback capacity for Markov channels.

The MDP state is a distribution ("meta-belief") over a finite set of
*atoms*, each atom being a belief over channel states. The supported cases
only differ in which atoms and meta-beliefs are enumerated:

==================  =======================  ===============================
case                atoms                    MDP states
==================  =======================  ===============================
state_from_output   Dirac beliefs on S       Dirac meta-beliefs (= S)
receiver_csi        as above, on the channel with outputs (b, s')
belief_from_output  simplex grid on P(S)     Dirac meta-beliefs (= grid)
state_from_io       Dirac beliefs on S       simplex grid over atoms (= P(S))
state_from_input    Dirac beliefs on S       simplex grid over atoms (= P(S))
general             simplex grid on P(S)     simplex grid over atoms
==================  =======================  ===============================

A control action at a state assigns an input row u(a | atom) to every atom
in the state's support, so the joint u(atom, a) always has the state as its
atom-marginal. Successor beliefs and meta-beliefs are snapped to the
enumerated sets; the snap displacement is recorded.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import CaseMismatch, FlagUnsupported, NotConverged, NotErgodic
from .filtering import belief_tables
from .kernels import (
    Alphabet,
    MarkovChannelSpec,
    check_cap,
    enumeration_cap,
    mutual_information,
)

CASES = ("general", "state_from_io", "state_from_input", "state_from_output", "receiver_csi",
         "belief_from_output")
CASE_ALIASES = {"state_io": "state_from_io", "state_in": "state_from_input", "state_out": "state_from_output",
                "csi": "receiver_csi", "belief_out": "belief_from_output"}
DEFAULT_ACTION_GRID = 32
DEFAULT_GRID = 16
DEFAULT_EPS = 1e-9
DEFAULT_MAX_ITERS = 10**5
TIE_TOL = 1e-12
EVAL_CHUNK_CELLS = 4_000_000


# -- simplex grids ---------------------------------------------------------

def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def simplex_grid(dim, resolution):
    """All points of the probability simplex in R^dim with coordinates k/resolution.

    Ordered lexicographically by decreasing first coordinate, so index 0 is
    the first vertex.
    """
    pts = np.array(list(_compositions(int(resolution), int(dim))), dtype=np.float64)
    return pts / resolution


def grid_size(dim, resolution):
    return math.comb(resolution + dim - 1, dim - 1)


def snap(points, x):
    """Nearest grid point(s) in L1 distance, lowest index on ties.

    ``x`` is one vector or a stack of vectors; returns ``(index, displacement)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    idx = np.empty(len(xs), dtype=np.int64)
    disp = np.empty(len(xs))
    chunk = max(1, 2_000_000 // max(points.size, 1))
    for lo in range(0, len(xs), chunk):
        d = np.abs(xs[lo:lo + chunk, None, :] - points[None, :, :]).sum(axis=2)
        d = np.round(d, 12)
        k = np.argmin(d, axis=1)
        idx[lo:lo + chunk] = k
        disp[lo:lo + chunk] = d[np.arange(len(k)), k]
    if single:
        return int(idx[0]), float(disp[0])
    return idx, disp


@dataclass(frozen=True, eq=False)
class BeliefGrid:
    dim: int
    resolution: int
    points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "points", simplex_grid(self.dim, self.resolution))

    def __len__(self):
        return len(self.points)

    def index(self, point):
        k, d = snap(self.points, point)
        if d > 1e-12:
            raise KeyError("not a grid point")
        return k

    def snap(self, x):
        return snap(self.points, x)


# -- channel helpers -------------------------------------------------------

def augment_receiver_csi(spec):
    """Channel whose output is (b, s') so the next state is visible to the receiver.

    Output index is ``b * |S| + s'``.
    """
    nS, nA, nB = spec.shape
    emission = np.einsum("sab,sabz->sabz", spec.emission, spec.transition).reshape(nS, nA, nB * nS)
    nxt = np.tile(np.arange(nS), nB)
    transition = np.zeros((nS, nA, nB * nS, nS))
    transition[:, :, np.arange(nB * nS), nxt] = 1.0
    return MarkovChannelSpec(spec.S, spec.A, Alphabet(nB * nS, f"{spec.B.label}x{spec.S.label}"), spec.initial,
                             transition, emission, frozenset(), name=f"{spec.name}+csi")


def _phi(spec, belief, a, b):
    num = (belief * spec.emission[:, a, b]) @ spec.transition[:, a, b, :]
    tot = num.sum()
    return num / tot if tot > 0 else None


# -- state spaces ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StateSpace:
    """Atoms, enumerated MDP states and precomputed atom successors for one case."""

    case: str
    spec: MarkovChannelSpec  # effective channel (augmented for receiver_csi)
    atoms: np.ndarray  # (n_atoms, S)
    states: np.ndarray  # (n_states, n_atoms) meta-beliefs
    dirac_states: bool
    next_atom: np.ndarray  # (n_atoms, A, B), -1 where r(b | atom, a) = 0
    atom_disp: np.ndarray  # (n_atoms, A, B)
    R: np.ndarray  # r(b | atom, a): (n_atoms, A, B)
    grid: int
    meta_grid: int | None = None

    @property
    def n_states(self):
        return len(self.states)

    def support(self, i):
        return np.flatnonzero(self.states[i] > 0)

    def snap_meta(self, meta):
        """Snap meta-belief(s) over atoms to MDP states."""
        meta = np.atleast_2d(meta)
        if self.dirac_states:
            m = np.round(meta, 12)
            k = np.argmax(m, axis=1)
            disp = 2.0 * (1.0 - meta[np.arange(len(k)), k])
            return k, np.maximum(disp, 0.0)
        return snap(self.states, meta)

    def initial_state(self):
        """MDP state closest to the point mass on the channel's initial belief."""
        atom, _ = snap(self.atoms, self.spec.initial)
        meta = np.zeros(len(self.atoms))
        if self.dirac_states or self.case in ("general",):
            meta[atom] = 1.0
        else:
            meta = np.array(self.spec.initial)
        k, _ = self.snap_meta(meta)
        return int(k[0])


def resolve_case(spec, case="auto", experimental=False):
    case = CASE_ALIASES.get(case, case)
    flags = spec.flags
    if case == "auto":
        for cand in ("receiver_csi", "state_from_output", "belief_from_output", "state_from_input", "state_from_io"):
            if cand in flags:
                return cand
        if spec.S.size == 1:
            return "state_from_output"
        if experimental:
            return "general"
        raise FlagUnsupported("no structure flag supports a reduced solver; pass experimental=True for the general case")
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    if case == "general":
        if not experimental:
            raise FlagUnsupported("the general meta-belief case is experimental; pass experimental=True")
        return case
    ok = case in flags or spec.S.size == 1
    if case == "state_from_input" and "state_from_io" in flags and "state_from_input" in flags:
        ok = True
    if not ok:
        raise FlagUnsupported(f"spec does not declare flag {case!r}")
    return case


def make_state_space(spec, case="auto", grid=DEFAULT_GRID, meta_grid=4, experimental=False):
    case = resolve_case(spec, case, experimental)
    eff = augment_receiver_csi(spec) if case == "receiver_csi" else spec
    nS, nA, nB = eff.shape
    if case in ("state_from_output", "receiver_csi", "state_from_io", "state_from_input"):
        atoms = np.eye(nS)
    else:
        atoms = simplex_grid(nS, grid)
    if case in ("state_from_output", "receiver_csi", "belief_from_output"):
        states = np.eye(len(atoms))
        dirac = True
    elif case in ("state_from_io", "state_from_input"):
        states = simplex_grid(len(atoms), grid)
        dirac = False
    else:
        if nS != 2:
            raise FlagUnsupported("the general case supports |S| = 2 only")
        if meta_grid > 8:
            raise FlagUnsupported("the general case supports meta-grid resolution <= 8 only")
        check_cap("meta-belief states", grid_size(len(atoms), meta_grid))
        states = simplex_grid(len(atoms), meta_grid)
        dirac = False
    n_atoms = len(atoms)
    R = np.einsum("js,sab->jab", atoms, eff.emission)
    next_atom = np.full((n_atoms, nA, nB), -1, dtype=np.int64)
    disp = np.zeros((n_atoms, nA, nB))
    for j, a, b in itertools.product(range(n_atoms), range(nA), range(nB)):
        nxt = _phi(eff, atoms[j], a, b)
        if nxt is None:
            continue
        k, d = snap(atoms, nxt)
        next_atom[j, a, b] = k
        disp[j, a, b] = d
    return StateSpace(case, eff, atoms, states, dirac, next_atom, disp, R, grid,
                      meta_grid if case == "general" else None)


# -- cost and dynamics -----------------------------------------------------

def cost(R, u):
    """Running cost: I((atom, A); B) in bits for joint u(atom, a) and r(b | atom, a).

    ``R`` has shape (n_atoms, A, B) and ``u`` shape (n_atoms, A).
    """
    joint = np.asarray(u)[..., None] * R
    return mutual_information(joint.reshape(-1, R.shape[-1]))


def _evaluate(space, i, rows):
    """Cost, successor states and masses for a batch of actions at state ``i``.

    ``rows`` has shape (n_act, n_support, A). Returns cost (n_act,),
    succ (n_act, B), prob (n_act, B), meta_disp (n_act, B).
    """
    J = space.support(i)
    gamma = space.states[i, J]
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 3 or rows.shape[1] != len(J) or rows.shape[2] != space.spec.A.size:
        raise CaseMismatch(f"action rows shape {rows.shape} incompatible with state {i} support of size {len(J)}")
    R = space.R[J]  # (J, A, B)
    joint = gamma[None, :, None, None] * rows[..., None] * R[None]
    pb = joint.sum(axis=(1, 2))  # (n, B)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = R[None] / pb[:, None, None, :]
        terms = np.where(joint > 0, joint * np.log2(np.where(joint > 0, ratio, 1.0)), 0.0)
    c = terms.sum(axis=(1, 2, 3))
    n_atoms = len(space.atoms)
    nxt = space.next_atom[J]  # (J, A, B)
    onehot = np.zeros(nxt.shape + (n_atoms,))
    valid = nxt >= 0
    jj, aa, bb = np.nonzero(valid)
    onehot[jj, aa, bb, nxt[valid]] = 1.0
    meta = np.einsum("njab,jabk->nbk", joint, onehot)
    with np.errstate(divide="ignore", invalid="ignore"):
        meta = np.where(pb[..., None] > 0, meta / pb[..., None], 0.0)
    n, nB = pb.shape
    succ = np.zeros((n, nB), dtype=np.int64)
    mdisp = np.zeros((n, nB))
    live = pb > 0
    if live.any():
        k, d = space.snap_meta(meta[live])
        succ[live] = k
        mdisp[live] = d
    return c, succ, np.where(live, pb, 0.0), mdisp


@dataclass
class Transition:
    distribution: np.ndarray  # over MDP states
    per_output: list  # (b, mass, successor, meta displacement)
    atom_displacement: float


def dynamics(space, state, rows):
    """Next-state distribution for one action ``rows`` (support x A) at ``state``."""
    rows = np.asarray(rows, dtype=np.float64)[None]
    _, succ, prob, mdisp = _evaluate(space, state, rows)
    dist = np.zeros(space.n_states)
    np.add.at(dist, succ[0], prob[0])
    J = space.support(state)
    per_b = [(b, float(prob[0, b]), int(succ[0, b]), float(mdisp[0, b])) for b in range(prob.shape[1])]
    live = space.next_atom[J] >= 0
    adisp = float(space.atom_disp[J][live].max()) if live.any() else 0.0
    return Transition(dist, per_b, adisp)


# -- instances -------------------------------------------------------------

@dataclass(eq=False)
class MDPInstance:
    space: StateSpace
    rows: list  # per state: (n_act, n_support, A)
    cost: np.ndarray  # (N,)
    succ: np.ndarray  # (N, B)
    prob: np.ndarray  # (N, B)
    meta_disp: np.ndarray  # (N, B)
    offsets: np.ndarray  # (n_states,) start of each state's action block
    action_grid: int

    @property
    def case(self):
        return self.space.case

    @property
    def n_states(self):
        return self.space.n_states

    @property
    def n_actions(self):
        return len(self.cost)

    def state_slice(self, i):
        hi = self.offsets[i + 1] if i + 1 < len(self.offsets) else len(self.cost)
        return slice(int(self.offsets[i]), int(hi))

    def joint_action(self, i, k):
        """u(atom, a) over all atoms for local action k at state i."""
        J = self.space.support(i)
        u = np.zeros((len(self.space.atoms), self.space.spec.A.size))
        u[J] = self.space.states[i, J][:, None] * self.rows[i][k]
        return u

    def next_rows(self):
        """Dense next-state rows (N, n_states)."""
        P = np.zeros((self.n_actions, self.n_states))
        np.add.at(P, (np.repeat(np.arange(self.n_actions), self.succ.shape[1]), self.succ.ravel()),
                  self.prob.ravel())
        return P

    def diagnostics(self):
        live = self.prob > 0
        atom = self.space.atom_disp[self.space.next_atom >= 0]
        return {
            "states": self.n_states,
            "actions": self.n_actions,
            "meta_snap_max": float(self.meta_disp[live].max()) if live.any() else 0.0,
            "meta_snap_mean": float((self.meta_disp * self.prob).sum() / max(self.prob.sum(), 1e-300)),
            "atom_snap_max": float(atom.max()) if atom.size else 0.0,
        }


def _assemble(space, rows_per_state, action_grid):
    costs, succs, probs, disps, offsets = [], [], [], [], []
    n = 0
    for i, rows in enumerate(rows_per_state):
        step = max(1, EVAL_CHUNK_CELLS // max(rows[0].size * space.spec.B.size * len(space.atoms), 1))
        parts = [_evaluate(space, i, rows[lo:lo + step]) for lo in range(0, len(rows), step)]
        c, s, p, d = (np.concatenate(x) for x in zip(*parts))
        offsets.append(n)
        n += len(c)
        costs.append(c)
        succs.append(s)
        probs.append(p)
        disps.append(d)
    return MDPInstance(space, rows_per_state, np.concatenate(costs), np.concatenate(succs),
                       np.concatenate(probs), np.concatenate(disps), np.array(offsets, dtype=np.int64),
                       action_grid)


def build_instance(spec, case="auto", grid=DEFAULT_GRID, action_grid=DEFAULT_ACTION_GRID, meta_grid=4,
                   experimental=False, cap=None):
    """Enumerate states, constrained candidate actions, costs and successor tables."""
    space = make_state_space(spec, case, grid, meta_grid, experimental)
    nA = space.spec.A.size
    row_grid = simplex_grid(nA, action_grid)
    cap = enumeration_cap() if cap is None else cap
    counts = [len(row_grid) ** len(space.support(i)) for i in range(space.n_states)]
    cells = sum(c * len(space.support(i)) * nA * space.spec.B.size for i, c in enumerate(counts))
    check_cap("action table cells", cells, cap)
    rows_per_state = []
    for i in range(space.n_states):
        k = len(space.support(i))
        combos = np.indices((len(row_grid),) * k).reshape(k, -1).T
        rows_per_state.append(row_grid[combos])
    return _assemble(space, rows_per_state, action_grid)


def refine_instance(instance, policy, step=None):
    """Add one round of local perturbations around each state's chosen action."""
    nA = instance.space.spec.A.size
    step = 1.0 / (2 * instance.action_grid) if step is None else step
    new_rows = []
    for i, rows in enumerate(instance.rows):
        best = rows[policy[i]]
        cands = []
        for j in range(best.shape[0]):
            for a, a2 in itertools.permutations(range(nA), 2):
                for d in (step, step / 2):
                    if best[j, a] >= d:
                        r = best.copy()
                        r[j, a] -= d
                        r[j, a2] += d
                        cands.append(r)
        if cands:
            cands = np.array(cands)
            keys = {tuple(np.round(r.ravel(), 12)) for r in rows}
            keep = [r for r in cands if tuple(np.round(r.ravel(), 12)) not in keys]
            rows = np.concatenate([rows, np.array(keep)]) if keep else rows
        new_rows.append(rows)
    return _assemble(instance.space, new_rows, instance.action_grid)


# -- relative value iteration ---------------------------------------------

@dataclass
class ACOESolution:
    V_star: float
    w: np.ndarray
    policy: np.ndarray  # local action index per state
    iterations: int
    span: float
    residual: float
    converged: bool


def _bellman(instance, w):
    Q = instance.cost + (instance.prob * w[instance.succ]).sum(axis=1)
    return Q, np.maximum.reduceat(Q, instance.offsets)


def greedy_policy(instance, w, tol=TIE_TOL):
    Q, best = _bellman(instance, w)
    pol = np.empty(instance.n_states, dtype=np.int64)
    for i in range(instance.n_states):
        q = Q[instance.state_slice(i)]
        pol[i] = int(np.flatnonzero(q >= best[i] - tol)[0])
    return pol


def solve_acoe(instance, eps=DEFAULT_EPS, max_iters=DEFAULT_MAX_ITERS, ref=0, w0=None, aperiodicity=1.0):
    """Relative value iteration for the average-cost optimality equation.

    ``aperiodicity`` < 1 mixes each update with the previous iterate, which
    leaves the optimal policy unchanged and scales the gain; the reported
    V* is rescaled back. Raises :class:`NotConverged` (with the best-so-far
    solution attached) after ``max_iters`` sweeps.
    """
    tau = float(aperiodicity)
    w = np.zeros(instance.n_states) if w0 is None else np.array(w0, dtype=np.float64)
    w = w - w[ref]
    span = np.inf
    g = 0.0
    it = 0
    for it in range(1, max_iters + 1):
        _, Tw = _bellman(instance, w)
        Tw = (1 - tau) * w + tau * Tw
        g = Tw[ref]
        w_new = Tw - g
        diff = w_new - w
        span = float(diff.max() - diff.min())
        w = w_new
        if span < eps:
            break
    V = g / tau
    _, Tw = _bellman(instance, w)
    residual = float(np.max(np.abs(V + w - Tw)))
    sol = ACOESolution(float(V), w, greedy_policy(instance, w), it, span, residual, span < eps)
    if not sol.converged:
        raise NotConverged(f"span {span:.3g} after {it} iterations; check mixing", sol)
    return sol


def policy_costs(instance, policy):
    return np.array([instance.cost[instance.state_slice(i)][k] for i, k in enumerate(policy)])


def policy_matrix(instance, policy):
    P = np.zeros((instance.n_states, instance.n_states))
    for i, k in enumerate(policy):
        idx = instance.state_slice(i).start + k
        np.add.at(P[i], instance.succ[idx], instance.prob[idx])
    return P


# -- mixing and stationarity ----------------------------------------------

@dataclass
class MixingReport:
    alpha: float
    holds: bool
    n_rows: int
    note: str = "exact over the discretized instance only; off-grid state/action pairs are not covered"


def check_mixing(instance):
    """alpha = max total-variation distance between any two next-state rows."""
    P = instance.next_rows()
    U = np.unique(np.round(P, 12), axis=0)
    # disjoint supports give the maximum possible value 1 without a pairwise sweep
    masks = np.unique(U > 0, axis=0).astype(np.float64)
    if (masks @ masks.T == 0).any():
        return MixingReport(1.0, False, len(U))
    alpha = 0.0
    chunk = max(1, 4_000_000 // max(U.size, 1))
    for lo in range(0, len(U), chunk):
        d = 0.5 * np.abs(U[lo:lo + chunk, None, :] - U[None, :, :]).sum(axis=2)
        alpha = max(alpha, float(d.max()))
    return MixingReport(alpha, alpha < 1.0, len(U))


def closed_classes(P, tol=0.0):
    """Strongly connected components of the support graph with no exit."""
    G = csr_matrix(P > tol)
    n, labels = connected_components(G, directed=True, connection="strong")
    closed = []
    for c in range(n):
        members = np.flatnonzero(labels == c)
        outside = np.setdiff1d(np.arange(len(P)), members)
        if not (P[np.ix_(members, outside)] > tol).any():
            closed.append(members)
    return closed


@dataclass
class StationaryReport:
    distribution: np.ndarray
    iterations: int | None
    average_cost: float


def stationary_distribution(instance, policy, tol=1e-9, max_iters=DEFAULT_MAX_ITERS):
    P = policy_matrix(instance, policy)
    classes = closed_classes(P)
    if len(classes) != 1:
        raise NotConverged(f"{len(classes)} recurrent classes under the policy")
    lam = np.full(len(P), 1.0 / len(P))
    iters = None
    for k in range(1, max_iters + 1):
        nxt = lam @ P
        if 0.5 * np.abs(nxt - lam).sum() <= tol:
            lam, iters = nxt, k
            break
        lam = nxt
    if iters is None:
        # periodic chain: solve lam (P - I) = 0, sum lam = 1
        A = np.vstack([P.T - np.eye(len(P)), np.ones(len(P))])
        rhs = np.zeros(len(P) + 1)
        rhs[-1] = 1.0
        lam = np.linalg.lstsq(A, rhs, rcond=None)[0]
        lam = np.clip(lam, 0, None)
        lam /= lam.sum()
    avg = float(lam @ policy_costs(instance, policy))
    return StationaryReport(lam, iters, avg)


# -- closed form for non-ISI channels with state at the receiver ---------

def _best_row(f, nA, action_grid, rounds=40):
    grid = simplex_grid(nA, action_grid)
    vals = np.array([f(r) for r in grid])
    k = int(np.argmax(vals))
    row, best = grid[k].copy(), float(vals[k])
    step = 1.0 / (2 * action_grid)
    for _ in range(rounds):
        improved = False
        for a, a2 in itertools.permutations(range(nA), 2):
            if row[a] >= step:
                r = row.copy()
                r[a] -= step
                r[a2] += step
                v = f(r)
                if v > best + 1e-15:
                    row, best, improved = r, v, True
        if not improved:
            step /= 2
            if step < 1e-9:
                break
    return row, best


def stationary_of(P, tol=1e-12, max_iters=10**6):
    lazy = 0.5 * (P + np.eye(len(P)))
    nu = np.full(len(P), 1.0 / len(P))
    for _ in range(max_iters):
        nxt = nu @ lazy
        if np.abs(nxt - nu).sum() <= tol:
            return nxt / nxt.sum()
        nu = nxt
    return nu / nu.sum()


@dataclass
class ClosedFormResult:
    V_star: float
    stationary: np.ndarray
    per_state: np.ndarray
    rows: np.ndarray


def closed_form_noisi_csi(spec, action_grid=DEFAULT_ACTION_GRID):
    """V* = sum_s nu(s) max_u I(A; B | S = s) for non-ISI channels with receiver CSI."""
    missing = {"no_isi", "receiver_csi"} - set(spec.flags)
    if missing:
        raise FlagUnsupported(f"needs flags {sorted(missing)}")
    P = spec.transition[:, 0, 0, :]
    if len(closed_classes(P)) != 1:
        raise NotErgodic("state chain has more than one recurrent class")
    nu = stationary_of(P)
    nS, nA, nB = spec.shape
    per, rows = np.empty(nS), np.empty((nS, nA))
    for s in range(nS):
        E = spec.emission[s]
        rows[s], per[s] = _best_row(lambda r: mutual_information(r[:, None] * E), nA, action_grid)
    return ClosedFormResult(float(nu @ per), nu, per, rows)


# -- policy export ---------------------------------------------------------

@dataclass(eq=False)
class PolicyRule:
    """Stationary input rule q(a | atom, state) with its state-tracking tables."""

    case: str
    atoms: np.ndarray
    states: np.ndarray
    supports: list
    rows: list  # per state (n_support, A)
    next_state: np.ndarray  # (n_states, B), -1 where the output has zero mass
    initial: int
    nS: int
    nA: int
    nB: int
    V_star: float = float("nan")
    spec_hash: str = ""

    def atom_of(self, belief):
        return snap(self.atoms, belief)[0]

    def row(self, state, belief):
        J = self.supports[state]
        j = self.atom_of(belief)
        pos = np.flatnonzero(J == j)
        if pos.size:
            return self.rows[state][pos[0]]
        # atom outside the support: nearest supported atom
        d = np.abs(self.atoms[J] - belief).sum(axis=1)
        return self.rows[state][int(np.argmin(np.round(d, 12)))]

    def step(self, state, b):
        k = int(self.next_state[state, b])
        return state if k < 0 else k

    def dense_rows(self):
        """(n_states, n_atoms, A) table; unsupported atoms get their nearest supported row."""
        out = np.empty((len(self.states), len(self.atoms), self.nA))
        for i in range(len(self.states)):
            for j in range(len(self.atoms)):
                out[i, j] = self.row(i, self.atoms[j])
        return out

    def to_dict(self):
        return {
            "version": 1, "case": self.case, "atoms": self.atoms.tolist(), "states": self.states.tolist(),
            "supports": [s.tolist() for s in self.supports], "rows": [r.tolist() for r in self.rows],
            "next_state": self.next_state.tolist(), "initial": self.initial,
            "alphabets": {"S": self.nS, "A": self.nA, "B": self.nB}, "V_star_bits": self.V_star,
            "spec_hash": self.spec_hash,
        }

    @classmethod
    def from_dict(cls, d):
        al = d["alphabets"]
        return cls(d["case"], np.array(d["atoms"], dtype=float), np.array(d["states"], dtype=float),
                   [np.array(s, dtype=np.int64) for s in d["supports"]],
                   [np.array(r, dtype=float) for r in d["rows"]], np.array(d["next_state"], dtype=np.int64),
                   int(d["initial"]), int(al["S"]), int(al["A"]), int(al["B"]), float(d.get("V_star_bits", "nan")),
                   d.get("spec_hash", ""))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def policy_to_input(instance, solution, spec_hash=""):
    space = instance.space
    nS, nA, nB = space.spec.shape
    supports, rows = [], []
    nxt = np.full((space.n_states, nB), -1, dtype=np.int64)
    for i, k in enumerate(solution.policy):
        supports.append(space.support(i))
        rows.append(instance.rows[i][k])
        idx = instance.state_slice(i).start + k
        live = instance.prob[idx] > 0
        nxt[i, live] = instance.succ[idx][live]
    return PolicyRule(space.case, space.atoms, space.states, supports, rows, nxt, space.initial_state(),
                      nS, nA, nB, solution.V_star, spec_hash)


# -- Reduction of an input law to belief form --------------------------------

@dataclass
class BeliefReduction:
    input: object  # InputDistribution r(a_t | pi_t, b^{t-1}) expanded to full histories
    max_deviation: float
    per_step: list


def reduce_input_to_belief(spec, input_dist):
    """Replace q(a_t | a^{t-1}, b^{t-1}) by r(a_t | pi_t, b^{t-1}) and compare marginals."""
    from .codefunctions import InputDistribution
    from .directed_info import joint_measure

    T = input_dist.horizon
    nS, nA, nB = spec.shape
    beliefs, _, _ = belief_tables(spec, T)
    jq = joint_measure(spec, input_dist)
    new_steps = []
    keys_per_t = []
    for t in range(1, T + 1):
        hist_shape = (nA, nB) * (t - 1)
        hist_mass = jq.prefix(t - 1) if t > 1 else np.ones(())
        pi = beliefs[t - 1].reshape(-1, nS)
        idx = np.indices(hist_shape).reshape(2 * (t - 1), -1).T if t > 1 else np.zeros((1, 0), dtype=int)
        keys = np.concatenate([np.round(pi, 12), idx[:, 1::2]], axis=1)
        _, group = np.unique(keys, axis=0, return_inverse=True)
        group = group.ravel()
        keys_per_t.append(group)
        q = input_dist.steps[t - 1].reshape(-1, nA)
        w = np.asarray(hist_mass).reshape(-1)
        n_g = group.max() + 1
        num = np.stack([np.bincount(group, weights=w * q[:, a], minlength=n_g) for a in range(nA)], axis=1)
        den = num.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0 / nA)
        new_steps.append(r[group].reshape(hist_shape + (nA,)))
    reduced = InputDistribution(nA, nB, T, tuple(new_steps), "full")
    jr = joint_measure(spec, reduced)
    devs = []
    for t in range(1, T + 1):
        group = keys_per_t[t - 1]
        mq = jq.prefix(t).reshape(len(group), nA, nB)
        mr = jr.prefix(t).reshape(len(group), nA, nB)
        n_g = group.max() + 1
        gq = np.zeros((n_g, nA, nB))
        gr = np.zeros((n_g, nA, nB))
        np.add.at(gq, group, mq)
        np.add.at(gr, group, mr)
        devs.append(float(np.abs(gq - gr).max()))
    return BeliefReduction(reduced, max(devs), devs)


# -- end-to-end solver -----------------------------------------------------

@dataclass
class ACOERun:
    instance: MDPInstance
    solution: ACOESolution
    mixing: MixingReport
    stationary: StationaryReport | None
    rule: PolicyRule


def acoe_capacity(spec, case="auto", grid=DEFAULT_GRID, action_grid=DEFAULT_ACTION_GRID, eps=DEFAULT_EPS,
                  max_iters=DEFAULT_MAX_ITERS, refine=True, meta_grid=4, experimental=False, aperiodicity=1.0):
    """Build, solve (with one refinement round), and post-process an ACOE instance."""
    inst = build_instance(spec, case, grid, action_grid, meta_grid, experimental)
    sol = solve_acoe(inst, eps, max_iters, aperiodicity=aperiodicity)
    if refine:
        inst = refine_instance(inst, sol.policy)
        sol = solve_acoe(inst, eps, max_iters, w0=sol.w, aperiodicity=aperiodicity)
    mix = check_mixing(inst)
    try:
        stat = stationary_distribution(inst, sol.policy)
    except NotConverged:
        stat = None
    rule = policy_to_input(inst, sol, spec.content_hash())
    return ACOERun(inst, sol, mix, stat, rule)
