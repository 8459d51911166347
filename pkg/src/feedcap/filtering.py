"""Channel-state filter and structural checks on Markov channels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FlagCheckError, ZeroProbabilityObservation
from .kernels import bayes_decompose, compose

DEFAULT_CHECK_GRID = 16
DIRAC_TOL = 1e-12


def output_predictive(spec, belief, a):
    """r(b | pi, a) = sum_s p(b | s, a) pi(s)."""
    belief = np.asarray(belief, dtype=np.float64)
    return belief @ spec.emission[:, a, :]


def filter_update(spec, belief, a, b):
    """One step of the state filter: pi_{t+1} = Phi(pi_t, a_t, b_t).

    Forms the joint of (s, b) under ``belief`` and input ``a``, conditions
    on ``b`` and pushes the posterior through the transition kernel.
    """
    belief = np.asarray(belief, dtype=np.float64)
    joint = compose(belief, spec.emission[:, a, :])  # (s, b)
    marginal, posterior = bayes_decompose(joint[None])
    if marginal[0, b] <= 0:
        raise ZeroProbabilityObservation(f"r(b={b} | pi, a={a}) = 0")
    post = posterior[0, b]  # over s
    nxt = post @ spec.transition[:, a, b, :]
    return nxt / nxt.sum()


@dataclass(frozen=True)
class FilterTrace:
    beliefs: np.ndarray  # (n+1, S)
    history: tuple
    predictives: np.ndarray  # (n, B)


def run_filter(spec, history):
    history = [(int(a), int(b)) for a, b in history]
    beliefs = [np.array(spec.initial)]
    preds = []
    for t, (a, b) in enumerate(history, start=1):
        pred = output_predictive(spec, beliefs[-1], a)
        if pred[b] <= 0:
            raise ZeroProbabilityObservation(f"r(b={b} | pi, a={a}) = 0", step=t)
        preds.append(pred)
        beliefs.append(filter_update(spec, beliefs[-1], a, b))
    preds = np.array(preds).reshape(len(history), spec.B.size)
    return FilterTrace(np.array(beliefs), tuple(history), preds)


def belief_tables(spec, T):
    """Filter beliefs and predictives for every history up to length ``T``.

    Returns ``(beliefs, predictives, reachable)``. ``beliefs[t-1]`` has shape
    ``(A, B) * (t-1) + (S,)`` and holds pi_t; ``predictives[t-1]`` has shape
    ``(A, B) * t`` and holds r(b_t | pi_t, a_t). ``reachable[t-1]`` marks
    histories with positive channel probability given the inputs; beliefs on
    unreachable histories are uniform placeholders.
    """
    nS, nA, nB = spec.shape
    pi = np.array(spec.initial)
    reach = np.ones((), dtype=bool)
    beliefs, preds, reachable = [pi], [], [reach]
    for t in range(1, T + 1):
        # r(b | pi, a) over (hist, a, b)
        pred = np.einsum("...s,sab->...ab", pi, spec.emission)
        preds.append(pred)
        if t == T:
            break
        unnorm = np.einsum("...s,sab,sabz->...abz", pi, spec.emission, spec.transition)
        with np.errstate(invalid="ignore", divide="ignore"):
            nxt = unnorm / pred[..., None]
        dead = pred <= 0
        nxt[dead] = 1.0 / nS
        reach = reach[..., None, None] & ~dead
        pi = nxt
        beliefs.append(pi)
        reachable.append(reach)
    return beliefs, preds, reachable


def channel_tables(spec, T):
    """p(b_t | a^t, b^{t-1}) tables for a Markov channel via the filter."""
    return belief_tables(spec, T)[1]


# -- structural checks -----------------------------------------------------

def _dirac_index(row):
    k = int(np.argmax(row))
    if abs(row[k] - 1.0) <= DIRAC_TOL:
        return k
    return None


def deterministic_successor(spec):
    """Phi_S(s, a, b) as an int array (S, A, B), or None if any row is stochastic."""
    nS, nA, nB = spec.shape
    out = np.empty((nS, nA, nB), dtype=int)
    for s, a, b in np.ndindex(nS, nA, nB):
        k = _dirac_index(spec.transition[s, a, b])
        if k is None:
            return None
        out[s, a, b] = k
    return out


@dataclass
class CheckResult:
    flag: str
    ok: bool
    counterexample: object = None
    sampled: bool = False
    n_checked: int = 0
    note: str = ""

    def __bool__(self):
        return self.ok


def _dirac_checks(spec, flag, ignore_axis):
    if _dirac_index(spec.initial) is None:
        return CheckResult(flag, False, {"initial": spec.initial.tolist()})
    nS, nA, nB = spec.shape
    succ = np.empty((nS, nA, nB), dtype=int)
    for s, a, b in np.ndindex(nS, nA, nB):
        k = _dirac_index(spec.transition[s, a, b])
        if k is None:
            return CheckResult(flag, False, {"row": [s, a, b], "transition": spec.transition[s, a, b].tolist()})
        succ[s, a, b] = k
    if ignore_axis is not None:
        ref = np.take(succ, [0], axis=ignore_axis)
        bad = np.argwhere(succ != ref)
        if bad.size:
            s, a, b = (int(v) for v in bad[0])
            other = [s, a, b]
            other[ignore_axis] = 0
            return CheckResult(flag, False, {"row": [s, a, b], "successor": int(succ[s, a, b]),
                                             "row_prime": other, "successor_prime": int(succ[tuple(other)])})
    return CheckResult(flag, True, n_checked=succ.size)


def _no_isi(spec):
    ref = spec.transition[:, :1, :1, :]
    diff = np.abs(spec.transition - ref)
    if np.max(diff) > DIRAC_TOL:
        s, a, b, _ = (int(v) for v in np.unravel_index(np.argmax(diff), diff.shape))
        return CheckResult("no_isi", False, {"row": [s, a, b], "transition": spec.transition[s, a, b].tolist(),
                                             "reference": spec.transition[s, 0, 0].tolist()})
    return CheckResult("no_isi", True, n_checked=diff.size)


def _belief_from_output(spec, resolution):
    from .mdp import simplex_grid

    nS, nA, nB = spec.shape
    points = simplex_grid(nS, resolution)
    checked = 0
    for pi in points:
        pred = np.einsum("s,sab->ab", pi, spec.emission)
        for b in range(nB):
            nxt = {}
            for a in range(nA):
                if pred[a, b] > 0:
                    nxt[a] = filter_update(spec, pi, a, b)
            keys = sorted(nxt)
            for a2 in keys[1:]:
                checked += 1
                if np.max(np.abs(nxt[a2] - nxt[keys[0]])) > 1e-10:
                    return CheckResult("belief_from_output", False,
                                       {"belief": pi.tolist(), "a": keys[0], "a_prime": a2, "b": b,
                                        "phi_a": nxt[keys[0]].tolist(), "phi_a_prime": nxt[a2].tolist()},
                                       sampled=True, n_checked=checked)
    return CheckResult("belief_from_output", True, sampled=True, n_checked=checked,
                       note=f"sampled on simplex grid of resolution {resolution}, not certified on all beliefs")


def check_structure(spec, flag, resolution=DEFAULT_CHECK_GRID):
    """Check one structure flag; return a :class:`CheckResult`."""
    if flag == "state_from_io":
        return _dirac_checks(spec, flag, None)
    if flag == "state_from_input":
        return _dirac_checks(spec, flag, 2)
    if flag == "state_from_output":
        return _dirac_checks(spec, flag, 1)
    if flag == "no_isi":
        return _no_isi(spec)
    if flag == "belief_from_output":
        return _belief_from_output(spec, resolution)
    if flag == "receiver_csi":
        return CheckResult(flag, True, note="observation-model assumption; not checkable from kernels")
    raise ValueError(f"unknown flag {flag!r}")


def verify_flags(spec, resolution=DEFAULT_CHECK_GRID):
    for flag in sorted(spec.flags):
        res = check_structure(spec, flag, resolution)
        if not res.ok:
            raise FlagCheckError(flag, res.counterexample)
    return True


def detect_flags(spec, resolution=DEFAULT_CHECK_GRID):
    """All checkable flags that hold for ``spec`` (receiver_csi is never inferred)."""
    return frozenset(f for f in ("no_isi", "state_from_input", "state_from_output", "state_from_io",
                                 "belief_from_output")
                     if check_structure(spec, f, resolution).ok)
