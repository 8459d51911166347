"""Cross-module identity checks on one (channel, input law) pair.

Every check is computed two independent ways and reports the largest
absolute deviation together with the tolerance it is held to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codefunctions import (
    build_consistent_measure,
    enumerate_codefunctions,
    good_distribution,
    induced_input_distribution,
    verify_good,
)
from .directed_info import (
    directed_information,
    joint_measure,
    markov_directed_information,
    mutual_information_ab,
    reverse_directed_information,
)
from .filtering import belief_tables
from .kernels import MarkovChannelSpec, entropy, mutual_information


@dataclass
class Check:
    name: str
    deviation: float
    tol: float
    note: str = ""

    @property
    def ok(self):
        return bool(self.deviation <= self.tol)

    def to_dict(self):
        return {"deviation": self.deviation, "tol": self.tol, "ok": self.ok, "note": self.note}


def code_function_identity(channel, input_dist):
    """|I(F^T; B^T) - I(A^T -> B^T)| under the good code-function distribution."""
    space = enumerate_codefunctions(input_dist.nA, input_dist.nB, input_dist.horizon)
    measure = build_consistent_measure(channel, good_distribution(input_dist, space))
    fb = measure.fb().reshape(space.size, -1)
    di = directed_information(joint_measure(channel, input_dist))
    return abs(mutual_information(fb) - di), measure


def induced_deviation(measure, input_dist):
    """Largest row deviation of the Upsilon-ratio input from the original on live histories."""
    induced = induced_input_distribution(measure)
    worst = 0.0
    for t, (mine, orig) in enumerate(zip(induced.steps, input_dist.steps), start=1):
        live = ~np.broadcast_to(induced.undefined[t - 1][..., None], mine.shape)
        d = np.abs(mine - orig)[live]
        worst = max(worst, float(d.max()) if d.size else 0.0)
    return worst


def filter_deviation(spec, input_dist):
    """Filter beliefs and predictives against conditionals of the brute-force joint."""
    from .codefunctions import enumerate_markov_joint

    T = input_dist.horizon
    nS, nA, nB = spec.shape
    Q = enumerate_markov_joint(spec, input_dist, final_state=False)
    beliefs, preds, _ = belief_tables(spec, T)
    worst = 0.0
    for t in range(1, T + 1):
        # P(a^{t-1}, b^{t-1}, s_t)
        keep = [3 * (i - 1) + k for i in range(1, t) for k in (1, 2)] + [3 * (t - 1)]
        m = Q.sum(axis=tuple(ax for ax in range(Q.ndim) if ax not in keep))
        tot = m.sum(axis=-1, keepdims=True)
        live = np.broadcast_to(tot > 0, m.shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = m / tot
        d = np.abs(cond - beliefs[t - 1])[live]
        worst = max(worst, float(d.max()) if d.size else 0.0)
        # P(b_t | a^t, b^{t-1})
        keep = [3 * (i - 1) + k for i in range(1, t + 1) for k in (1, 2)]
        m = Q.sum(axis=tuple(ax for ax in range(Q.ndim) if ax not in keep))
        tot = m.sum(axis=-1, keepdims=True)
        live = np.broadcast_to(tot > 0, m.shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = m / tot
        d = np.abs(cond - preds[t - 1])[live]
        worst = max(worst, float(d.max()) if d.size else 0.0)
    return worst


def decomposition_sides(spec, u_sa):
    """I((S, A); B) and I(A; B | S) + I(S; B) for a joint u(s, a), computed separately."""
    joint = u_sa[..., None] * spec.emission  # (S, A, B)
    lhs = mutual_information(joint.reshape(-1, spec.B.size))
    # I(A; B | S) = sum_s u(s) I(A; B | S = s)
    cond = 0.0
    for s in range(spec.S.size):
        ps = joint[s].sum()
        if ps > 0:
            cond += ps * mutual_information(joint[s] / ps)
    pb_s = joint.sum(axis=1)
    i_sb = float(entropy(pb_s.sum(axis=0)) + entropy(pb_s.sum(axis=1)) - entropy(pb_s))
    return lhs, cond + i_sb


def identity_suite(channel, input_dist, seed=0):
    """Run every applicable identity; returns a list of :class:`Check`."""
    from .mdp import reduce_input_to_belief

    checks = []
    j = joint_measure(channel, input_dist)
    di, _ = directed_information(j, tol=np.inf, return_parts=True)
    rev = reverse_directed_information(j)
    mi = mutual_information_ab(j)
    checks.append(Check("conservation", abs(mi - di - rev), 1e-10, "I(A;B) = forward + reverse directed information"))
    checks.append(Check("directed_below_mutual", max(di - mi, 0.0), 1e-10))
    if input_dist.is_feedback_free():
        checks.append(Check("reverse_zero_without_feedback", abs(rev), 1e-10))
    dev, measure = code_function_identity(channel, input_dist)
    checks.append(Check("code_function_identity", dev, 1e-10, "I(F;B) vs directed information"))
    space = measure.space
    good = good_distribution(input_dist, space)
    rep = verify_good(good, input_dist)
    checks.append(Check("good_distribution", rep.max_deviation, 1e-12))
    checks.append(Check("induced_input", induced_deviation(measure, input_dist), 1e-12))
    if isinstance(channel, MarkovChannelSpec):
        checks.append(Check("filter_sufficiency", filter_deviation(channel, input_dist), 1e-12))
        value, _ = markov_directed_information(channel, input_dist, tol=np.inf)
        checks.append(Check("belief_directed_information", abs(value - di), 1e-10))
        red = reduce_input_to_belief(channel, input_dist)
        checks.append(Check("belief_reduction", red.max_deviation, 1e-12))
        if "state_from_io" in channel.flags:
            rng = np.random.default_rng(seed)
            u = rng.dirichlet(np.ones(channel.S.size * channel.A.size)).reshape(channel.S.size, channel.A.size)
            lhs, rhs = decomposition_sides(channel, u)
            checks.append(Check("cost_decomposition", abs(lhs - rhs), 1e-10))
    return checks
