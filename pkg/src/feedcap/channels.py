"""Constructors for the channels used in tests, scripts and examples."""

from __future__ import annotations

import numpy as np

from .kernels import GeneralChannelSpec, MarkovChannelSpec, history_shape


def _memoryless(emission_ab, name, flags=()):
    E = np.asarray(emission_ab, dtype=np.float64)
    nA, nB = E.shape
    transition = np.ones((1, nA, nB, 1))
    return MarkovChannelSpec(1, nA, nB, [1.0], transition, E[None], frozenset(flags), name)


def memoryless(emission_ab, name="dmc"):
    """Single-state channel with p(b | a) given as an (A, B) table."""
    return _memoryless(emission_ab, name, ("no_isi", "state_from_output", "belief_from_output"))


def bsc(p, name=None):
    return memoryless([[1 - p, p], [p, 1 - p]], name or f"bsc({p:g})")


def noiseless(n=2):
    return memoryless(np.eye(n), f"noiseless({n})")


def erasure(eps):
    return memoryless([[1 - eps, eps, 0.0], [0.0, eps, 1 - eps]], f"bec({eps:g})")


def csi_switching(p_states=(0.1, 0.4), stay=0.9, initial=None):
    """BSC whose crossover follows a Markov chain independent of inputs and outputs.

    The receiver is assumed to observe the state (flag ``receiver_csi``).
    """
    p_states = np.asarray(p_states, dtype=np.float64)
    nS = len(p_states)
    P = np.full((nS, nS), (1 - stay) / max(nS - 1, 1))
    np.fill_diagonal(P, stay)
    if nS == 1:
        P[:] = 1.0
    emission = np.stack([[[1 - p, p], [p, 1 - p]] for p in p_states])
    transition = np.broadcast_to(P[:, None, None, :], (nS, 2, 2, nS)).copy()
    init = np.full(nS, 1.0 / nS) if initial is None else initial
    return MarkovChannelSpec(nS, 2, 2, init, transition, emission, frozenset({"no_isi", "receiver_csi"}),
                             f"csi-bsc{tuple(p_states.tolist())}-stay{stay:g}")


def gilbert_elliott(p_gb=0.1, p_bg=0.3, eps_good=0.01, eps_bad=0.3, initial=(1.0, 0.0)):
    """Two-state burst-noise BSC whose state is hidden from both ends."""
    P = np.array([[1 - p_gb, p_gb], [p_bg, 1 - p_bg]])
    emission = np.stack([[[1 - e, e], [e, 1 - e]] for e in (eps_good, eps_bad)])
    transition = np.broadcast_to(P[:, None, None, :], (2, 2, 2, 2)).copy()
    return MarkovChannelSpec(2, 2, 2, initial, transition, emission, frozenset({"no_isi"}), "gilbert-elliott")


def io_memory(eps=0.1, flip=0.2):
    """Binary channel with state S = (previous input, previous output).

    The crossover depends on whether the previous input was received
    correctly: ``eps`` after a correct use, ``flip`` after an error. The state
    is a deterministic function of (a, b), so ``state_from_io`` holds.
    """
    nS = 4  # index = 2 * a_prev + b_prev
    emission = np.empty((nS, 2, 2))
    for s in range(nS):
        a_prev, b_prev = divmod(s, 2)
        p = eps if a_prev == b_prev else flip
        emission[s] = [[1 - p, p], [p, 1 - p]]
    transition = np.zeros((nS, 2, 2, nS))
    for s in range(nS):
        for a in range(2):
            for b in range(2):
                transition[s, a, b, 2 * a + b] = 1.0
    return MarkovChannelSpec(nS, 2, 2, np.eye(nS)[0], transition, emission,
                             frozenset({"state_from_io"}), f"io-memory({eps:g},{flip:g})")


def output_memory(eps=(0.05, 0.25)):
    """Binary channel whose state is the previous output (``state_from_output``)."""
    emission = np.stack([[[1 - e, e], [e, 1 - e]] for e in eps])
    transition = np.zeros((2, 2, 2, 2))
    for b in range(2):
        transition[:, :, b, b] = 1.0
    return MarkovChannelSpec(2, 2, 2, [1.0, 0.0], transition, emission, frozenset({"state_from_output"}),
                             f"output-memory{tuple(eps)}")


def trapdoor():
    """Trapdoor channel: state is the ball left behind; input drops a ball in.

    Output is the state or the input with probability 1/2 each; the next state
    is whichever ball remains, a function of (s, a, b), so ``state_from_io`` holds.
    """
    emission = np.zeros((2, 2, 2))
    transition = np.zeros((2, 2, 2, 2))
    for s in range(2):
        for a in range(2):
            emission[s, a, s] += 0.5
            emission[s, a, a] += 0.5
            for b in range(2):
                remaining = s + a - b  # two balls s, a; the one released is b
                transition[s, a, b, min(max(remaining, 0), 1)] = 1.0
    return MarkovChannelSpec(2, 2, 2, [1.0, 0.0], transition, emission, frozenset({"state_from_io"}), "trapdoor")


def random_markov(rng, nS=2, nA=2, nB=2, concentration=1.0, flags=()):
    """Random channel with Dirichlet rows (dense, so the filter never stalls)."""
    alpha = np.full(nS, concentration)
    init = rng.dirichlet(alpha)
    transition = rng.dirichlet(alpha, size=(nS, nA, nB))
    emission = rng.dirichlet(np.full(nB, concentration), size=(nS, nA))
    return MarkovChannelSpec(nS, nA, nB, init, transition, emission, frozenset(flags), "random")


def random_general(rng, nA=2, nB=2, T=2, concentration=1.0):
    steps = tuple(rng.dirichlet(np.full(nB, concentration), size=history_shape(nA, nB, t) + (nA,))
                  for t in range(1, T + 1))
    return GeneralChannelSpec(nA, nB, T, steps, "random-general")
