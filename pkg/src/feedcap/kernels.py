"""Probability vectors, stochastic kernels and channel specifications.

Kernels are plain float64 numpy arrays whose *last* axis is the target
alphabet; every leading axis is a conditioning coordinate. A kernel over
``X`` given ``(V1, V2)`` therefore has shape ``(|V1|, |V2|, |X|)``.

The canonical on-disk format for a Markov channel is UTF-8 JSON::

    {"version": 1, "kind": "markov",
     "alphabets": {"S": {"size": 2, "label": "S"}, "A": ..., "B": ...},
     "initial": [...], "transition": [s][a][b][s'], "emission": [s][a][b],
     "flags": [...]}
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapExceeded, SpecError

SCHEMA_VERSION = 1
ROW_TOL = 1e-9
DEFAULT_CAP_CELLS = 10**7
DEFAULT_CAP_CODEFUNCTIONS = 10**6

FLAGS = (
    "no_isi",
    "state_from_input",
    "state_from_output",
    "state_from_io",
    "receiver_csi",
    "belief_from_output",
)


def enumeration_cap(default=DEFAULT_CAP_CELLS):
    """Return the enumeration cap, honouring ``FEEDCAP_CAP_CELLS``."""
    env = os.environ.get("FEEDCAP_CAP_CELLS")
    if env:
        return int(float(env))
    return default


def check_cap(what, size, cap=None):
    cap = enumeration_cap() if cap is None else cap
    if size > cap:
        raise CapExceeded(what, size, cap)


@dataclass(frozen=True)
class Alphabet:
    size: int
    label: str = ""

    def __post_init__(self):
        if int(self.size) < 1:
            raise SpecError(f"alphabet {self.label!r} must have size >= 1")


def _readonly(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def simplex(weights, tol=ROW_TOL):
    """Validate ``weights`` as a probability vector and renormalize it.

    Raises ``ValueError`` if any weight is negative or the sum is more than
    ``tol`` away from one.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("a simplex vector is one-dimensional")
    if np.any(w < 0):
        raise ValueError("negative weight")
    total = w.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"row sum {total:.12g}")
    return _readonly(w / total)


def normalize_rows(table):
    """Exactly renormalize the last axis of ``table`` (rows assumed valid)."""
    table = np.asarray(table, dtype=np.float64)
    return table / table.sum(axis=-1, keepdims=True)


def uniform(n):
    return np.full(n, 1.0 / n)


@dataclass
class KernelReport:
    ok: bool
    defects: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def validate_kernel(table, shape=None, tol=ROW_TOL):
    """Check every row of a kernel table; report defects rather than raise.

    ``shape`` is the expected full shape (conditioning axes + target). A
    mismatch is reported as missing rows. Each defect is ``(row, message)``
    with ``row`` the tuple of conditioning indices.
    """
    try:
        arr = np.asarray(table, dtype=np.float64)
    except (TypeError, ValueError):
        return KernelReport(False, [((), "ragged or non-numeric table")])
    defects = []
    if shape is not None and arr.shape != tuple(shape):
        defects.append(((), f"missing rows: shape {arr.shape}, expected {tuple(shape)}"))
        return KernelReport(False, defects)
    if arr.ndim == 0:
        return KernelReport(False, [((), "scalar is not a kernel")])
    for idx in np.ndindex(*arr.shape[:-1]):
        row = arr[idx]
        if not np.all(np.isfinite(row)):
            defects.append((idx, "non-finite weight"))
            continue
        if np.any(row < 0):
            defects.append((idx, "negative weight"))
        s = row.sum()
        if abs(s - 1.0) > tol:
            defects.append((idx, f"row sum {s:.12g}"))
    return KernelReport(not defects, defects)


def compose(k1, k2):
    """Joint kernel ``(x, y | v) = k2(y | v, x) * k1(x | v)``.

    ``k1`` has shape ``V + (X,)`` and ``k2`` shape ``V + (X, Y)``.
    """
    k1 = np.asarray(k1, dtype=np.float64)
    k2 = np.asarray(k2, dtype=np.float64)
    if k2.shape[:-1] != k1.shape:
        raise ValueError(f"alphabet mismatch: {k1.shape} vs {k2.shape}")
    return k1[..., :, None] * k2


def bayes_decompose(joint):
    """Split a joint kernel over ``(X, Y)`` given ``V`` into marginal and posterior.

    Returns ``(marginal, conditional)`` where ``marginal[v..., y]`` is the
    kernel over ``Y`` given ``V`` and ``conditional[v..., y, x]`` the kernel
    over ``X`` given ``(V, Y)``. Cells with zero ``Y``-marginal get a uniform
    conditional row.
    """
    joint = np.asarray(joint, dtype=np.float64)
    marginal = joint.sum(axis=-2)
    nx = joint.shape[-2]
    cond = np.swapaxes(joint, -1, -2).copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = cond / marginal[..., None]
    zero = marginal <= 0
    cond[zero] = 1.0 / nx
    return marginal, cond


# -- information primitives (bits, 0 log 0 = 0) ---------------------------

def entropy(p, axis=None):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=axis)


def mutual_information(pxy):
    """I(X;Y) in bits for a 2-D joint table (rows X, columns Y)."""
    pxy = np.asarray(pxy, dtype=np.float64)
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    return float(entropy(px) + entropy(py) - entropy(pxy))


def binary_entropy(p):
    return float(entropy([p, 1.0 - p]))


# -- channel specs ---------------------------------------------------------

def _alphabet(obj, label):
    if isinstance(obj, Alphabet):
        return obj
    if isinstance(obj, dict):
        return Alphabet(int(obj["size"]), obj.get("label", label))
    return Alphabet(int(obj), label)


@dataclass(frozen=True, eq=False)
class MarkovChannelSpec:
    """Finite-state channel: p(s1), p(s'|s,a,b) and p(b|s,a).

    ``transition`` has shape (S, A, B, S) and ``emission`` (S, A, B). Arrays
    are validated, renormalized and frozen at construction. Structure flags
    are stored as given; :func:`feedcap.filtering.verify_flags` checks them
    (``load_spec`` always does).
    """

    S: Alphabet
    A: Alphabet
    B: Alphabet
    initial: np.ndarray
    transition: np.ndarray
    emission: np.ndarray
    flags: frozenset = frozenset()
    name: str = ""

    def __post_init__(self):
        for attr, label in (("S", "S"), ("A", "A"), ("B", "B")):
            object.__setattr__(self, attr, _alphabet(getattr(self, attr), label))
        nS, nA, nB = self.S.size, self.A.size, self.B.size
        checks = (
            ("initial", self.initial, (nS,)),
            ("transition", self.transition, (nS, nA, nB, nS)),
            ("emission", self.emission, (nS, nA, nB)),
        )
        for label, table, shape in checks:
            report = validate_kernel(table, shape)
            if not report.ok:
                row, msg = report.defects[0]
                raise SpecError(f"{label} row {list(row)}: {msg}")
            object.__setattr__(self, label, _readonly(normalize_rows(table)))
        flags = frozenset(self.flags)
        unknown = flags - set(FLAGS)
        if unknown:
            raise SpecError(f"unknown flags {sorted(unknown)}")
        object.__setattr__(self, "flags", flags)

    @property
    def shape(self):
        return self.S.size, self.A.size, self.B.size

    def to_dict(self):
        return {
            "version": SCHEMA_VERSION,
            "kind": "markov",
            "name": self.name,
            "alphabets": {
                k: {"size": a.size, "label": a.label}
                for k, a in (("S", self.S), ("A", self.A), ("B", self.B))
            },
            "initial": self.initial.tolist(),
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
            "flags": sorted(self.flags),
        }

    def content_hash(self):
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def history_shape(nA, nB, t):
    """Interleaved shape of an (a^{t-1}, b^{t-1}) history: (A, B) * (t-1)."""
    return (nA, nB) * (t - 1)


@dataclass(frozen=True, eq=False)
class GeneralChannelSpec:
    """Channel given by full-history tables p(b_t | a^t, b^{t-1}).

    ``steps[t-1]`` has interleaved shape ``(A, B) * (t-1) + (A, B)``: axes
    ``a_1, b_1, ..., a_{t-1}, b_{t-1}, a_t`` then the target ``b_t``.
    """

    A: Alphabet
    B: Alphabet
    horizon: int
    steps: tuple
    name: str = ""
    cap: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "A", _alphabet(self.A, "A"))
        object.__setattr__(self, "B", _alphabet(self.B, "B"))
        nA, nB, T = self.A.size, self.B.size, int(self.horizon)
        check_cap("general channel table", nA**T * nB**T, self.cap)
        if len(self.steps) != T:
            raise SpecError(f"expected {T} step tables, got {len(self.steps)}")
        frozen = []
        for t, table in enumerate(self.steps, start=1):
            shape = history_shape(nA, nB, t) + (nA, nB)
            report = validate_kernel(table, shape)
            if not report.ok:
                row, msg = report.defects[0]
                raise SpecError(f"step {t} row {list(row)}: {msg}")
            frozen.append(_readonly(normalize_rows(table)))
        object.__setattr__(self, "steps", tuple(frozen))

    @property
    def flags(self):
        return frozenset()

    def to_dict(self):
        return {
            "version": SCHEMA_VERSION,
            "kind": "general",
            "name": self.name,
            "alphabets": {
                k: {"size": a.size, "label": a.label}
                for k, a in (("A", self.A), ("B", self.B))
            },
            "horizon": self.horizon,
            "steps": [s.tolist() for s in self.steps],
        }

    def content_hash(self):
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def spec_from_dict(data):
    if not isinstance(data, dict):
        raise SpecError("top level must be an object")
    version = data.get("version")
    if version != SCHEMA_VERSION:
        raise SpecError(f"field 'version': unsupported schema version {version!r}")
    kind = data.get("kind", "markov")
    try:
        alph = data["alphabets"]
        if kind == "markov":
            spec = MarkovChannelSpec(
                S=_alphabet(alph["S"], "S"),
                A=_alphabet(alph["A"], "A"),
                B=_alphabet(alph["B"], "B"),
                initial=data["initial"],
                transition=data["transition"],
                emission=data["emission"],
                flags=frozenset(data.get("flags", ())),
                name=data.get("name", ""),
            )
        elif kind == "general":
            spec = GeneralChannelSpec(
                A=_alphabet(alph["A"], "A"),
                B=_alphabet(alph["B"], "B"),
                horizon=int(data["horizon"]),
                steps=tuple(data["steps"]),
                name=data.get("name", ""),
            )
        else:
            raise SpecError(f"field 'kind': unknown kind {kind!r}")
    except KeyError as exc:
        raise SpecError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise SpecError(f"malformed field: {exc}") from None
    return spec


def load_spec(path):
    """Read, validate and flag-check a channel spec file."""
    from .filtering import verify_flags

    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    spec = spec_from_dict(data)
    if isinstance(spec, MarkovChannelSpec):
        verify_flags(spec)
    return spec


def save_spec(spec, path):
    Path(path).write_text(canonical_json(spec.to_dict()), encoding="utf-8")


def log2_or_zero(x):
    """Elementwise log2 with log2(0) mapped to 0; for use under a zero mask."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(x > 0, np.log2(np.where(x > 0, x, 1.0)), 0.0)


def n_choose_k(n, k):
    return math.comb(n, k)
