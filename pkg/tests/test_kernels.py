import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from feedcap import channels
from feedcap.errors import CapExceeded, FlagCheckError, SpecError
from feedcap.kernels import (
    GeneralChannelSpec,
    MarkovChannelSpec,
    bayes_decompose,
    canonical_json,
    compose,
    load_spec,
    save_spec,
    simplex,
    spec_from_dict,
    validate_kernel,
)


@st.composite
def kernels(draw, max_size=5):
    nv = draw(st.integers(1, max_size))
    nx = draw(st.integers(1, max_size))
    ny = draw(st.integers(1, max_size))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    k1 = rng.dirichlet(np.ones(nx), size=nv)
    k2 = rng.dirichlet(np.ones(ny), size=(nv, nx))
    return k1, k2


def test_validate_identity_ok():
    assert validate_kernel(np.eye(2)).ok


def test_validate_row_sum_defect():
    rep = validate_kernel(np.array([[0.5, 0.6]]))
    assert not rep.ok
    assert rep.defects[0][1] == "row sum 1.1"


def test_validate_negative_weight():
    rep = validate_kernel(np.array([[-0.1, 1.1]]))
    assert rep.defects[0][1] == "negative weight"


def test_validate_missing_rows():
    rep = validate_kernel(np.eye(2), shape=(3, 2))
    assert any("missing" in d for _, d in rep.defects)


def test_simplex_renormalizes_within_tolerance():
    v = simplex([0.3, 0.7 + 5e-10])
    assert abs(v.sum() - 1.0) <= 1e-15
    with pytest.raises(ValueError):
        simplex([0.3, 0.8])


def test_bayes_independent_joint():
    px, py = np.array([0.2, 0.8]), np.array([0.6, 0.4])
    _, cond = bayes_decompose(np.outer(px, py)[None])
    np.testing.assert_allclose(cond[0], np.tile(px, (2, 1)), atol=1e-15)


def test_bayes_zero_marginal_gives_uniform():
    joint = np.array([[[0.5, 0.0], [0.5, 0.0]]])
    marg, cond = bayes_decompose(joint)
    assert marg[0, 1] == 0
    np.testing.assert_allclose(cond[0, 1], [0.5, 0.5])


def test_compose_marginal_and_dirac():
    k1 = np.array([[1.0, 0.0, 0.0]])
    k2 = np.random.default_rng(0).dirichlet(np.ones(2), size=(1, 3))
    j = compose(k1, k2)
    np.testing.assert_allclose(j.sum(axis=-1), k1)
    assert np.all(j[0, 1:] == 0)


@given(kernels())
def test_round_trips(k):
    k1, k2 = k
    j = compose(k1, k2)
    marg, cond = bayes_decompose(j)
    # decompose then recompose: p(y) p(x|y) rearranged as (x, y)
    back = np.swapaxes(compose(marg, cond), -1, -2)
    np.testing.assert_allclose(back, j, atol=1e-12)
    # compose(bayes(j)) reproduces j; and marginal over y reproduces k1
    np.testing.assert_allclose(j.sum(axis=-1), k1, atol=1e-12)


def test_bsc_loads_with_expected_flags(tmp_path):
    path = tmp_path / "bsc.json"
    save_spec(channels.bsc(0.1), path)
    spec = load_spec(path)
    assert {"no_isi", "state_from_output", "belief_from_output"} <= spec.flags


def test_bad_transition_row(tmp_path):
    d = channels.random_markov(np.random.default_rng(1)).to_dict()
    d["transition"][0][0][0] = [0.5, 0.4]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(SpecError, match=r"transition row \[0, 0, 0\]"):
        load_spec(path)


def test_parse_error_has_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"version": 1,\n  oops}')
    with pytest.raises(SpecError, match="line 2"):
        load_spec(path)


def test_flag_failure_on_load(tmp_path):
    d = channels.random_markov(np.random.default_rng(2)).to_dict()
    d["flags"] = ["state_from_input"]
    path = tmp_path / "flag.json"
    path.write_text(json.dumps(d))
    with pytest.raises(FlagCheckError) as exc:
        load_spec(path)
    assert exc.value.flag == "state_from_input"


@pytest.mark.parametrize("make", [lambda: channels.bsc(0.1), channels.trapdoor, channels.csi_switching,
                                  channels.io_memory])
def test_save_load_byte_identity(tmp_path, make):
    spec = make()
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_spec(spec, p1)
    save_spec(load_spec(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert load_spec(p1).content_hash() == spec.content_hash()


def test_general_spec_cap():
    rng = np.random.default_rng(0)
    with pytest.raises(CapExceeded):
        GeneralChannelSpec(2, 2, 3, tuple(), cap=10)
    spec = channels.random_general(rng, T=2)
    back = spec_from_dict(json.loads(canonical_json(spec.to_dict())))
    for s1, s2 in zip(spec.steps, back.steps):
        np.testing.assert_array_equal(s1, s2)


def test_specs_are_immutable():
    spec = channels.bsc(0.2)
    with pytest.raises(ValueError):
        spec.emission[0, 0, 0] = 0.5
    assert isinstance(spec, MarkovChannelSpec)


def test_unknown_schema_version():
    with pytest.raises(SpecError, match="version"):
        spec_from_dict({"version": 99})
