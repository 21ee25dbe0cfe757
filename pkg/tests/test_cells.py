import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowersimpler import autodiff as ad
from lowersimpler.autodiff import Tensor, grad_check
from lowersimpler.cells import (
    Cell,
    CellConfig,
    CellKind,
    bi_encode,
    count_params,
    fofe_encode_matrix,
    fofe_encode_recurrent,
    gru_step,
    init_weights,
    mgu_step,
    reverse_padded,
    run_sequence,
    sgu_step,
)
from lowersimpler.errors import ConfigError, DimensionError


def sig(v):
    return 1.0 / (1.0 + np.exp(-v))


# Straight-line re-implementations. Matrices here are h x (h+x), as written in
# the gate equations; the library stores their transposes.

def gru_ref(Wz, Wr, Wh, h, x):
    hx = np.concatenate([h, x])
    z = sig(Wz @ hx)
    r = sig(Wr @ hx)
    hh = np.tanh(Wh @ np.concatenate([r * h, x]))
    return (1 - z) * h + z * hh


def sgu_ref(wz, wr, Wh, h, x):
    hx = np.concatenate([h, x])
    z = sig(float(wz @ hx))
    r = sig(float(wr @ hx))
    hh = np.tanh(Wh @ np.concatenate([r * h, x]))
    return (1 - z) * h + z * hh


def mgu_ref(Wf, Wh, h, x):
    hx = np.concatenate([h, x])
    f = sig(Wf @ hx)
    hh = np.tanh(Wh @ np.concatenate([f * h, x]))
    return (1 - f) * h + f * hh


def weights64(kind, h, x, seed=0):
    cfg = CellConfig(kind, x, h)
    return init_weights(cfg, np.random.default_rng(seed), np.float64)


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


# ----------------------------------------------------------------------------
# single steps


def test_gru_zero_weights_halves_state():
    w = {k: Tensor(np.zeros(v.shape)) for k, v in weights64("GRU", 2, 3).items()}
    out = gru_step(w, t64([[1.0, 1.0]]), t64([[0.3, -1.0, 2.0]]))
    np.testing.assert_allclose(out.data, [[0.5, 0.5]])


def test_gru_saturated_update_gate_takes_candidate():
    w = weights64("GRU", 2, 2, seed=3)
    w["W_z"] = Tensor(np.zeros((4, 2)))
    w["W_z"].data[2:, :] = 200.0  # x = [1, 1] drives z -> 1
    x = t64([[1.0, 1.0]])
    out = gru_step(w, t64([[0.0, 0.0]]), x)
    cand = np.tanh(np.concatenate([[0.0, 0.0], [1.0, 1.0]]) @ w["W_h"].data)
    np.testing.assert_allclose(out.data[0], cand, atol=1e-12)


def test_gru_matches_reference(rng):
    w = weights64("GRU", 4, 3, seed=7)
    h, x = rng.normal(size=4), rng.normal(size=3)
    out = gru_step(w, t64([h]), t64([x]))
    ref = gru_ref(w["W_z"].data.T, w["W_r"].data.T, w["W_h"].data.T, h, x)
    np.testing.assert_allclose(out.data[0], ref, atol=1e-14)


def test_sgu_zero_weights_halves_state():
    w = {k: Tensor(np.zeros(v.shape)) for k, v in weights64("SGU", 2, 1).items()}
    out = sgu_step(w, t64([[2.0, 2.0]]), t64([[5.0]]))
    np.testing.assert_allclose(out.data, [[1.0, 1.0]])


def test_sgu_hand_example():
    w = {"w_z": t64([0.0, 1.0]), "w_r": t64([0.0, 0.0]), "W_h": t64([[0.0], [2.0]])}
    out = sgu_step(w, t64([[0.0]]), t64([[1.0]]))
    z, hh = sig(1.0), math.tanh(2.0)
    assert z == pytest.approx(0.73106, abs=1e-5)
    assert hh == pytest.approx(0.96403, abs=1e-5)
    assert out.item() == pytest.approx(z * hh, abs=1e-15)
    assert out.item() == pytest.approx(0.70477, abs=1e-5)


def test_sgu_matches_reference(rng):
    w = weights64("SGU", 5, 3, seed=2)
    h, x = rng.normal(size=5), rng.normal(size=3)
    out = sgu_step(w, t64([h]), t64([x]))
    ref = sgu_ref(w["w_z"].data, w["w_r"].data, w["W_h"].data.T, h, x)
    np.testing.assert_allclose(out.data[0], ref, atol=1e-14)


def test_sgu_gate_weights_are_vectors():
    w = weights64("SGU", 6, 4)
    assert w["w_z"].ndim == 1 and w["w_r"].ndim == 1


def test_mgu_examples(rng):
    w = {k: Tensor(np.zeros(v.shape)) for k, v in weights64("MGU", 2, 2).items()}
    np.testing.assert_allclose(mgu_step(w, t64([[1.0, 1.0]]), t64([[3.0, 4.0]])).data, [[0.5, 0.5]])
    w = weights64("MGU", 3, 2, seed=1)
    w["W_f"] = Tensor(np.full((5, 3), -100.0))
    h = np.array([[0.4, 0.5, 0.6]])
    out = mgu_step(w, t64(h), t64([[1.0, 1.0]]))  # f -> 0
    np.testing.assert_allclose(out.data, h, atol=1e-12)
    w = weights64("MGU", 4, 3, seed=8)
    h, x = rng.normal(size=4), rng.normal(size=3)
    ref = mgu_ref(w["W_f"].data.T, w["W_h"].data.T, h, x)
    np.testing.assert_allclose(mgu_step(w, t64([h]), t64([x])).data[0], ref, atol=1e-14)


def test_step_shape_errors():
    w = weights64("GRU", 4, 3)
    with pytest.raises(DimensionError):
        gru_step(w, t64(np.zeros((1, 4))), t64(np.zeros((1, 2))))
    with pytest.raises(DimensionError):
        gru_step(w, t64(np.zeros((2, 4))), t64(np.zeros((1, 3))))


def test_sgu_equals_gru_at_width_one(rng):
    g = weights64("GRU", 1, 3, seed=5)
    s = {"w_z": Tensor(g["W_z"].data[:, 0]), "w_r": Tensor(g["W_r"].data[:, 0]), "W_h": g["W_h"]}
    for _ in range(10):
        h, x = t64(rng.uniform(-1, 1, size=(4, 1))), t64(rng.normal(size=(4, 3)))
        np.testing.assert_allclose(sgu_step(s, h, x).data, gru_step(g, h, x).data, atol=1e-15)


@pytest.mark.parametrize("kind", ["GRU", "MGU", "SGU"])
def test_gates_and_states_bounded(kind, rng):
    cfg = CellConfig(kind, 3, 5)
    cell = Cell(cfg, rng=rng, dtype=np.float64)
    for w in cell.parameters():
        w.data *= 4.0  # push toward saturation
    xs = Tensor(rng.normal(scale=3.0, size=(30, 6, 3)))
    out = run_sequence(cell, xs).outputs.data
    assert np.all(np.abs(out) < 1.0)
    hx = np.concatenate([out[3], xs.data[4]], axis=1)
    for name in ("W_z", "W_r", "w_z", "w_r", "W_f"):
        if name in cell.weights:
            g = sig(hx @ cell.weights[name].data)
            assert np.all((g > 0) & (g < 1))


# ----------------------------------------------------------------------------
# FOFE

E1, E2 = [1.0, 0.0], [0.0, 1.0]


def test_fofe_single_step_is_identity():
    x = t64([[3.0, -2.0]])
    for a in (0.1, 0.5, 0.99):
        np.testing.assert_array_equal(fofe_encode_recurrent(a, x).data, x.data)
        np.testing.assert_array_equal(fofe_encode_matrix(a, x).data, x.data)


def test_fofe_hand_unrolled():
    xs = t64([E1, E2, E1])
    rec = fofe_encode_recurrent(0.5, xs).data
    np.testing.assert_allclose(rec[0], E1)
    np.testing.assert_allclose(rec[1], [0.5, 1.0])
    np.testing.assert_allclose(rec[2], [1.25, 0.5])
    mat = fofe_encode_matrix(0.5, xs).data
    assert np.abs(mat - rec).max() < 1e-10


def test_fofe_zero_input_and_alpha_errors():
    assert not fofe_encode_recurrent(0.7, t64(np.zeros((4, 3)))).data.any()
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ConfigError):
            fofe_encode_recurrent(bad, t64([E1]))
        with pytest.raises(ConfigError):
            fofe_encode_matrix(bad, t64([E1]))
    with pytest.raises(ConfigError):
        CellConfig("FOFE", 3, 3, alpha=1.0)
    with pytest.raises(ConfigError):
        CellConfig("FOFE", 3, 4, alpha=0.5)


def test_fofe_forms_agree_long_sequence(rng):
    xs = t64(rng.normal(size=(50, 6)))
    diff = np.abs(fofe_encode_matrix(0.9, xs).data - fofe_encode_recurrent(0.9, xs).data).max()
    assert diff < 1e-9


@settings(max_examples=40, deadline=None)
@given(T=st.integers(1, 200), d=st.integers(1, 4), alpha=st.floats(0.05, 0.95), seed=st.integers(0, 10**6))
def test_fofe_forms_agree_property(T, d, alpha, seed):
    xs = t64(np.random.default_rng(seed).normal(size=(T, d)))
    diff = np.abs(fofe_encode_matrix(alpha, xs).data - fofe_encode_recurrent(alpha, xs).data).max()
    assert diff < 1e-9


def test_fofe_has_no_parameters_and_grads_reach_inputs(rng):
    cell = Cell(CellConfig("FOFE", 3, 3, alpha=0.7))
    assert cell.parameters() == [] and cell.num_params == 0
    xs = Tensor(rng.normal(size=(4, 2, 3)), requires_grad=True)
    proj = rng.normal(size=(4, 2, 3))
    assert grad_check(lambda: ad.sum(run_sequence(cell, xs).outputs * proj), [xs]).passed


# ----------------------------------------------------------------------------
# sequences


@pytest.mark.parametrize("kind", ["GRU", "MGU", "SGU", "FOFE"])
def test_single_step_sequence(kind, rng):
    cell = Cell(CellConfig(kind, 3, 3, alpha=0.5 if kind == "FOFE" else None), rng=rng)
    res = run_sequence(cell, Tensor(rng.normal(size=(1, 2, 3)).astype(np.float32)))
    np.testing.assert_array_equal(res.final.data, res.outputs.data[0])


@pytest.mark.parametrize("kind", ["GRU", "SGU", "FOFE"])
def test_padding_does_not_touch_final(kind, rng):
    cell = Cell(CellConfig(kind, 3, 3, alpha=0.9 if kind == "FOFE" else None), rng=rng, dtype=np.float64)
    xs = rng.normal(size=(3, 2, 3))
    a = run_sequence(cell, t64(xs), [3, 1]).final.data
    xs[1:, 1] = rng.normal(size=(2, 3)) * 50
    b = run_sequence(cell, t64(xs), [3, 1]).final.data
    np.testing.assert_array_equal(a, b)
    single = run_sequence(cell, t64(xs[:1, 1:]), [1]).final.data
    np.testing.assert_allclose(b[1], single[0], atol=1e-15)


@pytest.mark.parametrize("kind", ["GRU", "SGU", "FOFE"])
def test_zero_length_gives_zero_state(kind, rng):
    cell = Cell(CellConfig(kind, 2, 2, alpha=0.5 if kind == "FOFE" else None), rng=rng, dtype=np.float64)
    res = run_sequence(cell, t64(rng.normal(size=(3, 2, 2))), [2, 0])
    assert not res.final.data[1].any()


def test_gru_sequence_equals_manual_steps(rng):
    cell = Cell(CellConfig("GRU", 3, 4), rng=rng, dtype=np.float64)
    xs = t64(rng.normal(size=(5, 2, 3)))
    h = cell.zero_state(2, np.float64)
    for t in range(5):
        h = gru_step(cell.weights, h, xs[t])
    np.testing.assert_allclose(run_sequence(cell, xs).final.data, h.data, atol=1e-15)


def test_fofe_matrix_and_recurrent_sequence_modes_agree(rng):
    cell = Cell(CellConfig("FOFE", 3, 3, alpha=0.7))
    xs = t64(rng.normal(size=(6, 4, 3)))
    lens = [6, 3, 1, 0]
    m = run_sequence(cell, xs, lens, fofe_mode="matrix")
    r = run_sequence(cell, xs, lens, fofe_mode="recurrent")
    np.testing.assert_allclose(m.outputs.data, r.outputs.data, atol=1e-12)


def test_bifofe_example():
    fwd = Cell(CellConfig("FOFE", 2, 2, alpha=0.5))
    bwd = Cell(CellConfig("FOFE", 2, 2, alpha=0.5))
    xs = t64([[E1], [E2], [E1]])
    np.testing.assert_allclose(bi_encode(fwd, bwd, xs).final.data, [[1.25, 0.5, 1.25, 0.5]])


def test_bi_encode_symmetries(rng):
    cell = Cell(CellConfig("GRU", 2, 3), rng=rng, dtype=np.float64)
    a, b = rng.normal(size=2), rng.normal(size=2)
    pal = t64(np.stack([a, b, a])[:, None, :])
    fin = bi_encode(cell, cell, pal).final.data
    np.testing.assert_allclose(fin[:, :3], fin[:, 3:], atol=1e-15)

    xs = t64(rng.normal(size=(4, 3, 2)))
    lens = [4, 2, 3]
    fin = bi_encode(cell, cell, xs, lens).final.data
    rev = bi_encode(cell, cell, reverse_padded(xs, lens), lens).final.data
    np.testing.assert_allclose(rev, np.concatenate([fin[:, 3:], fin[:, :3]], axis=1), atol=1e-15)


def test_bi_encode_outputs_align_by_position(rng):
    cell = Cell(CellConfig("GRU", 2, 3), rng=rng, dtype=np.float64)
    xs = t64(rng.normal(size=(4, 1, 2)))
    out = bi_encode(cell, cell, xs).outputs.data
    back = run_sequence(cell, xs[::-1]).outputs.data
    np.testing.assert_allclose(out[0, 0, 3:], back[3, 0], atol=1e-15)
    np.testing.assert_allclose(out[3, 0, 3:], back[0, 0], atol=1e-15)


def test_bi_encode_size_mismatch():
    with pytest.raises(DimensionError):
        bi_encode(Cell(CellConfig("GRU", 2, 3)), Cell(CellConfig("GRU", 2, 4)), Tensor(np.zeros((2, 1, 2))))


# ----------------------------------------------------------------------------
# parameter accounting


def test_count_params_examples():
    assert count_params(CellConfig("FOFE", 7, 7, alpha=0.5)) == 0
    assert count_params(CellConfig("GRU", 3, 4)) == 84
    assert count_params(CellConfig("MGU", 3, 4)) == 56
    assert count_params(CellConfig("SGU", 3, 4)) == 42
    assert count_params(CellConfig("SGU", 3, 2)) == count_params(CellConfig("MGU", 3, 2)) == 20


@pytest.mark.parametrize("bias", [False, True])
@pytest.mark.parametrize("kind", list(CellKind))
def test_count_params_matches_allocation(kind, bias):
    for h in (1, 2, 3, 7):
        for x in (1, 4):
            cfg = CellConfig(kind, h if kind is CellKind.FOFE else x, h, alpha=0.5, bias=bias)
            walked = sum(int(np.prod(t.shape)) for t in init_weights(cfg, np.random.default_rng(0)).values())
            assert walked == count_params(cfg) == Cell(cfg).num_params


@settings(max_examples=60, deadline=None)
@given(h=st.integers(3, 64), x=st.integers(1, 64))
def test_param_ordering(h, x):
    s, m, g = (count_params(CellConfig(k, x, h)) for k in ("SGU", "MGU", "GRU"))
    assert s < m < g


def test_init_is_glorot_bounded():
    w = weights64("SGU", 6, 4)
    assert np.abs(w["W_h"].data).max() <= math.sqrt(6 / (10 + 6))
    assert np.abs(w["w_z"].data).max() <= math.sqrt(6 / (10 + 1))


# ----------------------------------------------------------------------------
# gradients


@pytest.mark.parametrize("kind", ["GRU", "MGU", "SGU"])
def test_step_gradients_random_configs(kind):
    rng = np.random.default_rng({"GRU": 1, "MGU": 2, "SGU": 3}[kind])
    for _ in range(20):
        h, x, b = (int(v) for v in rng.integers(1, 5, size=3))
        cell = Cell(CellConfig(kind, x, h, bias=bool(rng.integers(2))), rng=rng, dtype=np.float64)
        hp = Tensor(rng.uniform(-1, 1, size=(b, h)), requires_grad=True)
        xt = Tensor(rng.normal(size=(b, x)), requires_grad=True)
        rep = grad_check(lambda: ad.sum(cell.step(hp, xt)), [*cell.parameters(), hp, xt])
        assert rep.passed, rep
