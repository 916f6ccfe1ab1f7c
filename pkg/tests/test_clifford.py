import numpy as np
import pytest

from leakrb.clifford import (
    CNOT,
    GateSet,
    NativeGate,
    canonicalize,
    clifford_group,
    compile_to_gateset,
    enumerate_1q_cliffords,
    enumerate_2q_cliffords,
    extend_to_full_space,
    get_gateset,
    invert_sequence,
    is_clifford,
    leaked_action_histogram,
    pauli_image,
    permutation_gate,
    standard_chp_gateset,
    total_variation,
    trapped_ion_gateset,
)
from leakrb.hilbert import build_layout

XI = np.kron(np.array([[0, 1], [1, 0]]), np.eye(2))


@pytest.fixture(scope="module")
def g1():
    return clifford_group(1)


@pytest.fixture(scope="module")
def g2():
    return clifford_group(2)


def test_one_qubit_group(g1):
    els = enumerate_1q_cliffords()
    assert len(els) == 24
    assert g1.contains(np.eye(2))
    for a in range(24):
        for b in range(24):
            assert g1.contains(g1.u_comp[a] @ g1.u_comp[b])


def test_two_qubit_group_order(g2):
    assert len(enumerate_2q_cliffords()) == 11520
    assert len(g2) == 11520


def test_two_qubit_inverses(g2):
    inv = g2.inverse_table
    prods = np.einsum("kab,kbc->kac", g2.u_comp[inv], g2.u_comp)
    assert np.all(g2.indices_of(prods) == g2.identity_index)


def test_two_qubit_maps_paulis_to_paulis(g2):
    imgs = np.einsum("kab,bc,kdc->kad", g2.u_comp, XI, g2.u_comp.conj())
    for u, m in zip(g2.u_comp[:: 97], imgs[:: 97]):
        idx, phase = pauli_image(u, XI)
        assert abs(abs(phase) - 1) < 1e-10
    assert all(is_clifford(u) for u in g2.u_comp[:: 331])


def test_canonical_phase_invariance(g1):
    u = g1.u_comp[5]
    assert np.allclose(canonicalize(np.exp(0.7j) * u), canonicalize(u))


def test_full_space_extension():
    g = clifford_group(1)
    ident = g[g.identity_index]
    ext = extend_to_full_space(ident)
    assert np.allclose(ext.u_full, np.eye(3))
    x = g[g.index_of(np.array([[0, 1], [1, 0]]))]
    ux = extend_to_full_space(x).u_full
    assert ux[2, 2] == 1 and np.allclose(ux[2, :2], 0)


def test_block_diagonal_full_unitaries(g2):
    layout = build_layout(2)
    ci, li = layout.comp_indices, layout.leak_indices
    off = g2.u_full[:, ci[:, None], li[None, :]]
    assert np.all(off == 0)


def test_invert_sequence(g2, rng):
    ident = g2[g2.identity_index]
    assert invert_sequence([ident]).id == g2.identity_index
    c = g2[17]
    inv = invert_sequence([c], g2)
    assert g2.multiply(inv.id, c.id) == g2.identity_index
    assert invert_sequence([c, g2[g2.inverse_table[17]]], g2).id == g2.identity_index
    seq = [g2[i] for i in g2.sample(rng, 20)]
    prod = np.eye(4)
    for el in seq + [invert_sequence(seq, g2)]:
        prod = el.u_comp @ prod
    assert abs(abs(np.trace(prod)) ** 2 / 16 - 1) < 1e-10


def test_permutation_gates():
    layout = build_layout(2)
    assert np.allclose(permutation_gate(0, layout).u, np.eye(9))
    x = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]])
    assert np.allclose(permutation_gate(int("01", 2), layout).u, np.kron(np.eye(3), x))
    with pytest.raises(ValueError):
        permutation_gate(4, layout)


def test_compile_identity_and_cnot(g2):
    gs = standard_chp_gateset()
    assert compile_to_gateset(g2[g2.identity_index], gs) == ()
    word = compile_to_gateset(g2[g2.index_of(CNOT)], gs)
    assert word == ("CNOT",)


def test_compiled_words_reproduce_elements(g2):
    gs = trapped_ion_gateset()
    for i in range(0, len(g2), 1031):
        w = compile_to_gateset(g2[i], gs)
        assert g2.index_of(gs.word_unitary(w)) == i


def test_gateset_json_round_trip():
    gs = trapped_ion_gateset()
    again = GateSet.from_json(gs.to_json())
    assert [g.label for g in again.gates] == [g.label for g in gs.gates]
    assert np.allclose(again["RZZ(pi/2)"].matrix, gs["RZZ(pi/2)"].matrix)


def test_non_unitary_gate_rejected():
    with pytest.raises(ValueError):
        GateSet("bad", [NativeGate("A", (0,), np.diag([1.0, 2.0]))])


def test_identity_gateset_histogram_is_point_mass(g1):
    gs = GateSet("idle", [NativeGate("I[0]", (0,), np.eye(2)), NativeGate("I[1]", (1,), np.eye(2))])
    h = leaked_action_histogram(gs, 0)
    assert h[g1.identity_index] == pytest.approx(1.0)


@pytest.mark.parametrize("method", ["all-optimal", "compiled"])
def test_trapped_ion_histogram_near_uniform(method):
    gs = get_gateset("trapped-ion")
    h = leaked_action_histogram(gs, 0, method=method)
    assert h.shape == (24,)
    assert h.sum() == pytest.approx(1.0)
    assert total_variation(h, np.full(24, 1 / 24)) < 0.2


def test_all_optimal_is_swap_symmetric_for_trapped_ion():
    gs = get_gateset("trapped-ion")
    h0 = leaked_action_histogram(gs, 0)
    h1 = leaked_action_histogram(gs, 1)
    assert total_variation(h0, h1) < 1e-12
