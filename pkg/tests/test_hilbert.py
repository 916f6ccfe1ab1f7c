import numpy as np
import pytest

from leakrb.hilbert import (
    DensityOperator,
    QuantumChannel,
    SpaceLayout,
    apply_channel,
    build_layout,
    channel_power,
    choi_min_eigenvalue,
    identity_channel,
    is_trace_preserving,
    project_computational,
    random_unitary,
    subspace_projectors,
    unitary_to_channel,
    unvec,
    vec,
)
from leakrb.noise import depolarizing_channel, leakage_channel


def test_layout_dimensions():
    one, two = build_layout(1), build_layout(2)
    assert (one.d, one.d_C, one.d_L) == (3, 2, 1)
    assert (two.d, two.d_C, two.d_L) == (9, 4, 5)
    assert two.index_of("0l") != two.index_of("l0")


def test_layout_ordering(layout2):
    assert list(layout2.labels) == ["00", "01", "0l", "10", "11", "1l", "l0", "l1", "ll"]
    assert list(layout2.comp_indices) == [0, 1, 3, 4]
    assert layout2.comp_labels() == ["00", "01", "10", "11"]
    assert sorted(layout2.leak_labels()) == ["0l", "1l", "l0", "l1", "ll"]


def test_layout_rejects_three_qubits():
    with pytest.raises(ValueError):
        SpaceLayout(3)


def test_vec_is_column_stacking():
    m = np.arange(4).reshape(2, 2)
    assert list(vec(m)) == [0, 2, 1, 3]
    assert np.array_equal(unvec(vec(m)), m)


def test_projector_ranks(layout1, layout2):
    pc, pl = subspace_projectors(layout1)
    assert np.linalg.matrix_rank(pc.matrix) == 2
    assert np.allclose(np.diag(pc.matrix), [1, 1, 0])
    pc2, pl2 = subspace_projectors(layout2)
    assert np.linalg.matrix_rank(pl2.matrix) == 5
    assert np.allclose(pc2.matrix + pl2.matrix, np.eye(9))


def test_identity_unitary_gives_identity_superop(layout2):
    ch = unitary_to_channel(layout2, np.eye(9))
    assert np.allclose(ch.superoperator, np.eye(81))


def test_x_gate_swaps_populations_and_fixes_leak(layout1):
    x = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]])
    ch = unitary_to_channel(layout1, x)
    for src, dst in (("0", "1"), ("1", "0"), ("l", "l")):
        out = ch(layout1.basis_state(src))
        assert np.allclose(out.matrix, layout1.basis_state(dst).matrix)


def test_random_unitary_channel_is_cp(layout2, rng):
    u = random_unitary(9, rng)
    ch = unitary_to_channel(layout2, u)
    assert choi_min_eigenvalue(ch.superoperator) >= -1e-9
    assert is_trace_preserving(ch.superoperator)


def test_non_unitary_rejected(layout1):
    with pytest.raises(ValueError):
        unitary_to_channel(layout1, np.diag([1.0, 0.5, 1.0]))


def test_bad_tp_flag_rejected(layout1):
    with pytest.raises(ValueError):
        QuantumChannel(layout1, 0.5 * np.eye(9), tp_flag=True)


def test_apply_identity(layout2, rng):
    u = random_unitary(9, rng)
    rho = DensityOperator(layout2, u @ layout2.basis_state("01").matrix @ u.conj().T)
    out = apply_channel(identity_channel(layout2), rho)
    assert np.allclose(out.matrix, rho.matrix)


def test_full_depolarizing_gives_maximally_mixed(layout1):
    out = apply_channel(depolarizing_channel(1.0, layout1), layout1.basis_state("0"))
    assert np.allclose(out.matrix, np.diag([0.5, 0.5, 0.0]))


def test_leakage_no_seepage_keeps_ninety_percent(layout2):
    pc, _ = subspace_projectors(layout2)
    rho = DensityOperator(layout2, pc.matrix / 4)
    out = apply_channel(leakage_channel(0.1, False, layout2), rho)
    assert pc.expectation(out) == pytest.approx(0.9, abs=1e-12)


def test_channel_power(layout2):
    ch = depolarizing_channel(0.03, layout2).compose(leakage_channel(0.01, True, layout2))
    assert np.allclose(channel_power(ch, 0).superoperator, np.eye(81))
    assert np.allclose(channel_power(ch, 1).superoperator, ch.superoperator)
    seq = np.eye(81)
    for _ in range(13):
        seq = ch.superoperator @ seq
    assert np.max(np.abs(channel_power(ch, 13).superoperator - seq)) < 1e-10


def test_channel_power_negative():
    with pytest.raises(ValueError):
        channel_power(identity_channel(build_layout(1)), -1)


def test_project_computational(layout1):
    rho = layout1.basis_state("1")
    assert np.allclose(project_computational(rho).matrix, rho.matrix)
    assert np.allclose(project_computational(layout1.basis_state("l")).matrix, 0)
    m = np.zeros((3, 3))
    m[np.ix_([0, 2], [0, 2])] = 0.5
    out = project_computational(DensityOperator(layout1, m))
    assert np.allclose(out.matrix, np.diag([0.5, 0, 0]))
