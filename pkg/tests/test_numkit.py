import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from veriforget.numkit import (
    BlockDiagMatrix,
    BlockLayout,
    FactorizationError,
    ParamVector,
    RangeError,
    StructuralError,
    blockdiag_matvec,
    blockdiag_solve,
    canonical_json,
    dequantize,
    fixed_point_codec,
    load_blockdiag,
    load_pvec,
    quantize,
    save_blockdiag,
    save_pvec,
    tree_sum,
)

from conftest import random_layout, random_spd_blockdiag


def single_block_layout(d, label="b"):
    return BlockLayout.from_sizes([(d, label)])


# -- layouts ------------------------------------------------------------------


def test_layout_partition():
    layout = BlockLayout.from_sizes([(3, "a"), (5, "b"), (2, "c")])
    covered = []
    for sl, _ in layout.slices():
        covered.extend(range(sl.start, sl.stop))
    assert covered == list(range(10))
    assert layout.total_dim == 10


def test_layout_gap_rejected():
    with pytest.raises(StructuralError):
        BlockLayout(blocks=((0, 3, "a"), (4, 2, "b")), total_dim=6)


def test_layout_duplicate_label_rejected():
    with pytest.raises(StructuralError):
        BlockLayout.from_sizes([(2, "a"), (3, "a")])


@given(st.lists(st.integers(min_value=1, max_value=9), min_size=1, max_size=6))
def test_layout_partition_property(sizes):
    layout = BlockLayout.from_sizes((s, f"b{i}") for i, s in enumerate(sizes))
    seen = np.zeros(layout.total_dim, dtype=int)
    for sl, _ in layout.slices():
        seen[sl] += 1
    assert (seen == 1).all()


def test_layout_json_round_trip():
    layout = BlockLayout.from_sizes([(3, "x"), (4, "y")])
    assert BlockLayout.from_json(layout.to_json()) == layout


# -- vectors / matrices ---------------------------------------------------------


def test_paramvector_rejects_nan():
    layout = single_block_layout(2)
    with pytest.raises(StructuralError):
        ParamVector(values=np.array([1.0, np.nan]), layout=layout)


def test_paramvector_immutable():
    v = ParamVector(values=np.ones(2), layout=single_block_layout(2))
    with pytest.raises(ValueError):
        v.values[0] = 2.0


def test_blockdiag_rejects_asymmetric():
    layout = single_block_layout(2)
    with pytest.raises(StructuralError):
        BlockDiagMatrix(blocks=(np.array([[1.0, 2.0], [0.0, 1.0]]),),
                        layout=layout)


def test_matvec_identity():
    rng = np.random.default_rng(0)
    layout = random_layout(rng)
    eye = BlockDiagMatrix(
        blocks=tuple(np.eye(s) for _, s, _ in layout.blocks), layout=layout
    )
    v = ParamVector(values=rng.normal(size=layout.total_dim), layout=layout)
    assert np.array_equal(blockdiag_matvec(eye, v).values, v.values)


def test_matvec_hand_case():
    layout = single_block_layout(2)
    a = BlockDiagMatrix(blocks=(np.array([[2.0, 1.0], [1.0, 2.0]]),),
                        layout=layout)
    x = ParamVector(values=np.array([1.0, 1.0]), layout=layout)
    assert np.allclose(blockdiag_matvec(a, x).values, [3.0, 3.0])


def test_matvec_vs_dense_oracle():
    rng = np.random.default_rng(1)
    layout = BlockLayout.from_sizes([(8, "a"), (10, "b"), (6, "c")])
    a = random_spd_blockdiag(rng, layout)
    x = ParamVector(values=rng.normal(size=24), layout=layout)
    got = blockdiag_matvec(a, x).values
    want = a.dense() @ x.values
    assert np.abs(got - want).max() <= 1e-12


def test_matvec_layout_mismatch():
    rng = np.random.default_rng(2)
    a = random_spd_blockdiag(rng, single_block_layout(3))
    x = ParamVector(values=np.zeros(3), layout=single_block_layout(3, "other"))
    with pytest.raises(StructuralError):
        blockdiag_matvec(a, x)


def test_solve_identity():
    layout = single_block_layout(4)
    eye = BlockDiagMatrix(blocks=(np.eye(4),), layout=layout)
    v = ParamVector(values=np.arange(4.0), layout=layout)
    assert np.allclose(blockdiag_solve(eye, v).values, v.values)


def test_solve_hand_2x2():
    layout = single_block_layout(2)
    a = BlockDiagMatrix(blocks=(np.array([[2.0, 1.0], [1.0, 2.0]]),),
                        layout=layout)
    y = ParamVector(values=np.array([1.0, 0.0]), layout=layout)
    x = blockdiag_solve(a, y)
    assert np.abs(x.values - np.array([2 / 3, -1 / 3])).max() <= 1e-12


def test_solve_residual_random_spd():
    rng = np.random.default_rng(3)
    layout = BlockLayout.from_sizes([(32, "w")])
    a = random_spd_blockdiag(rng, layout)
    y = ParamVector(values=rng.normal(size=32), layout=layout)
    x = blockdiag_solve(a, y)
    resid = np.abs(a.dense() @ x.values - y.values).max()
    assert resid <= 1e-9 * (1 + np.abs(y.values).max())


def test_solve_non_spd_names_block():
    layout = BlockLayout.from_sizes([(2, "good"), (2, "bad")])
    a = BlockDiagMatrix(
        blocks=(np.eye(2), np.array([[1.0, 0.0], [0.0, -1.0]])), layout=layout
    )
    y = ParamVector(values=np.zeros(4), layout=layout)
    with pytest.raises(FactorizationError, match="bad"):
        blockdiag_solve(a, y)


# -- fixed point -----------------------------------------------------------------


def test_quantize_zero_vector():
    fv = quantize(np.zeros(5), 8, 1.0)
    assert (fv.ints == 0).all()


def test_quantize_dyadic_exact():
    fv = quantize(np.array([1.0]), 4, 2.0)
    assert fv.ints[0] == 16
    assert fv.dequantize()[0] == 1.0


def test_quantize_out_of_range_names_index():
    with pytest.raises(RangeError, match=r"x\[2\]"):
        quantize(np.array([0.0, 0.5, 3.0]), 8, 1.0)


def test_round_half_even():
    # 0.5 * 2^1 = 1.0 rounds to 0 under half-even at frac_bits=0... use
    # explicit midpoints at frac_bits=1: 0.25 -> int 0.5 -> rounds to 0,
    # 0.75 -> int 1.5 -> rounds to 2
    fv = quantize(np.array([0.25, 0.75]), 1, 2.0)
    assert fv.ints.tolist() == [0, 2]


def test_round_trip_bound_exhaustive():
    rng = np.random.default_rng(4)
    x = rng.uniform(-8.0, 8.0, size=10_000)
    fv = quantize(x, 24, 8.0)
    assert np.abs(fv.dequantize() - x).max() <= 2.0**-25


@given(
    st.lists(st.floats(min_value=-4.0, max_value=4.0), min_size=1, max_size=50),
    st.integers(min_value=1, max_value=30),
)
def test_round_trip_property(xs, f):
    x = np.array(xs)
    fv = quantize(x, f, 4.0)
    assert np.abs(fv.dequantize() - x).max() <= 2.0 ** (-f - 1)


def test_codec_dequantize_pair():
    layout = single_block_layout(3)
    v = ParamVector(values=np.array([0.5, -0.25, 1.0]), layout=layout)
    fv = fixed_point_codec(v, 10, 2.0)
    back = dequantize(fv, layout)
    assert np.array_equal(back.values, v.values)


def test_frac_bits_cap():
    with pytest.raises(ValueError):
        quantize(np.zeros(1), 41, 1.0)


# -- reductions / io ----------------------------------------------------------------


def test_tree_sum_deterministic():
    rng = np.random.default_rng(5)
    a = rng.normal(size=5000)
    s1 = tree_sum(a)
    s2 = tree_sum(a.copy())
    assert s1 == s2


def test_tree_sum_matches_exact():
    rng = np.random.default_rng(6)
    a = rng.normal(size=3000)
    assert abs(tree_sum(a) - np.sum(a, dtype=np.longdouble)) < 1e-10


def test_canonical_json_stable():
    assert canonical_json({"b": 1, "a": 2}) == canonical_json({"a": 2, "b": 1})


def test_pvec_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    layout = BlockLayout.from_sizes([(3, "a"), (2, "b")])
    v = ParamVector(values=rng.normal(size=5), layout=layout)
    p = str(tmp_path / "v.pvec")
    save_pvec(p, v)
    w = load_pvec(p)
    assert np.array_equal(w.values, v.values)
    assert w.layout == v.layout


def test_pvec_detects_corruption(tmp_path):
    layout = single_block_layout(2)
    v = ParamVector(values=np.array([1.0, 2.0]), layout=layout)
    p = str(tmp_path / "v.pvec")
    save_pvec(p, v)
    with open(p + ".bin", "r+b") as fh:
        fh.seek(0)
        fh.write(b"\xff")
    with pytest.raises(StructuralError):
        load_pvec(p)


def test_blockdiag_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    layout = BlockLayout.from_sizes([(4, "a"), (3, "b")])
    m = random_spd_blockdiag(rng, layout)
    p = str(tmp_path / "m.pvec")
    save_blockdiag(p, m)
    m2 = load_blockdiag(p)
    assert all(np.array_equal(x, y) for x, y in zip(m.blocks, m2.blocks))
    assert m2.layout == layout
