import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from bfan.boundary_gt import canny_boundary, dilate, edge_agreement, morph_boundary_oracle
from bfan.data import gen_synthetic
from bfan.errors import ContractViolation


def square(n=8, lo=2, hi=6):
    m = np.zeros((n, n), dtype=np.uint8)
    m[lo:hi, lo:hi] = 1
    return m


@st.composite
def blob_masks(draw):
    # smooth random blobs: thresholded, blurred noise, like object masks
    seed = draw(st.integers(0, 2**31 - 1))
    size = draw(st.sampled_from([16, 24, 32]))
    rng = np.random.default_rng(seed)
    field = ndimage.gaussian_filter(rng.normal(size=(size, size)), draw(st.floats(1.0, 3.0)))
    return (field > draw(st.floats(-0.1, 0.1))).astype(np.uint8)


def test_constant_masks_have_no_edges():
    assert not canny_boundary(np.zeros((16, 16))).any()
    assert not canny_boundary(np.ones((16, 16))).any()


def test_square_matches_morphological_ring():
    m = square()
    edges = canny_boundary(m)
    ring = morph_boundary_oracle(m)
    assert ring.sum() == 12
    near_ring = dilate(ring, 1)
    assert not (edges.astype(bool) & ~near_ring).any()
    covered = ring.astype(bool) & dilate(edges, 1)
    assert covered.sum() / ring.sum() >= 0.95


def test_oracle_examples():
    assert not morph_boundary_oracle(np.zeros((5, 5))).any()
    one = np.zeros((5, 5), dtype=np.uint8)
    one[2, 3] = 1
    np.testing.assert_array_equal(morph_boundary_oracle(one), one)
    ring = morph_boundary_oracle(square())
    want = square()
    want[3:5, 3:5] = 0
    np.testing.assert_array_equal(ring, want)


def test_non_binary_rejected():
    with pytest.raises(ContractViolation, match="boundary-gt"):
        canny_boundary(np.full((4, 4), 0.5))
    with pytest.raises(ContractViolation):
        canny_boundary(square(), low=0.4, high=0.3)


def test_output_dtype_and_sparsity():
    for s in gen_synthetic(5, 64, seed=3):
        b = canny_boundary(s.mask)
        assert b.dtype == np.uint8
        assert set(np.unique(b)) <= {0, 1}
        assert b.sum() <= 0.25 * b.size
        np.testing.assert_array_equal(b, s.boundary)


@given(blob_masks())
def test_edges_lie_near_true_boundary(mask):
    edges = canny_boundary(mask).astype(bool)
    assert not (edges & ~dilate(morph_boundary_oracle(mask), 1)).any()


@given(blob_masks(), st.integers(-4, 4), st.integers(-4, 4))
def test_translation_equivariance(mask, dy, dx):
    # pad so the object never reaches the frame in either position
    n = mask.shape[0]
    big = np.zeros((n + 24, n + 24), dtype=np.uint8)
    big[12:12 + n, 12:12 + n] = mask
    shifted = np.roll(big, (dy, dx), axis=(0, 1))
    a = np.roll(canny_boundary(big), (dy, dx), axis=(0, 1))
    b = canny_boundary(shifted)
    np.testing.assert_array_equal(a, b)


@given(arrays(np.bool_, (12, 12)))
def test_output_depends_only_on_values(mask):
    as_int = canny_boundary(mask.astype(np.int64))
    as_float = canny_boundary(mask.astype(np.float32))
    as_u8 = canny_boundary(np.ascontiguousarray(mask.astype(np.uint8)[::-1][::-1]))
    np.testing.assert_array_equal(as_int, as_float)
    np.testing.assert_array_equal(as_int, as_u8)


def test_edge_agreement_counts():
    ref = np.zeros((6, 6), dtype=bool)
    ref[2, 1:5] = True
    pred = np.zeros_like(ref)
    pred[3, 1:5] = True   # one row off: within tolerance
    pred[0, 0] = True     # far away
    assert edge_agreement(pred, ref, 1) == (4, 5, 4, 4)
    assert edge_agreement(pred, ref, 0) == (0, 5, 0, 4)
