"""Kernel backends: exact segment reductions and sequential scatter-adds.

Both backends (compiled extension and pure-numpy fallback) promise bitwise
identical results. Segment sums must be *correctly rounded* exact sums per
(segment, column) cell — order independent — which is what makes model
aggregation a true multiset operation.
"""

import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcgnn import kernels
from bcgnn.kernels import pykernels

try:
    from bcgnn.kernels import _ckernels
except ImportError:  # pragma: no cover - build-dependent
    _ckernels = None

BACKENDS = [pykernels] + ([_ckernels] if _ckernels is not None else [])
BACKEND_IDS = ["python"] + (["compiled"] if _ckernels is not None else [])

needs_compiled = pytest.mark.skipif(
    _ckernels is None, reason="compiled extension not built"
)


def bits(a):
    """Raw bytes of an array — the strictest equality we can ask for."""
    return np.ascontiguousarray(a).tobytes()


def random_segments(rng, e, d, n_seg, spread=0):
    vals = rng.standard_normal((e, d))
    if spread:
        vals *= 10.0 ** rng.integers(-spread, spread + 1, size=(e, d))
    seg = rng.integers(0, n_seg, size=e).astype(np.int64)
    return np.ascontiguousarray(vals), seg


class TestSegmentSumExactness:
    """segment_sum returns the correctly rounded exact sum of each cell."""

    @pytest.mark.parametrize("impl", BACKENDS, ids=BACKEND_IDS)
    def test_matches_fsum_oracle(self, impl):
        rng = np.random.default_rng(7)
        vals, seg = random_segments(rng, 400, 5, 9)
        out = impl.segment_sum(vals, seg, 9)
        for s in range(9):
            rows = vals[seg == s]
            for j in range(5):
                exact = math.fsum(rows[:, j]) if rows.size else 0.0
                assert out[s, j] == exact

    @pytest.mark.parametrize("impl", BACKENDS, ids=BACKEND_IDS)
    def test_adversarial_exponent_spread(self, impl):
        """Catastrophic cancellation and 24-decade magnitude spreads."""
        rng = np.random.default_rng(11)
        vals, seg = random_segments(rng, 600, 3, 4, spread=12)
        # plant exact-cancellation pairs that naive summation gets wrong
        vals[0:2, 0] = [1e16, 1.0]
        vals[2, 0] = -1e16
        out = impl.segment_sum(vals, seg, 4)
        for s in range(4):
            rows = vals[seg == s]
            for j in range(3):
                assert out[s, j] == math.fsum(rows[:, j])

    @pytest.mark.parametrize("impl", BACKENDS, ids=BACKEND_IDS)
    def test_permutation_equivariance_bitwise(self, impl):
        """Shuffling rows (values and segment ids together) changes nothing."""
        rng = np.random.default_rng(3)
        vals, seg = random_segments(rng, 500, 8, 11, spread=10)
        base = impl.segment_sum(vals, seg, 11)
        for trial in range(5):
            perm = rng.permutation(len(seg))
            shuffled = impl.segment_sum(
                np.ascontiguousarray(vals[perm]), seg[perm], 11
            )
            assert bits(base) == bits(shuffled)

    @pytest.mark.parametrize("impl", BACKENDS, ids=BACKEND_IDS)
    def test_empty_inputs_and_empty_segments(self, impl):
        out = impl.segment_sum(np.zeros((0, 4)), np.zeros(0, dtype=np.int64), 3)
        assert out.shape == (3, 4)
        assert not out.any()
        vals = np.ones((2, 1))
        seg = np.array([2, 2], dtype=np.int64)
        out = impl.segment_sum(vals, seg, 5)
        assert out[2, 0] == 2.0 and out[[0, 1, 3, 4]].sum() == 0.0

    @pytest.mark.parametrize("impl", BACKENDS, ids=BACKEND_IDS)
    def test_nonfinite_cells_propagate(self, impl):
        vals = np.array([[1.0, np.inf], [2.0, 1.0], [np.nan, -np.inf]])
        seg = np.array([0, 0, 1], dtype=np.int64)
        out = impl.segment_sum(np.ascontiguousarray(vals), seg, 2)
        assert out[0, 0] == 3.0
        assert out[0, 1] == np.inf
        assert np.isnan(out[1, 0])
        assert out[1, 1] == -np.inf

    @given(
        data=st.lists(
            st.tuples(
                st.integers(0, 3),
                st.floats(
                    allow_nan=False,
                    allow_infinity=False,
                    width=64,
                    min_value=-1e300,
                    max_value=1e300,
                ),
            ),
            min_size=0,
            max_size=60,
        )
    )
    @settings(max_examples=120, deadline=None)
    def test_property_exact_and_backend_agnostic(self, data):
        seg = np.array([s for s, _ in data], dtype=np.int64)
        vals = np.ascontiguousarray([[v] for _, v in data], dtype=np.float64).reshape(
            len(data), 1
        )
        outs = [impl.segment_sum(vals, seg, 4) for impl in BACKENDS]
        for s in range(4):
            expect = math.fsum(vals[seg == s, 0]) if len(data) else 0.0
            assert outs[0][s, 0] == expect
        for other in outs[1:]:
            assert bits(outs[0]) == bits(other)


class TestSegmentMeanAndMax:
    @pytest.mark.parametrize("impl", BACKENDS, ids=BACKEND_IDS)
    def test_mean_counts_and_empty_rows(self, impl):
        vals = np.ascontiguousarray([[2.0], [4.0], [10.0]])
        seg = np.array([1, 1, 3], dtype=np.int64)
        out, counts = impl.segment_mean(vals, seg, 4)
        assert counts.tolist() == [0, 2, 0, 1]
        assert out[1, 0] == 3.0 and out[3, 0] == 10.0
        assert out[0, 0] == 0.0 and out[2, 0] == 0.0

    @pytest.mark.parametrize("impl", BACKENDS, ids=BACKEND_IDS)
    def test_max_keeps_first_occurrence_on_ties(self, impl):
        vals = np.ascontiguousarray([[1.0, -5.0], [1.0, -2.0], [0.5, -2.0]])
        seg = np.array([0, 0, 0], dtype=np.int64)
        out, arg = impl.segment_max(vals, seg, 2)
        assert out[0].tolist() == [1.0, -2.0]
        assert arg[0].tolist() == [0, 1]
        assert arg[1].tolist() == [-1, -1]
        assert out[1].tolist() == [0.0, 0.0]

    @pytest.mark.parametrize("impl", BACKENDS, ids=BACKEND_IDS)
    def test_max_handles_negative_first_rows(self, impl):
        vals = np.ascontiguousarray([[-3.0], [-7.0]])
        seg = np.array([0, 0], dtype=np.int64)
        out, arg = impl.segment_max(vals, seg, 1)
        assert out[0, 0] == -3.0 and arg[0, 0] == 0


class TestScatterAdd:
    @pytest.mark.parametrize("impl", BACKENDS, ids=BACKEND_IDS)
    def test_rows_accumulate_repeated_indices(self, impl):
        dst = np.zeros((3, 2))
        idx = np.array([1, 1, 0], dtype=np.int64)
        vals = np.ascontiguousarray([[1.0, 2.0], [10.0, 20.0], [5.0, 5.0]])
        impl.scatter_add_rows(dst, idx, vals)
        assert dst.tolist() == [[5.0, 5.0], [11.0, 22.0], [0.0, 0.0]]

    @pytest.mark.parametrize("impl", BACKENDS, ids=BACKEND_IDS)
    def test_flat_accumulates_sequentially(self, impl):
        dst = np.zeros(4)
        idx = np.array([3, 3, 3, 1], dtype=np.int64)
        vals = np.array([1e16, 1.0, -1e16, 2.0])
        impl.scatter_add_flat(dst, idx, vals)
        # sequential order: (1e16 + 1) loses the 1, then cancels to 0
        assert dst[3] == 0.0 and dst[1] == 2.0

    @needs_compiled
    def test_backends_agree_bitwise_on_random_scatters(self):
        rng = np.random.default_rng(5)
        idx = rng.integers(0, 20, size=300).astype(np.int64)
        vals = np.ascontiguousarray(
            rng.standard_normal((300, 6)) * 10.0 ** rng.integers(-9, 10, (300, 6))
        )
        a = np.zeros((20, 6))
        b = np.zeros((20, 6))
        pykernels.scatter_add_rows(a, idx, vals)
        _ckernels.scatter_add_rows(b, idx, vals)
        assert bits(a) == bits(b)


@needs_compiled
class TestBackendParity:
    """The compiled extension and the fallback are bitwise interchangeable."""

    def test_segment_kernels_bitwise_equal(self):
        rng = np.random.default_rng(17)
        for trial in range(20):
            e = int(rng.integers(0, 300))
            d = int(rng.integers(1, 9))
            n_seg = int(rng.integers(1, 25))
            vals, seg = random_segments(rng, e, d, n_seg, spread=12)
            assert bits(pykernels.segment_sum(vals, seg, n_seg)) == bits(
                _ckernels.segment_sum(vals, seg, n_seg)
            )
            pm, pc = pykernels.segment_mean(vals, seg, n_seg)
            cm, cc = _ckernels.segment_mean(vals, seg, n_seg)
            assert bits(pm) == bits(cm) and np.array_equal(pc, cc)
            px, pa = pykernels.segment_max(vals, seg, n_seg)
            cx, ca = _ckernels.segment_max(vals, seg, n_seg)
            assert bits(px) == bits(cx) and np.array_equal(pa, ca)

    def test_nonfinite_parity(self):
        vals = np.ascontiguousarray(
            [[np.inf, 1.0], [-np.inf, np.nan], [1e308, 1e308], [1e308, -1.0]]
        )
        seg = np.array([0, 0, 1, 1], dtype=np.int64)
        p = pykernels.segment_sum(vals, seg, 2)
        c = _ckernels.segment_sum(vals, seg, 2)
        assert np.array_equal(np.isnan(p), np.isnan(c))
        mask = ~np.isnan(p)
        assert bits(p[mask]) == bits(c[mask])

    def test_overflowing_exact_sum_degrades_identically(self):
        """Finite inputs whose exact sum exceeds the double range fall back
        to sequential summation in both backends."""
        for xs in ([1e308, 1e308], [1e308, 1e308, -1e308, -1e308], [-1e308, -1e308]):
            vals = np.ascontiguousarray([[x] for x in xs])
            seg = np.zeros(len(xs), dtype=np.int64)
            p = pykernels.segment_sum(vals, seg, 1)[0, 0]
            c = _ckernels.segment_sum(vals, seg, 1)[0, 0]
            seq = 0.0
            for x in xs:
                seq += x
            assert p == c == seq


class TestBackendSelection:
    def test_backend_name_reports_selection(self):
        assert kernels.backend_name() in ("compiled", "python")

    def test_env_var_forces_python_backend(self):
        env = dict(os.environ, BCGNN_PURE_PYTHON="1")
        out = subprocess.run(
            [sys.executable, "-c", "import bcgnn.kernels as k; print(k.backend_name())"],
            capture_output=True,
            text=True,
            env=env,
            check=True,
        )
        assert out.stdout.strip() == "python"
