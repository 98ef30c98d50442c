import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from statetrace.errors import InvalidArgumentError
from statetrace.numerics import (
    TimeCourses,
    convolve_same,
    derive_seed,
    format_csv,
    gaussian_kernel,
    make_rng,
    read_csv,
)

from oracles import smooth


def test_kernel_std1_length_and_sum():
    w = gaussian_kernel(1.0)
    assert w.size == 7
    assert abs(w.sum() - 1.0) < 1e-12
    np.testing.assert_array_equal(w, w[::-1])


def test_kernel_std1_center_weight():
    # 1 / (1 + 2e^-1/2 + 2e^-2 + 2e^-9/2)
    expected = 1.0 / (1 + 2 * math.exp(-0.5) + 2 * math.exp(-2) + 2 * math.exp(-4.5))
    assert gaussian_kernel(1.0)[3] == pytest.approx(expected, abs=1e-15)
    assert gaussian_kernel(1.0)[3] == pytest.approx(0.39905, abs=1e-5)


def test_kernel_minimum_radius():
    assert gaussian_kernel(0.01).size == 3
    assert gaussian_kernel(1.0 / 3.0).size == 3
    assert gaussian_kernel(0.34).size == 5


@pytest.mark.parametrize("std", [0.0, -1.0, float("nan"), float("inf")])
def test_kernel_rejects_bad_std(std):
    with pytest.raises(InvalidArgumentError):
        gaussian_kernel(std)


@given(st.floats(min_value=0.05, max_value=20.0))
def test_kernel_positive_symmetric_decreasing(std):
    w = gaussian_kernel(std)
    r = w.size // 2
    assert w.size % 2 == 1
    assert r == max(1, math.ceil(3 * std))
    assert np.all(w > 0)
    np.testing.assert_array_equal(w, w[::-1])
    assert np.all(np.diff(w[r:]) < 0)
    assert abs(w.sum() - 1.0) < 1e-12


def test_convolve_delta_is_identity():
    x = np.array([3.0, -1.0, 2.5, 7.0])
    np.testing.assert_array_equal(convolve_same(x, [1.0]), x)


def test_convolve_hand_example():
    out = convolve_same([1, 2, 3, 4, 5], [0.25, 0.5, 0.25])
    np.testing.assert_allclose(out, [1.25, 2, 3, 4, 4.75], atol=1e-15)


def test_convolve_rejects_even_kernel():
    with pytest.raises(InvalidArgumentError):
        convolve_same([1.0, 2.0], [0.5, 0.5])


@given(
    st.floats(min_value=-1e3, max_value=1e3),
    st.integers(min_value=1, max_value=40),
    st.floats(min_value=0.1, max_value=10.0),
)
def test_convolve_constant_preserved(c, n, std):
    out = convolve_same(np.full(n, c), gaussian_kernel(std))
    np.testing.assert_allclose(out, c, rtol=1e-12, atol=1e-12)


@given(
    st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=30),
    st.floats(min_value=0.1, max_value=5.0),
)
def test_convolve_matches_loop_oracle(signal, std):
    np.testing.assert_allclose(convolve_same(signal, gaussian_kernel(std)), smooth(signal, std), atol=1e-9)


def test_rng_reproducible_and_keyed():
    a = make_rng(5).standard_normal(10)
    b = make_rng(5).standard_normal(10)
    c = make_rng(5, 1).standard_normal(10)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
    assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)
    assert 0 <= derive_seed(2**62, 7) < 2**63


def test_rng_identical_across_processes():
    code = "from statetrace.numerics import make_rng; print(make_rng(123, 4).random(5).tobytes().hex())"
    runs = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout for _ in range(2)]
    assert runs[0] == runs[1]
    assert runs[0].strip() == make_rng(123, 4).random(5).tobytes().hex()


def test_rng_rejects_negative_seed():
    with pytest.raises(InvalidArgumentError):
        make_rng(-1)


def test_timecourses_validation():
    with pytest.raises(InvalidArgumentError):
        TimeCourses("s", np.zeros((1, 3)))
    with pytest.raises(InvalidArgumentError):
        TimeCourses("s", np.zeros((4, 0)))
    with pytest.raises(InvalidArgumentError):
        TimeCourses("s", np.array([[1.0], [np.nan]]))
    tc = TimeCourses("s", [[1, 2], [3, 4], [5, 6]])
    assert (tc.n_time, tc.n_channels) == (3, 2)
    with pytest.raises(ValueError):
        tc.data[0, 0] = 9.0


def test_csv_round_trip(tmp_path):
    data = make_rng(0).standard_normal((6, 3))
    tc = TimeCourses("x", data)
    path = tmp_path / "x.csv"
    path.write_text(format_csv(tc))
    back = read_csv(path)
    assert back.subject_id == "x"
    np.testing.assert_array_equal(back.data, data)
    path.write_text(format_csv(tc, header=False))
    np.testing.assert_array_equal(read_csv(path, subject_id="y").data, data)


def test_csv_rejects_ragged_and_text(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2\n3\n")
    with pytest.raises(InvalidArgumentError):
        read_csv(path)
    path.write_text("a,b\n1,2\n3,x\n")
    with pytest.raises(InvalidArgumentError):
        read_csv(path)
