import numpy as np
import pytest

from xraynet import ShapeError, Tensor


def test_construct_from_nested_list():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.shape == (2, 2)
    # Python float lists arrive as float64 and keep that precision; this is
    # what lets gradient checks run the same code paths in 64-bit.
    assert t.dtype == np.float64
    assert t.tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_construct_from_numpy_copies():
    src = np.ones((2, 3), dtype=np.float32)
    t = Tensor(src)
    src[0, 0] = 7.0
    assert t.numpy()[0, 0] == 1.0


def test_scalar_becomes_rank_one():
    assert Tensor(5.0).shape == (1,)
    assert Tensor(5.0).item() == 5.0


def test_backing_array_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.numpy()[0] = 9.0


def test_dtype_restricted_to_floats():
    assert Tensor([1, 2]).dtype == np.float32  # ints coerce to the working precision
    assert Tensor([1.0], dtype=np.float64).dtype == np.float64
    assert Tensor([1.0], dtype=np.float32).dtype == np.float32
    with pytest.raises(TypeError):
        Tensor([1.0], dtype=np.int32)


def test_zero_extent_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.ones((0, 3), dtype=np.float32))


def test_zeros_and_full():
    z = Tensor.zeros((2, 2))
    f = Tensor.full((3,), 2.5)
    assert float(z.numpy().sum()) == 0.0
    assert f.tolist() == [2.5, 2.5, 2.5]


def test_reshape_checks_size():
    t = Tensor(np.arange(6, dtype=np.float32))
    assert t.reshape((2, 3)).shape == (2, 3)
    # row-major order: element (n,c) of the reshape is data[n*3+c]
    assert t.reshape((2, 3)).numpy()[1, 0] == 3.0
    with pytest.raises(ShapeError):
        t.reshape((4, 2))


def test_astype_round_trip():
    t = Tensor([1.5, 2.5])
    d = t.astype(np.float64)
    assert d.dtype == np.float64
    assert d.astype(np.float32).tolist() == t.tolist()


def test_item_requires_single_element():
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]).item()
