import numpy as np
import pytest

from seattn.errors import ContractError
from seattn.gradcheck import grad_check, param_grad_check
from seattn.image_encoder import ImageEncoder
from seattn.tensor import Tensor


def test_shape_contract(rng):
    enc = ImageEncoder(rng)
    out = enc(Tensor(rng.uniform(-1, 1, (2, 3, 32, 32)).astype(np.float32)))
    assert out.regions.shape == (2, 64, 256)
    assert out.glob.shape == (2, 256)


@pytest.mark.parametrize("size,n_regions", [(16, 16), (32, 64), (64, 256)])
def test_region_count_follows_tap(rng, size, n_regions):
    enc = ImageEncoder(rng, image_size=size, channels=(4, 4, 4, 4), out_dim=8)
    assert enc(Tensor(np.zeros((1, 3, size, size), np.float32))).regions.shape == (1, n_regions, 8)


def test_constant_image_gives_identical_interior_regions(rng):
    enc = ImageEncoder(rng, image_size=32).to(np.float64)
    r = enc(Tensor(np.full((1, 3, 32, 32), 0.3))).regions.data[0].reshape(8, 8, -1)
    # zero padding breaks translation invariance at the border, so compare interior cells
    interior = r[2:6, 2:6].reshape(-1, r.shape[-1])
    np.testing.assert_allclose(interior, np.broadcast_to(interior[0], interior.shape), rtol=1e-12, atol=1e-12)


def test_constant_image_without_padding_effects(rng):
    enc = ImageEncoder(rng, image_size=32, channels=(4, 4, 4, 4), out_dim=5).to(np.float64)
    for conv in enc.convs:  # 3x3 kernels that only use their center tap see no padding
        conv.weight.data[:, :, [0, 0, 0, 1, 1, 2, 2, 2], [0, 1, 2, 0, 2, 0, 1, 2]] = 0
    r = enc(Tensor(np.full((1, 3, 32, 32), -0.4))).regions.data[0]
    np.testing.assert_allclose(r, np.broadcast_to(r[0], r.shape), rtol=1e-12)


@pytest.mark.parametrize("shape", [(1, 1, 32, 32), (1, 4, 32, 32), (1, 3, 16, 16)])
def test_bad_input_is_contract_error(rng, shape):
    with pytest.raises(ContractError):
        ImageEncoder(rng)(Tensor(np.zeros(shape, np.float32)))


def test_gradients(rng):
    enc = ImageEncoder(rng, image_size=8, channels=(3, 4, 5, 6), out_dim=4).to(np.float64)
    w = Tensor(rng.standard_normal((2, 4, 4)))

    def f(x):
        out = enc(x)
        return (out.regions * w).sum() + out.glob.sum()

    x0 = rng.uniform(-1, 1, (2, 3, 8, 8))
    assert grad_check(f, x0, tol=1e-3).passed
    for name, p in enc.named_parameters():
        rep = param_grad_check(lambda: f(Tensor(x0)), p, n_coords=4, name=name)
        assert rep.passed, rep.line()
