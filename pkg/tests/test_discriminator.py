import numpy as np
import pytest

from seattn.discriminator import DiscConfig, Discriminator, DownBlock
from seattn.errors import ConfigurationError, ContractError
from seattn.functional import downsample_avg2x
from seattn.gradcheck import grad_check, param_grad_check
from seattn.tensor import Tensor, grad, norm


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def tiny(rng):
    return Discriminator(DiscConfig(image_size=8, channels=(4, 5), sent_dim=6, joint_channels=3), rng).to(np.float64)


def test_downblock_shape(rng):
    blk = DownBlock(32, 64, rng)
    assert blk(Tensor(np.zeros((1, 32, 32, 32), np.float32))).shape == (1, 64, 16, 16)


def test_downblock_zero_residual(rng):
    blk = DownBlock(3, 4, rng).to(np.float64)
    for conv in (blk.conv1, blk.conv2):
        conv.weight.data[:] = 0
        conv.bias.data[:] = 0
    x = T(rng.standard_normal((2, 3, 6, 6)))
    np.testing.assert_allclose(blk(x).data, blk.skip(downsample_avg2x(x)).data, rtol=1e-12)


def test_downblock_odd_extent(rng):
    with pytest.raises(ConfigurationError):
        DownBlock(3, 4, rng)(Tensor(np.zeros((1, 3, 5, 5), np.float32)))


def test_downblock_gradient(rng):
    blk = DownBlock(2, 3, rng).to(np.float64)
    w = T(rng.standard_normal((2, 3, 2, 2)))
    assert grad_check(lambda x: (blk(x) * w).sum(), rng.standard_normal((2, 2, 4, 4)), tol=1e-3).passed


def test_score_shape(rng):
    d = Discriminator(DiscConfig(), rng)
    out = d(Tensor(rng.uniform(-1, 1, (5, 3, 32, 32)).astype(np.float32)),
            Tensor(rng.standard_normal((5, 256)).astype(np.float32)))
    assert out.shape == (5,)


def test_different_sentences_different_scores(rng):
    d = tiny(rng)
    x = T(rng.uniform(-1, 1, (1, 3, 8, 8)))
    a = d(x, T(rng.standard_normal((1, 6)))).item()
    b = d(x, T(rng.standard_normal((1, 6)))).item()
    assert a != b


@pytest.mark.parametrize("img,sent", [((1, 3, 16, 16), (1, 6)), ((1, 1, 8, 8), (1, 6)), ((1, 3, 8, 8), (2, 6)),
                                       ((1, 3, 8, 8), (1, 5))])
def test_size_mismatch_is_contract_error(rng, img, sent):
    with pytest.raises(ContractError):
        tiny(rng)(T(np.zeros(img)), T(np.zeros(sent)))


def test_config_validates_schedule():
    with pytest.raises(ConfigurationError):
        DiscConfig(image_size=32, channels=(32, 64))


def test_output_unbounded(rng):
    d = tiny(rng)
    d.out.bias.data[:] = 50.0
    assert d(T(np.zeros((1, 3, 8, 8))), T(np.zeros((1, 6)))).item() > 1.0


def test_input_and_sentence_grads_available_with_create_graph(rng):
    d = tiny(rng)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 8, 8)), requires_grad=True)
    e = Tensor(rng.standard_normal((2, 6)), requires_grad=True)
    gx, ge = grad(d(x, e).sum(), [x, e], create_graph=True)
    assert gx.shape == x.shape and ge.shape == e.shape
    assert gx.requires_grad and ge.requires_grad


def test_second_order_finite_difference_of_gradient(rng):
    """d/dW of ||grad_x D|| + ||grad_e D|| compared with differences of that quantity."""
    d = tiny(rng)
    x0, e0 = rng.uniform(-1, 1, (2, 3, 8, 8)), rng.standard_normal((2, 6))

    def gnorm():
        x = Tensor(x0, requires_grad=True)
        e = Tensor(e0, requires_grad=True)
        from seattn.tensor import set_grad_enabled

        with set_grad_enabled(True):
            gx, ge = grad(d(x, e).sum(), [x, e], create_graph=True)
            return norm(gx) + norm(ge)

    for name, p in d.named_parameters():
        rep = param_grad_check(gnorm, p, n_coords=3, name=name)
        assert rep.passed, rep.line()


def test_deterministic(rng):
    d = tiny(rng)
    x, e = T(rng.standard_normal((2, 3, 8, 8))), T(rng.standard_normal((2, 6)))
    assert d(x, e).data.tobytes() == d(x, e).data.tobytes()
