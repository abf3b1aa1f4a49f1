# File containing tests of the channel module.
import numpy as np
import pytest

from modules.channel import AWGN_UNIT, RAYLEIGH_IID_BLOCK, ChannelException, ChannelRealization, sample_channel, \
    transmit
from modules.codebook import build_factor_graph, default_codebook, encode


def test_awgn_gains_are_exactly_one():
    chan = sample_channel(AWGN_UNIT, (2, 6, 4), 0.1, np.random.default_rng(1))
    assert chan.H.shape == (2, 6, 4)
    assert np.all(chan.H == 1 + 0j)


def test_rayleigh_gains_have_unit_power():
    chan = sample_channel(RAYLEIGH_IID_BLOCK, (4, 10, 10000), 1.0, np.random.default_rng(7))
    assert 0.99 <= np.mean(np.abs(chan.H) ** 2) <= 1.01


def test_same_seed_gives_the_same_realization():
    a = sample_channel(RAYLEIGH_IID_BLOCK, (2, 6, 4), 0.3, np.random.default_rng(42))
    b = sample_channel(RAYLEIGH_IID_BLOCK, (2, 6, 4), 0.3, np.random.default_rng(42))
    assert np.array_equal(a.H, b.H)


def test_noiseless_single_user_receives_its_codeword():
    cb = default_codebook(1, 2, 4, 2)
    x = encode((1, 1), 0, cb)
    chan = sample_channel(AWGN_UNIT, (1, 1, 2), 1e-30, np.random.default_rng(3))
    y = transmit(x[None, :], chan, np.random.default_rng(4))
    assert np.allclose(y.y[0], x, rtol=0, atol=1e-12)


def test_orthogonal_users_do_not_superimpose():
    cb = default_codebook(2, 2, 4, 1)
    x = np.array([encode((0, 1), 0, cb), encode((1, 0), 1, cb)])
    chan = sample_channel(AWGN_UNIT, (1, 2, 2), 1e-30, np.random.default_rng(3))
    y = transmit(x, chan, np.random.default_rng(4))
    assert np.allclose(y.y[0], [x[0, 0], x[1, 1]], rtol=0, atol=1e-12)


def test_default_codebook_superposition_per_resource():
    cb = default_codebook(6, 4, 4, 2)
    fg = build_factor_graph(cb)
    rng = np.random.default_rng(11)
    x = np.array([cb.codewords[k, rng.integers(cb.M)] for k in range(cb.K)])
    chan = sample_channel(AWGN_UNIT, (1, 6, 4), 1e-30, rng)
    y = transmit(x, chan, rng)
    for n in range(cb.N):
        assert abs(y.y[0, n] - sum(x[k, n] for k in fg.F[n])) < 1e-12


def test_noise_statistics():
    chan = sample_channel(AWGN_UNIT, (1, 1, 100000), 0.5, np.random.default_rng(5))
    w = transmit(np.zeros((1, 100000)), chan, np.random.default_rng(6)).y[0]
    assert abs(np.mean(np.abs(w) ** 2) / 0.5 - 1.0) < 0.02
    assert abs(np.var(w.real) / 0.25 - 1.0) < 0.02
    assert abs(np.corrcoef(w.real, w.imag)[0, 1]) < 0.02


# With the noise replayed, transmit is linear in the codewords
def test_transmit_is_linear():
    rng = np.random.default_rng(8)
    chan = sample_channel(RAYLEIGH_IID_BLOCK, (2, 3, 4), 0.2, rng)
    a = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))

    def replay(x):
        return transmit(x, chan, np.random.default_rng(99)).y

    residual = replay(a + b) - replay(a) - replay(b) + replay(np.zeros((3, 4)))
    assert np.allclose(residual, 0, atol=1e-12)


def test_it_rejects_bad_input():
    rng = np.random.default_rng(0)
    chan = sample_channel(AWGN_UNIT, (1, 2, 2), 0.1, rng)
    with pytest.raises(ChannelException):
        transmit(np.zeros((3, 2)), chan, rng)
    with pytest.raises(ChannelException):
        sample_channel('tdl_a', (1, 2, 2), 0.1, rng)
    with pytest.raises(ChannelException):
        ChannelRealization(np.ones((1, 2, 2)), 0.0)
    with pytest.raises(ChannelException):
        ChannelRealization(np.full((1, 2, 2), np.nan), 1.0)
