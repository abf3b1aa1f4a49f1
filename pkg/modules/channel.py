# Module for channel realizations and received-signal synthesis.
#
#   y_n^r = sum_k h_{k,n}^r x_{k,n} + w_n^r,   w_n^r ~ CN(0, noise_var)
#
# Complex Gaussian values carry their total variance split evenly over the real and
# imaginary parts.  Gains are constant over one SCMA block and redrawn for every block.

import numpy as np

# Supported channel models
AWGN_UNIT = 'awgn_unit'
RAYLEIGH_IID_BLOCK = 'rayleigh_iid_block'
MODELS = (AWGN_UNIT, RAYLEIGH_IID_BLOCK)


# Custom exception class for inconsistent channel inputs
class ChannelException(RuntimeError): pass


class ChannelRealization:
    """Complex gains h[n_r, k, n] plus the noise variance of one SCMA block"""

    def __init__(self, H, noise_var: float):
        self.H = np.array(H, dtype=complex)
        self.noise_var = float(noise_var)
        if self.H.ndim != 3:
            raise ChannelException(f"gains must be an N_r x K x N array, got shape {self.H.shape}")
        if not np.all(np.isfinite(self.H)):
            raise ChannelException("gains must be finite")
        if not self.noise_var > 0 or not np.isfinite(self.noise_var):
            raise ChannelException(f"noise variance must be finite and > 0, got {noise_var}")

    @property
    def n_rx(self) -> int:
        return self.H.shape[0]

    @property
    def K(self) -> int:
        return self.H.shape[1]

    @property
    def N(self) -> int:
        return self.H.shape[2]


class ReceivedBlock:
    """Observations y[n_r, n] of one SCMA block"""

    def __init__(self, y):
        self.y = np.array(y, dtype=complex)
        if self.y.ndim != 2:
            raise ChannelException(f"observations must be an N_r x N array, got shape {self.y.shape}")


# Draw circularly symmetric complex Gaussian samples with total variance `variance`
def complex_gaussian(shape, variance: float, rng: np.random.Generator) -> np.ndarray:
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# Generate a channel realization for one block
#   model is one of MODELS
#   dims is (N_r, K, N)
def sample_channel(model: str, dims: tuple, noise_var: float, rng: np.random.Generator) -> ChannelRealization:
    if model not in MODELS:
        raise ChannelException(f"unknown channel model '{model}', expected one of {MODELS}")
    if len(dims) != 3 or min(dims) < 1:
        raise ChannelException(f"dims must be three positive integers (N_r, K, N), got {dims}")
    if model == AWGN_UNIT:
        H = np.ones(dims, dtype=complex)
    else:
        H = complex_gaussian(dims, 1.0, rng)
    return ChannelRealization(H, noise_var)


# Superimpose the users' codewords through the channel and add receiver noise.
#   codewords is the K x N stack of transmitted codewords x_k
def transmit(codewords, chan: ChannelRealization, rng: np.random.Generator) -> ReceivedBlock:
    x = np.asarray(codewords, dtype=complex)
    if x.shape != (chan.K, chan.N):
        raise ChannelException(f"codewords must be K x N = {(chan.K, chan.N)}, got {x.shape}")
    y = np.einsum('rkn,kn->rn', chan.H, x)
    y = y + complex_gaussian(y.shape, chan.noise_var, rng)
    return ReceivedBlock(y)
