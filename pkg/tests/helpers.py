import numpy as np

from scoreratio.autodiff import MlpParams
from scoreratio.network import ScoreRatioNetwork


def random_network(rng, n=5, m=3, r=3, s=2, hidden=1, width=8):
    """Network with every layer random, including the usually zero output layer."""
    net = ScoreRatioNetwork.initialize(n, m, r, s, hidden, width, rng)
    widths = net.psi.widths
    psi = MlpParams.initialize(widths, rng, zero_last=False)
    psi = psi.with_flat(psi.flatten() + 0.1 * rng.standard_normal(psi.size))
    return ScoreRatioNetwork(net.W_x, net.W_y, psi)


def linear_network(W_x, W_y, B, C, bias=None):
    """psi(z) = [B | C] z + bias, a single linear layer."""
    r = B.shape[0]
    weights = np.hstack([B, C]).T
    return ScoreRatioNetwork(W_x, W_y, MlpParams([weights], [np.zeros(r) if bias is None else bias]))


def fd_jacobian(f, x, h=1e-6):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.column_stack(cols)
