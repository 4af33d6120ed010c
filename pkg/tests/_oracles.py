"""Independent reference computations shared by the test modules."""
from __future__ import annotations

import numpy as np
import scipy.linalg

from ltsf import linode
from ltsf.matexp import MatrixClass


def fd_gradient_error(model, X, Y, h=1e-6, **kw):
    """Largest per-group relative error ||g - fd||_inf / ||fd||_inf over all parameter groups.

    ``fd`` are central differences of the loss, one parameter at a time.
    """
    _, grads = linode.loss_and_grad(model, X, Y, **kw)
    worst = 0.0
    for name, arr in model.params.items():
        fd = np.empty_like(arr)
        for i in range(arr.size):
            orig = arr.flat[i]
            arr.flat[i] = orig + h
            lp, _ = linode.loss_and_grad(model, X, Y, **kw)
            arr.flat[i] = orig - h
            lm, _ = linode.loss_and_grad(model, X, Y, **kw)
            arr.flat[i] = orig
            fd.flat[i] = (lp - lm) / (2 * h)
        scale = max(np.max(np.abs(fd)), 1e-12)
        worst = max(worst, float(np.max(np.abs(grads[name] - fd)) / scale))
    return worst


def random_model(seed, lookback, obs_dim, latent_dim, delay=None, encoder_hidden=(), decoder_hidden=(6,),
                 matrix_class=MatrixClass.SKEW_PLUS_DIAG):
    """Small model with every parameter group perturbed away from its init."""
    model = linode.LatentLinearODEModel.init(lookback, obs_dim, latent_dim, matrix_class, encoder_hidden,
                                             decoder_hidden, delay, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for name, arr in model.params.items():
        arr += 0.1 * rng.normal(size=arr.shape)
        if name == "generator.diag":
            arr -= 0.05
    return model


def teacher_system(seed, dim=4, norm=0.5):
    """Skew-plus-diagonal generator with spectral norm ``norm`` and a slightly negative diagonal."""
    rng = np.random.default_rng(seed)
    K = np.tril(rng.normal(size=(dim, dim)), -1)
    A = K - K.T + np.diag(-rng.uniform(0.005, 0.02, dim))
    return A * (norm / np.linalg.norm(A, 2))


def teacher_trajectories(A, n, length, seed):
    """h_{j+1} = exp(A) h_j from standard-normal starts; shape (n, length, dim)."""
    rng = np.random.default_rng(seed)
    M = scipy.linalg.expm(A)
    out = np.empty((n, length, A.shape[0]))
    h = rng.normal(size=(n, A.shape[0]))
    for j in range(length):
        out[:, j] = h
        h = h @ M.T
    return out
