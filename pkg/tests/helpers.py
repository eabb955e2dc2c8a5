import numpy as np

from dpca import datagen
from dpca.experiments import machine_seed
from dpca.machine import LocalSummary, local_summary


def make_summary(vectors, theta, t=0.1, machine_id=0, indicators=None, mode="covariance", n=100):
    """Hand-built summary; the spectrum is a placeholder."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim == 1:
        vectors = vectors[:, None]
    p, K = vectors.shape
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    if indicators is None:
        indicators = np.abs(vectors / theta).T > t
    eig = np.concatenate([np.arange(K, 0, -1) + 2.0, np.ones(p - K)])
    return LocalSummary(machine_id, n, p, K, eig, vectors, theta, np.asarray(indicators, bool), mode, t)


def simulate(model, sizes, seed, rep, t=0.1, mode="covariance", dist="gaussian", K=2):
    return [
        local_summary(datagen.sample(model, n, dist, machine_seed(seed, rep, ell)), K, t, mode, ell)
        for ell, n in enumerate(sizes)
    ]
