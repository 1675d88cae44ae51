"""Square regressor ``Phi(b1, b2)`` with ``Y = Phi @ theta``.

``theta = [x2(t_1), d_1, ..., d_{K-1}]`` where ``d_j`` is an impulse placed at
sampling instant ``t_j``. An impulse at ``t_K`` has no effect on any sample,
so that column is left out and ``Phi`` stays square and lower triangular.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .model import ImpulseTrain, SampledSignal, check_times, kernel_z


@dataclass(frozen=True)
class RegressorMatrix:
    values: np.ndarray
    times: np.ndarray
    b1: float
    b2: float

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self):
        return self.values.shape


def build_phi(b1: float, b2: float, times) -> RegressorMatrix:
    """Regressor for rates ``(b1, b2)`` on the given sampling instants.

    Row ``i`` is ``[exp(-b2 (t_i - t_1)), z(t_i - t_1), ..., z(t_i - t_{K-1})]``.
    """
    t = check_times(times)
    if t.size == 0:
        raise ContractError("need at least one sampling time")
    if not 0 < b1 < b2:
        raise ContractError(f"expected 0 < b1 < b2, got b1={b1}, b2={b2}")
    rel = t - t[0]
    phi = np.empty((t.size, t.size))
    phi[:, 0] = np.exp(-b2 * rel)
    phi[:, 1:] = kernel_z(b1, b2, rel[:, None] - rel[None, :-1])
    return RegressorMatrix(phi, t, float(b1), float(b2))


def predict(phi: RegressorMatrix, theta) -> SampledSignal:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != phi.shape[1]:
        raise ContractError(f"theta has {theta.size} entries, Phi has {phi.shape[1]} columns")
    return SampledSignal(phi.times, phi.values @ theta)


def theta_from_train(times, impulses: ImpulseTrain, x2_init: float = 0.0) -> np.ndarray:
    """Parameter vector for a train whose impulses sit on ``times[:-1]``."""
    t = check_times(times)
    theta = np.zeros(t.size)
    theta[0] = x2_init
    idx = np.searchsorted(t, impulses.tau)
    ok = (idx < t.size - 1) & np.isclose(t[np.minimum(idx, t.size - 1)], impulses.tau,
                                        rtol=0, atol=1e-9)
    if not np.all(ok):
        raise ContractError("impulses must lie on sampling instants t_1..t_{K-1}")
    theta[1 + idx] = impulses.d
    return theta


def train_from_theta(times, theta, drop_zeros: bool = True) -> ImpulseTrain:
    """Impulse train encoded by ``theta[1:]`` (the first entry is ``x2(t_1)``)."""
    t = check_times(times)
    w = np.asarray(theta, dtype=float)[1:]
    tau = t[:-1]
    if drop_zeros:
        keep = w != 0
        tau, w = tau[keep], w[keep]
    return ImpulseTrain(tau, w)
