"""Two-compartment cascade driven by a train of weighted impulses.

The plant is

    x1' = -b1 * x1 + sum_k d_k * delta(t - tau_k)
    x2' =  g1 * x1 - b2 * x2,      y = x2

with g1 fixed to one. The measured output of a single unit impulse at time 0
is the kernel ``z(b1, b2, t)``; everything else in the package is built from
it. :func:`simulate_ode` integrates the state equations numerically and is
kept deliberately independent of the kernel so it can serve as an oracle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractError, DomainError

# |b1 - b2| below this fraction of max(b1, b2) uses the coincident-rate limit
DEGENERACY_RTOL = 1e-9


@dataclass(frozen=True)
class SystemParams:
    """Elimination rates of the two compartments (``b1 < b2``)."""

    b1: float
    b2: float
    g1: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.b1) and math.isfinite(self.b2)):
            raise DomainError(f"rates must be finite, got b1={self.b1}, b2={self.b2}")
        if self.b1 <= 0 or self.b2 <= 0:
            raise ContractError(f"rates must be positive, got b1={self.b1}, b2={self.b2}")
        if not self.b1 < self.b2:
            raise ContractError(f"expected b1 < b2, got b1={self.b1}, b2={self.b2}")
        if self.g1 != 1.0:
            raise ContractError("g1 is fixed to 1; rescale the impulse weights instead")


@dataclass(frozen=True)
class ImpulseTrain:
    """Impulse times ``tau`` (strictly increasing) and weights ``d``."""

    tau: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float).reshape(-1)
        d = np.asarray(self.d, dtype=float).reshape(-1)
        if tau.shape != d.shape:
            raise ContractError("tau and d must have the same length")
        if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(d))):
            raise DomainError("impulse times and weights must be finite")
        if np.any(np.diff(tau) <= 0):
            raise ContractError("impulse times must be strictly increasing")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "d", d)

    def __len__(self):
        return self.tau.size

    def __iter__(self):
        return iter(zip(self.tau.tolist(), self.d.tolist()))

    def scaled(self, factor: float) -> ImpulseTrain:
        return ImpulseTrain(self.tau, self.d * factor)

    def require_positive(self):
        if np.any(self.d <= 0):
            raise ContractError("ground-truth impulse weights must be positive")
        return self


@dataclass(frozen=True)
class SampledSignal:
    """Output samples ``values`` taken at strictly increasing ``times``."""

    times: np.ndarray
    values: np.ndarray
    sigma: float | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if t.shape != v.shape:
            raise ContractError(f"times ({t.size}) and values ({v.size}) differ in length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise DomainError("sample times and values must be finite")
        check_times(t)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.times.size


class StateVector(NamedTuple):
    x1: float
    x2: float


class Trajectory(NamedTuple):
    """Output of :func:`simulate_ode`.

    At every impulse time two rows are stored: the state just before and just
    after the jump, in that order.
    """

    t: np.ndarray
    x: np.ndarray  # shape (n, 2)

    def at(self, t: float) -> StateVector:
        """Right-continuous state at ``t`` (post-jump if an impulse hits ``t``)."""
        i = np.searchsorted(self.t, t, side="right") - 1
        if i < 0 or not math.isclose(self.t[i], t, rel_tol=0, abs_tol=1e-12):
            raise ContractError(f"t={t} is not a stored trajectory point")
        return StateVector(*self.x[i])


def check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float).reshape(-1)
    if t.size and np.any(np.diff(t) <= 0):
        raise ContractError("sampling times must be strictly increasing")
    return t


def kernel_z(b1, b2, t):
    """Impulse response of the measured compartment.

    ``z = (exp(-b2 t) - exp(-b1 t)) / (b1 - b2)`` for ``t > 0`` and zero
    otherwise. When the rates coincide to within ``DEGENERACY_RTOL`` the
    limit ``t * exp(-b t)`` is returned instead.

    Parameters
    ----------
    b1, b2 : float
        Positive rates.
    t : float or array_like
        Time since the impulse.

    Returns
    -------
    float or numpy.ndarray
        Same shape as ``t``.
    """
    b1 = float(b1)
    b2 = float(b2)
    t_arr = np.asarray(t, dtype=float)
    if not (math.isfinite(b1) and math.isfinite(b2)) or not np.all(np.isfinite(t_arr)):
        raise DomainError("kernel_z requires finite arguments")
    if b1 <= 0 or b2 <= 0:
        raise DomainError(f"rates must be positive, got b1={b1}, b2={b2}")
    tp = np.where(t_arr > 0, t_arr, 0.0)
    delta = b2 - b1
    if abs(delta) < DEGENERACY_RTOL * max(b1, b2):
        b = 0.5 * (b1 + b2)
        out = tp * np.exp(-b * tp)
    else:
        # exp(-b2 t) - exp(-b1 t) = exp(-b1 t) * expm1(-(b2 - b1) t), no cancellation
        out = np.exp(-b1 * tp) * (-np.expm1(-delta * tp)) / delta
    out = np.where(t_arr > 0, out, 0.0)
    return float(out) if np.ndim(t) == 0 else out


def simulate_output(params: SystemParams, impulses: ImpulseTrain, x2_init: float,
                    times) -> SampledSignal:
    """Exact sampled output from the closed-form kernel.

    ``y(t_i) = x2_init * exp(-b2 (t_i - t_1)) + sum_k d_k z(t_i - tau_k)``.
    The initial first-compartment level at ``t_1`` is taken as zero; an
    impulse at ``t_1`` or earlier represents any nonzero ``x1``.
    """
    t = check_times(times)
    if t.size == 0:
        return SampledSignal(t, t.copy())
    y = x2_init * np.exp(-params.b2 * (t - t[0]))
    if len(impulses):
        lag = t[:, None] - impulses.tau[None, :]
        y = y + kernel_z(params.b1, params.b2, lag) @ impulses.d
    return SampledSignal(t, y)


def _rk4_step(x1, x2, h, b1, b2):
    def f(a, b):
        return -b1 * a, a - b2 * b

    k1a, k1b = f(x1, x2)
    k2a, k2b = f(x1 + 0.5 * h * k1a, x2 + 0.5 * h * k1b)
    k3a, k3b = f(x1 + 0.5 * h * k2a, x2 + 0.5 * h * k2b)
    k4a, k4b = f(x1 + h * k3a, x2 + h * k3b)
    return (x1 + h / 6 * (k1a + 2 * k2a + 2 * k3a + k4a),
            x2 + h / 6 * (k1b + 2 * k2b + 2 * k3b + k4b))


def simulate_ode(params: SystemParams, impulses: ImpulseTrain, x0: StateVector,
                 t_end: float, dt: float, t_start: float = 0.0,
                 sample_times: Sequence[float] = ()) -> Trajectory:
    """Fixed-step RK4 integration of the state equations.

    Steps of at most ``dt`` are taken; they are cut exactly at every impulse
    time and every requested sample time so that jumps ``x1 += d`` happen at
    the right instant and samples need no interpolation. Impulses outside
    ``[t_start, t_end]`` are ignored.
    """
    if not dt > 0:
        raise ContractError("dt must be positive")
    if t_end < t_start:
        raise ContractError("t_end must not precede t_start")
    b1, b2 = params.b1, params.b2
    jumps = {float(tk): float(dk) for tk, dk in impulses if t_start <= tk <= t_end}
    stops = sorted({t_start, t_end, *jumps,
                    *(float(s) for s in sample_times if t_start <= s <= t_end)})

    ts = []
    xs = []
    x1, x2 = float(x0[0]), float(x0[1])
    t = t_start
    for stop in stops:
        n = max(1, math.ceil((stop - t) / dt - 1e-9)) if stop > t else 0
        if n:
            h = (stop - t) / n
            for _ in range(n):
                x1, x2 = _rk4_step(x1, x2, h, b1, b2)
            t = stop
        if stop in jumps:
            ts.append(t)
            xs.append((x1, x2))
            x1 += jumps[stop]
        ts.append(t)
        xs.append((x1, x2))
    return Trajectory(np.array(ts), np.array(xs))


def add_noise(signal: SampledSignal, sigma: float, seed=None) -> SampledSignal:
    """Add i.i.d. zero-mean Gaussian noise with standard deviation ``sigma``.

    ``seed`` may be an int or a :class:`numpy.random.Generator`.
    """
    if sigma < 0:
        raise ContractError("sigma must be nonnegative")
    if sigma == 0:
        return SampledSignal(signal.times, signal.values.copy(), 0.0)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noisy = signal.values + rng.normal(0.0, sigma, size=signal.values.shape)
    return SampledSignal(signal.times, noisy, float(sigma))


# -- plain-text formats -------------------------------------------------------

def _read_csv(path, header: tuple[str, ...]):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError(f"{path}: line 1: empty file, expected header {','.join(header)}")
    got = tuple(c.strip() for c in rows[0])
    if got != header:
        raise ContractError(f"{path}: line 1: expected header {','.join(header)}, got {','.join(got)}")
    cols = [[] for _ in header]
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ContractError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        for col, cell in zip(cols, row):
            try:
                val = float(cell)
            except ValueError:
                raise ContractError(f"{path}: line {lineno}: not a number: {cell!r}") from None
            if not math.isfinite(val):
                raise ContractError(f"{path}: line {lineno}: non-finite value {cell!r}")
            col.append(val)
    if not cols[0]:
        raise ContractError(f"{path}: no data rows")
    arrays = [np.array(c) for c in cols]
    bad = np.flatnonzero(np.diff(arrays[0]) <= 0)
    if bad.size:
        raise ContractError(f"{path}: line {bad[0] + 3}: {header[0]} not strictly increasing")
    return arrays


def read_signal(path) -> SampledSignal:
    """Read a ``t,y`` CSV file."""
    t, y = _read_csv(path, ("t", "y"))
    return SampledSignal(t, y)


def write_signal(path, signal: SampledSignal):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y"])
        for t, y in zip(signal.times, signal.values):
            w.writerow([repr(float(t)), repr(float(y))])


def read_impulses(path) -> ImpulseTrain:
    """Read a ``tau,d`` CSV file."""
    tau, d = _read_csv(path, ("tau", "d"))
    return ImpulseTrain(tau, d)


def write_impulses(path, impulses: ImpulseTrain):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "d"])
        for tau, d in impulses:
            w.writerow([repr(tau), repr(d)])
