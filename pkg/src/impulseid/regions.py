"""Sign structure of the least-squares impulse estimates over the (b1, b2) plane.

For noise-free data the unconstrained estimate splits the plane into a region
where every estimated impulse is positive (upper right, bounded by the curve
``gammaP``), a region where every impulse not in the true support is negative
(lower left, bounded by ``gammaN``) and a mixed band between them. Both curves
pass through the true rates.

The local shape of these curves is governed by triplets of samples: for a
single impulse at time 0 observed at ``tau < nu < mu``, the mismatched model
reproduces the three samples exactly along the curve solved by
:func:`boundary_triplet_numeric` (closed form :func:`boundary_equidistant` for
equally spaced samples).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import BoundaryNotFoundError, ContractError, DomainError
from .model import SampledSignal
from .regressor import build_phi
from .solvers import solve_nnls, solve_unconstrained

SIGN_RTOL = 1e-9


class Label(str, Enum):
    ALL_POSITIVE = "AllPositive"
    ALL_NON_TRUE_NEGATIVE = "AllNonTrueNegative"
    MIXED = "Mixed"


class CurveKind(str, Enum):
    GAMMA_P = "gammaP"
    GAMMA_N = "gammaN"
    GAMMA_P_HAT = "gammaPhat"


@dataclass(frozen=True)
class SignClass:
    n_positive: int
    n_negative: int
    label: Label


@dataclass(frozen=True)
class RegionMap:
    """Classification of a rectangular grid (nodes with ``b1 >= b2`` dropped)."""

    b1: np.ndarray
    b2: np.ndarray
    labels: tuple[Label, ...]
    n_positive: np.ndarray
    n_negative: np.ndarray
    residual: np.ndarray
    delta_b: float | None = None

    def __len__(self):
        return self.b1.size

    def mask(self, label: Label) -> np.ndarray:
        return np.array([lab == label for lab in self.labels], dtype=bool)

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["b1", "b2", "label", "n_positive", "n_negative", "residual"])
            for row in zip(self.b1, self.b2, self.labels, self.n_positive, self.n_negative,
                           self.residual):
                w.writerow([repr(float(row[0])), repr(float(row[1])), row[2].value,
                            int(row[3]), int(row[4]), repr(float(row[5]))])


@dataclass(frozen=True)
class BoundaryCurve:
    """Polyline in the (b1, b2) plane, ordered by increasing ``b1``."""

    points: np.ndarray  # shape (n, 2)
    kind: CurveKind

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        pts = pts[np.argsort(pts[:, 0], kind="stable")]
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "kind", CurveKind(self.kind))

    def __len__(self):
        return self.points.shape[0]

    @property
    def b1(self):
        return self.points[:, 0]

    @property
    def b2(self):
        return self.points[:, 1]

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["b1", "b2"])
            for b1, b2 in self.points:
                w.writerow([repr(float(b1)), repr(float(b2))])


def grid_axis(lo: float, hi: float, delta: float, include_hi: bool = True) -> np.ndarray:
    """Points ``lo + k * delta`` up to ``hi`` (inclusive unless ``include_hi`` is False)."""
    if not delta > 0:
        raise ContractError("grid spacing must be positive")
    if hi < lo:
        raise ContractError(f"empty range [{lo}, {hi}]")
    span = (hi - lo) / delta
    n = math.floor(span + 1e-9) + 1
    if not include_hi and abs(lo + (n - 1) * delta - hi) <= 1e-9 * max(1.0, abs(hi)):
        n -= 1
    return lo + delta * np.arange(max(n, 0))


def sign_counts(weights, tol: float = SIGN_RTOL) -> tuple[int, int]:
    w = np.asarray(weights, dtype=float)
    scale = np.max(np.abs(w)) if w.size else 0.0
    if scale == 0.0:
        return 0, 0
    return int(np.sum(w > tol * scale)), int(np.sum(w < -tol * scale))


def classify_weights(weights, pi: int, tol: float = SIGN_RTOL) -> SignClass:
    n_pos, n_neg = sign_counts(weights, tol)
    if n_neg == 0:
        label = Label.ALL_POSITIVE
    elif n_pos <= pi:
        label = Label.ALL_NON_TRUE_NEGATIVE
    else:
        label = Label.MIXED
    return SignClass(n_pos, n_neg, label)


def classify_point(b1: float, b2: float, y: SampledSignal, tol: float = SIGN_RTOL,
                   pi: int | None = None) -> SignClass:
    """Sign pattern of the unconstrained impulse estimates at ``(b1, b2)``.

    A weight counts as positive (negative) when it exceeds ``tol`` times the
    largest weight magnitude in that direction. The label is ``AllPositive``
    when no weight is negative, ``AllNonTrueNegative`` when at most ``pi``
    weights are positive (``pi`` stands in for the unknown size of the true
    support; default ``len(y) // 2``), and ``Mixed`` otherwise.
    """
    if pi is None:
        pi = len(y) // 2
    sol = solve_unconstrained(build_phi(b1, b2, y.times), y)
    return classify_weights(sol.weights, pi, tol)


def sweep_region_map(y: SampledSignal, b1_values: Sequence[float], b2_values: Sequence[float],
                     *, pi: int | None = None, tol: float = SIGN_RTOL,
                     delta_b: float | None = None) -> RegionMap:
    """Classify every grid node and record the nonnegative-fit residual there."""
    if pi is None:
        pi = len(y) // 2
    rows = []
    for b2 in np.asarray(b2_values, dtype=float):
        warm = None
        for b1 in np.asarray(b1_values, dtype=float):
            if not 0 < b1 < b2:
                continue
            phi = build_phi(b1, b2, y.times)
            cls = classify_weights(solve_unconstrained(phi, y).weights, pi, tol)
            fit = solve_nnls(phi, y, warm_start=warm)
            warm = fit.passive
            rows.append((b1, b2, cls, fit.residual_ss))
    if not rows:
        raise ContractError("grid contains no node with b1 < b2")
    return RegionMap(
        b1=np.array([r[0] for r in rows]),
        b2=np.array([r[1] for r in rows]),
        labels=tuple(r[2].label for r in rows),
        n_positive=np.array([r[2].n_positive for r in rows]),
        n_negative=np.array([r[2].n_negative for r in rows]),
        residual=np.array([r[3] for r in rows]),
        delta_b=delta_b,
    )


def boundary_predicate(kind, y: SampledSignal, pi: int | None = None,
                       tol: float = SIGN_RTOL) -> Callable[[float, float], bool]:
    """``(b1, b2) -> bool`` that flips across the requested boundary."""
    kind = CurveKind(kind)
    if kind is CurveKind.GAMMA_P:
        target = Label.ALL_POSITIVE
    elif kind is CurveKind.GAMMA_N:
        target = Label.ALL_NON_TRUE_NEGATIVE
    else:
        raise ContractError("gammaPhat is estimated from residuals, not traced by bisection")

    def pred(b1, b2):
        return classify_point(b1, b2, y, tol, pi).label is target

    return pred


def bisect_line(pred: Callable[[float, float], bool], p0, p1, tol: float):
    """Point on segment ``p0 -> p1`` where ``pred`` changes value.

    Returns ``None`` when ``pred`` agrees at both ends. The returned point is
    the midpoint of the final bracket, whose length is below ``tol``.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    length = float(np.hypot(*(p1 - p0)))
    v0 = pred(*p0)
    if v0 == pred(*p1):
        return None
    lo, hi = 0.0, 1.0
    while (hi - lo) * length > tol:
        mid = 0.5 * (lo + hi)
        if pred(*(p0 + mid * (p1 - p0))) == v0:
            lo = mid
        else:
            hi = mid
    return p0 + 0.5 * (lo + hi) * (p1 - p0)


def vertical_lines(b1_values: Iterable[float], b2_lo: float, b2_hi: float):
    """Sweep lines ``b1 = const`` spanning ``[max(b2_lo, b1), b2_hi]``."""
    lines = []
    for b1 in b1_values:
        lo = max(b2_lo, b1 * (1 + 1e-6))
        if lo < b2_hi:
            lines.append(((b1, lo), (b1, b2_hi)))
    return lines


def trace_boundary(y: SampledSignal, kind, sweep_lines, tol_bisect: float = 1e-4,
                   pi: int | None = None, tol: float = SIGN_RTOL) -> BoundaryCurve:
    """Intersect each sweep line with the ``gammaP`` or ``gammaN`` boundary.

    Lines on which the predicate does not change are skipped with a warning.
    """
    pred = boundary_predicate(kind, y, pi, tol)
    pts = []
    for p0, p1 in sweep_lines:
        hit = bisect_line(pred, p0, p1, tol_bisect)
        if hit is None:
            warnings.warn(f"sweep line {tuple(p0)} -> {tuple(p1)} does not cross {kind}",
                          stacklevel=2)
            continue
        pts.append(hit)
    return BoundaryCurve(np.array(pts).reshape(-1, 2), kind)


# -- single-impulse triplet boundaries ----------------------------------------

def _triplet_det(s, b1, b1_true, b2_true, times):
    """Triplet condition divided by ``1 - omega``, with ``omega = exp(-s)``."""
    tau, nu, mu = times
    f = [math.exp((b1 - b2_true) * t) - math.exp((b1 - b1_true) * t) for t in times]
    w = [math.exp(-s * t) for t in times]
    det = f[0] * (w[2] - w[1]) + f[1] * (w[0] - w[2]) + f[2] * (w[1] - w[0])
    return det / -math.expm1(-s)


def boundary_triplet_numeric(b1: float, b1_true: float, b2_true: float, tau: float, nu: float,
                             mu: float, *, b2_max: float | None = None,
                             omega_eps: float = 1e-6, n_scan: int = 400) -> float:
    """``b2`` such that the model ``(b1, b2)`` matches a single-impulse response
    of the true system at the three sample times ``tau < nu < mu``.

    The condition is root-found in ``omega = exp(b1 - b2)`` on
    ``(exp(b1 - b2_max), 1 - omega_eps)``; the infeasible root ``omega = 1``
    is divided out. If several roots are bracketed the one closest to
    ``omega = 1`` is returned.
    """
    if not 0 < tau < nu < mu:
        raise ContractError("need 0 < tau < nu < mu")
    if min(b1, b1_true, b2_true) <= 0:
        raise ContractError("rates must be positive")
    if b2_max is None:
        b2_max = b1 + 20.0 * max(b2_true, 1.0)
    s_lo = -math.log1p(-omega_eps)
    s_hi = b2_max - b1
    if s_hi <= s_lo:
        raise BoundaryNotFoundError("empty search bracket")
    times = (tau, nu, mu)
    grid = np.geomspace(s_lo, s_hi, n_scan)
    vals = np.array([_triplet_det(s, b1, b1_true, b2_true, times) for s in grid])
    for i in range(n_scan - 1):
        if vals[i] == 0.0:
            return b1 + grid[i]
        if vals[i] * vals[i + 1] < 0:
            s = brentq(_triplet_det, grid[i], grid[i + 1], args=(b1, b1_true, b2_true, times),
                       xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
            return b1 + s
    raise BoundaryNotFoundError(f"no feasible triplet boundary for b1={b1} with b2 < {b2_max}")


def equidistant_omegas(b1: float, b1_true: float, b2_true: float, tau: float,
                       c: float) -> tuple[float, float]:
    """``(omega1, omega2)`` of the closed form, both divided by ``psi^tau``.

    The common factor is positive, so signs and the ratio are unchanged. On
    the branch through the true rates both are positive; where both are
    negative the ratio is still admissible but belongs to a second branch
    with ``b2`` below ``b1_true``, on which the slope bound ``db2/db1 < -1``
    does not hold.
    """
    # 1 - x^c via expm1
    r = math.exp((b1_true - b2_true) * tau)  # (chi / psi)^tau
    one_m_chic = -math.expm1((b1 - b2_true) * c)
    one_m_psic = -math.expm1((b1 - b1_true) * c)
    chic = math.exp((b1 - b2_true) * c)
    psic = math.exp((b1 - b1_true) * c)
    w1 = r * chic * one_m_chic - psic * one_m_psic
    w2 = r * one_m_chic - one_m_psic
    return w1, w2


def boundary_equidistant(b1: float, b1_true: float, b2_true: float, tau: float,
                         c: float) -> float:
    """Closed-form triplet boundary for samples at ``tau, tau + c, tau + 2c``.

    ``b2 = b1 - ln(omega1 / omega2) / c``.
    """
    if not c > 0:
        raise ContractError("c must be positive")
    w1, w2 = equidistant_omegas(b1, b1_true, b2_true, tau, c)
    if w2 == 0.0 or not w1 / w2 > 0:
        raise DomainError(f"omega1/omega2 = {w1}/{w2} is not positive at b1={b1}")
    b2 = b1 - math.log(w1 / w2) / c
    if not b2 > b1:
        raise DomainError(f"boundary leaves the region b2 > b1 at b1={b1}")
    return b2


def boundary_equidistant_derivatives(b1: float, b1_true: float, b2_true: float, tau: float,
                                     c: float) -> tuple[float, float, float]:
    """Analytic ``db2/db1``, ``d2b2/db1^2`` and ``db2/dtau`` of the closed form."""
    boundary_equidistant(b1, b1_true, b2_true, tau, c)  # domain check
    chi = math.exp(b1 - b2_true)
    psi = math.exp(b1 - b1_true)
    w1 = chi ** (tau + c) - chi ** (tau + 2 * c) - psi ** (tau + c) + psi ** (tau + 2 * c)
    w2 = chi ** tau - chi ** (tau + c) - psi ** tau + psi ** (tau + c)
    k = chi ** (tau + c) - psi ** (tau + c)
    slope = -1 + k * (1 / w1 - 1 / w2)
    curvature = c * k * (-1 / w1 - 1 / w2 + k * (1 / w1 ** 2 - 1 / w2 ** 2))
    lc, lp = b1 - b2_true, b1 - b1_true  # log chi, log psi
    dw1 = lc * (chi ** (tau + c) - chi ** (tau + 2 * c)) - lp * (psi ** (tau + c) - psi ** (tau + 2 * c))
    dw2 = lc * (chi ** tau - chi ** (tau + c)) - lp * (psi ** tau - psi ** (tau + c))
    dtau = -(dw1 / w1 - dw2 / w2) / c
    return slope, curvature, dtau


def equidistant_curve(b1_values, b1_true: float, b2_true: float, tau: float,
                      c: float) -> BoundaryCurve:
    """Closed-form triplet boundary on ``b1_values``, principal branch only.

    Nodes where the boundary is undefined, or lies on the second branch
    (negative ``omega1, omega2``), are left out.
    """
    pts = []
    for b1 in np.sort(np.asarray(b1_values, dtype=float).reshape(-1)):
        w1, w2 = equidistant_omegas(b1, b1_true, b2_true, tau, c)
        if w1 <= 0 or w2 <= 0:
            continue
        try:
            pts.append((b1, boundary_equidistant(b1, b1_true, b2_true, tau, c)))
        except DomainError:
            pass
    return BoundaryCurve(np.array(pts).reshape(-1, 2), CurveKind.GAMMA_P)
