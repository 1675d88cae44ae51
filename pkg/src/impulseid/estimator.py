"""Joint estimation of the rates and the impulse train.

Three estimators of the rates are offered:

* :func:`estimate_noise_free` walks a family of sweep lines, brackets where
  each line crosses ``gammaP`` and ``gammaN`` by bisection, and minimizes the
  gap between the two crossings over the line offset.
* :func:`estimate_low_noise` grids the nonnegative-fit residual ``g(b1, b2)``,
  forms the Newton-like ratio ``N_g = -g / (dg/db1)`` and steps from its
  constrained minimizer by the minimum value.
* :func:`estimate_gamma_p_hat` applies the same step row by row (fixed
  ``b2``) and returns the resulting curve instead of a single point.

:func:`extract_impulses` then thresholds, refits and merges the impulses at
the chosen rates.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, EstimationError
from .model import ImpulseTrain, SampledSignal
from .regions import (BoundaryCurve, CurveKind, Label, bisect_line, classify_point,
                      grid_axis)
from .regressor import build_phi
from .solvers import solve_nnls

INV_PHI = (math.sqrt(5) - 1) / 2
# residuals below this fraction of ||y||^2 are rounding noise of an exact fit
G_ZERO_RTOL = 1e-20


@dataclass(frozen=True)
class GridSpec:
    """Rectangular search grid plus the impulse-count constraint.

    ``d_min_frac`` scales the mean positive weight at a node into the
    threshold ``d_min`` above which an impulse is counted; at most ``pi``
    counted impulses are allowed.
    """

    b1_values: np.ndarray
    b2_values: np.ndarray
    d_min_frac: float = 0.05
    pi: int = 1
    delta_b: float | None = None

    def __post_init__(self):
        b1 = np.asarray(self.b1_values, dtype=float).reshape(-1)
        b2 = np.asarray(self.b2_values, dtype=float).reshape(-1)
        if b1.size == 0 or b2.size == 0:
            raise ContractError("grid axes must be nonempty")
        if np.any(np.diff(b1) <= 0) or np.any(np.diff(b2) <= 0):
            raise ContractError("grid axes must be strictly increasing")
        if np.any(b1 <= 0):
            raise ContractError("b1 grid must be positive")
        if self.pi < 1:
            raise ContractError("pi must be at least 1")
        if self.d_min_frac < 0:
            raise ContractError("d_min_frac must be nonnegative")
        object.__setattr__(self, "b1_values", b1)
        object.__setattr__(self, "b2_values", b2)

    @classmethod
    def from_ranges(cls, b1_range, b2_range, delta_b, *, pi, d_min_frac=0.05,
                    b1_include_hi=True):
        return cls(grid_axis(*b1_range, delta_b, include_hi=b1_include_hi),
                   grid_axis(*b2_range, delta_b), d_min_frac, int(pi), delta_b)

    @classmethod
    def truth_relative(cls, b1_true, b2_true, n_samples, delta_b=0.02, d_min_frac=0.05,
                       pi_frac=0.5):
        """Grid centred on known rates, as used in the Monte Carlo studies.

        ``b1`` spans ``[b1/2, (b1+b2)/2)``, ``b2`` spans ``[(b1+b2)/2, 3 b2/2]``
        and ``pi = floor(pi_frac * K)``.
        """
        mid = 0.5 * (b1_true + b2_true)
        return cls.from_ranges((0.5 * b1_true, mid), (mid, 1.5 * b2_true), delta_b,
                               pi=max(1, int(pi_frac * n_samples)), d_min_frac=d_min_frac,
                               b1_include_hi=False)


@dataclass(frozen=True)
class NgSurface:
    """Grid evaluation of ``g`` and ``N_g``; arrays have shape ``(n_b2, n_b1)``."""

    b1_values: np.ndarray
    b2_values: np.ndarray
    g: np.ndarray
    dg_db1: np.ndarray
    n_g: np.ndarray
    n_counted: np.ndarray
    eligible: np.ndarray

    def rows(self):
        """Flat ``(b1, b2, g, dg_db1, n_g, n_counted, eligible)`` records."""
        for i, b2 in enumerate(self.b2_values):
            for j, b1 in enumerate(self.b1_values):
                yield (float(b1), float(b2), float(self.g[i, j]), float(self.dg_db1[i, j]),
                       float(self.n_g[i, j]), int(self.n_counted[i, j]),
                       bool(self.eligible[i, j]))

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["b1", "b2", "g", "dg_db1", "n_g", "n_counted", "eligible"])
            for r in self.rows():
                w.writerow([repr(r[0]), repr(r[1]), repr(r[2]), repr(r[3]), repr(r[4]),
                            r[5], int(r[6])])


@dataclass
class EstimateResult:
    b1_hat: float | None
    b2_hat: float | None
    impulses: ImpulseTrain
    x2_init_hat: float
    residual_ss: float
    gamma_p_hat: BoundaryCurve | None = None
    diagnostics: NgSurface | None = field(default=None, repr=False)

    def to_dict(self, include_diagnostics=True) -> dict:
        out = {
            "b1_hat": self.b1_hat,
            "b2_hat": self.b2_hat,
            "x2_init": _finite_or_none(self.x2_init_hat),
            "impulses": [{"tau": tau, "d": d} for tau, d in self.impulses],
            "residual_ss": _finite_or_none(self.residual_ss),
        }
        if self.gamma_p_hat is not None:
            out["gamma_p_hat"] = self.gamma_p_hat.points.tolist()
        if include_diagnostics and self.diagnostics is not None:
            out["diagnostics"] = {
                "columns": ["b1", "b2", "g", "dg_db1", "n_g", "n_counted", "eligible"],
                "rows": [[_finite_or_none(v) for v in r] for r in self.diagnostics.rows()],
            }
        return out

    def to_json(self, path=None, include_diagnostics=True) -> str:
        text = json.dumps(self.to_dict(include_diagnostics), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text


def _finite_or_none(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


# -- Newton-like knee location ------------------------------------------------

def n_g_from_values(g, b1_values):
    """Forward-difference ``dg/db1`` along the last axis and ``N_g = -g / dg``.

    The last column uses a backward difference. Nodes whose derivative is not
    strictly negative get ``N_g = nan``.
    """
    g = np.asarray(g, dtype=float)
    x = np.asarray(b1_values, dtype=float)
    if x.size < 2:
        raise ContractError("need at least two b1 grid points for a finite difference")
    dg = np.empty_like(g)
    dx = np.diff(x)
    dg[..., :-1] = np.diff(g, axis=-1) / dx
    dg[..., -1] = dg[..., -2]
    with np.errstate(divide="ignore", invalid="ignore"):
        n_g = np.where(dg < 0, -g / dg, np.nan)
    return dg, n_g


def newton_knee(x, n_g, allowed=None):
    """``(x_hat, x_argmin, n_min)`` for the constrained minimizer of ``N``.

    ``x_hat = argmin N + min N`` over entries with ``N > 0`` (and ``allowed``
    when given). Ties go to the smallest ``x``. Returns ``None`` when nothing
    qualifies.
    """
    x = np.asarray(x, dtype=float)
    n_g = np.asarray(n_g, dtype=float)
    ok = np.isfinite(n_g) & (n_g > 0)
    if allowed is not None:
        ok &= np.asarray(allowed, dtype=bool)
    if not ok.any():
        return None
    idx = np.flatnonzero(ok)
    k = idx[np.argmin(n_g[idx])]
    return float(x[k] + n_g[k]), float(x[k]), float(n_g[k])


def counted_impulses(weights, d_min_frac):
    """Number of weights above ``d_min_frac`` times the mean positive weight."""
    w = np.asarray(weights)
    pos = w[w > 0]
    if pos.size == 0:
        return 0
    return int(np.sum(w > d_min_frac * pos.mean()))


def n_g_surface(y: SampledSignal, grid: GridSpec) -> NgSurface:
    """Evaluate ``g`` on every node and derive ``N_g`` and node eligibility.

    A node is eligible when ``N_g > 0``, the stepped point ``b1 + N_g`` stays
    below ``b2``, and its nonnegative fit has at most ``grid.pi`` counted
    impulses. The last ``b1`` column is never eligible: its ``N_g`` comes
    from a backward difference and is kept for diagnostics only. Nodes with
    ``b1 >= b2`` are left as ``nan``.
    The nonnegative fits along each ``b2`` row are warm-started from their
    left neighbour. Residuals below ``G_ZERO_RTOL * ||y||^2`` are set to zero,
    so exact fits carry no ``N_g``.
    """
    b1v, b2v = grid.b1_values, grid.b2_values
    if b1v.size < 2:
        raise ContractError("n_g_surface needs at least two b1 grid points")
    g = np.full((b2v.size, b1v.size), np.nan)
    counts = np.zeros(g.shape, dtype=int)
    for i, b2 in enumerate(b2v):
        warm = None
        for j, b1 in enumerate(b1v):
            if not b1 < b2:
                warm = None
                continue
            fit = solve_nnls(build_phi(b1, b2, y.times), y, warm_start=warm)
            warm = fit.passive
            g[i, j] = fit.residual_ss
            counts[i, j] = counted_impulses(fit.weights, grid.d_min_frac)
    g[g <= G_ZERO_RTOL * float(y.values @ y.values)] = 0.0
    dg, n_g = n_g_from_values(g, b1v)
    # the stepped estimate b1 + N_g must itself satisfy b1 < b2
    with np.errstate(invalid="ignore"):
        admissible = b1v[None, :] + n_g < b2v[:, None]
    eligible = np.isfinite(n_g) & (n_g > 0) & (counts <= grid.pi) & admissible
    # the last b1 node has no forward neighbour; its backward slope belongs to
    # the interval on its left and would understate the step from this node
    eligible[:, -1] = False
    return NgSurface(b1v, b2v, g, dg, n_g, counts, eligible)


def select_low_noise(surface: NgSurface) -> tuple[float, float]:
    """Single-point knee: global constrained minimizer of ``N_g`` plus the step."""
    n = np.where(surface.eligible, surface.n_g, np.inf)
    if not np.isfinite(n).any():
        raise EstimationError("no grid node satisfies the N_g and impulse-count constraints")
    B1, B2 = np.meshgrid(surface.b1_values, surface.b2_values)
    # lexsort keys: last is primary -> (N_g, b1, b2)
    order = np.lexsort((B2.ravel(), B1.ravel(), n.ravel()))
    k = order[0]
    i, j = np.unravel_index(k, n.shape)
    return float(surface.b1_values[j] + n[i, j]), float(surface.b2_values[i])


def estimate_low_noise(y: SampledSignal, grid: GridSpec, *, return_surface=False):
    """Rates from the constrained minimum of ``N_g`` over the whole grid.

    Returns ``(b1_hat, b2_hat)`` where ``b1_hat`` is the minimizing node's
    ``b1`` plus the minimum of ``N_g`` and ``b2_hat`` is the node's ``b2``.
    """
    surface = n_g_surface(y, grid)
    est = select_low_noise(surface)
    return (est, surface) if return_surface else est


def select_gamma_p_hat(surface: NgSurface) -> BoundaryCurve:
    pts = []
    for i, b2 in enumerate(surface.b2_values):
        knee = newton_knee(surface.b1_values, surface.n_g[i], surface.eligible[i])
        if knee is not None:
            pts.append((knee[0], b2))
    return BoundaryCurve(np.array(pts).reshape(-1, 2), CurveKind.GAMMA_P_HAT)


def estimate_gamma_p_hat(y: SampledSignal, grid: GridSpec, *, return_surface=False):
    """Estimated ``gammaP``: one knee point per ``b2`` row of the grid.

    Rows without an eligible node are left out.
    """
    surface = n_g_surface(y, grid)
    curve = select_gamma_p_hat(surface)
    return (curve, surface) if return_surface else curve


# -- impulses at given rates --------------------------------------------------

def merge_pair(tau_a, d_a, tau_b, d_b, b1, b2):
    """One impulse reproducing both modes of the pair for all ``t >= tau_b``."""
    if not b1 < b2:
        raise ContractError("merge needs b1 < b2")
    dt = tau_b - tau_a
    c1 = d_a + d_b * math.exp(b1 * dt)
    c2 = d_a + d_b * math.exp(b2 * dt)
    shift = math.log(c1 / c2) / (b1 - b2)
    return tau_a + shift, c1 * math.exp(-b1 * shift)


def merge_adjacent(impulses: ImpulseTrain, times, b1: float, b2: float) -> ImpulseTrain:
    """Collapse runs of impulses on consecutive sampling instants.

    Each run is folded left to right with :func:`merge_pair`; the result
    predicts the same samples as the input at every instant from the last
    member of the run onwards (earlier samples are unaffected as well, since
    the merged impulse lies inside the run).
    """
    t = np.asarray(times, dtype=float)
    if len(impulses) == 0:
        return impulses
    idx = np.searchsorted(t, impulses.tau)
    on_grid = (idx < t.size) & np.isclose(t[np.minimum(idx, t.size - 1)], impulses.tau,
                                          rtol=0, atol=1e-9)
    if not on_grid.all():
        raise ContractError("merge_adjacent expects impulses on sampling instants")
    taus, ds = [], []
    run_tau, run_d, last = impulses.tau[0], impulses.d[0], idx[0]
    for k in range(1, len(impulses)):
        tau_k, d_k, i_k = impulses.tau[k], impulses.d[k], idx[k]
        if i_k == last + 1 and run_d > 0 and d_k > 0:
            run_tau, run_d = merge_pair(run_tau, run_d, tau_k, d_k, b1, b2)
        else:
            taus.append(run_tau)
            ds.append(run_d)
            run_tau, run_d = tau_k, d_k
        last = i_k
    taus.append(run_tau)
    ds.append(run_d)
    return ImpulseTrain(np.array(taus), np.array(ds))


def extract_impulses(y: SampledSignal, b1_hat: float, b2_hat: float, d_min: float | None = None,
                     merge: bool = True, *, d_min_frac: float = 0.05) -> EstimateResult:
    """Threshold, refit and merge the impulses at fixed rates.

    1. nonnegative fit at ``(b1_hat, b2_hat)``;
    2. weights below ``d_min`` (default ``d_min_frac`` times the mean positive
       weight) are pinned to zero and the rest refitted; repeated until every
       kept weight clears ``d_min``;
    3. adjacent survivors are merged.
    """
    phi = build_phi(b1_hat, b2_hat, y.times)
    fit = solve_nnls(phi, y)
    w = fit.weights
    if d_min is None:
        pos = w[w > 0]
        d_min = d_min_frac * pos.mean() if pos.size else 0.0

    keep = np.ones(w.size, dtype=bool)
    A = phi.values
    for _ in range(w.size + 1):
        keep &= w >= d_min
        keep &= w > 0
        cols = np.r_[0, 1 + np.flatnonzero(keep)]
        sub = solve_nnls(A[:, cols], y, warm_start=np.ones(cols.size, dtype=bool))
        theta = np.zeros(A.shape[1])
        theta[cols] = sub.theta
        w = theta[1:]
        if np.all(w[keep] >= d_min) and np.all(w[keep] > 0):
            break
    else:  # pragma: no cover - each pass removes at least one index
        raise EstimationError("impulse thresholding did not settle")

    residual = float(np.sum((y.values - A @ theta) ** 2))
    sel = w > 0
    train = ImpulseTrain(y.times[:-1][sel], w[sel])
    if merge:
        train = merge_adjacent(train, y.times, b1_hat, b2_hat)
    return EstimateResult(float(b1_hat), float(b2_hat), train, float(theta[0]), residual)


# -- noise-free estimator -----------------------------------------------------

def golden_section(f, a, b, tol):
    """Minimizer of a unimodal ``f`` on ``[a, b]`` to within ``tol``."""
    a, b = min(a, b), max(a, b)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return c if fc <= fd else d


@dataclass(frozen=True)
class SweepLines:
    """Lines ``b1 = slope * b2 + c`` clipped to a box and to ``b1 < b2``."""

    b1_bounds: tuple[float, float]
    b2_bounds: tuple[float, float]
    slope: float = 2.0

    def segment(self, c):
        """End points ordered by increasing ``b2``, or ``None`` if the line misses."""
        lo, hi = self.b2_bounds
        b1_lo, b1_hi = self.b1_bounds
        k = self.slope
        if k > 0:
            lo = max(lo, (b1_lo - c) / k)
            hi = min(hi, (b1_hi - c) / k)
        elif k < 0:
            lo = max(lo, (b1_hi - c) / k)
            hi = min(hi, (b1_lo - c) / k)
        elif not b1_lo <= c <= b1_hi:
            return None
        # b1 < b2  <=>  (k - 1) b2 < -c
        margin = 1e-6
        if k > 1:
            hi = min(hi, -c / (k - 1) - margin)
        elif k < 1:
            lo = max(lo, -c / (k - 1) + margin)
        elif c >= 0:
            return None
        if hi <= lo:
            return None
        return (k * lo + c, lo), (k * hi + c, hi)

    def c_range(self):
        (b1_lo, b1_hi), (b2_lo, b2_hi) = self.b1_bounds, self.b2_bounds
        cs = [b1 - self.slope * b2 for b1 in (b1_lo, b1_hi) for b2 in (b2_lo, b2_hi)]
        return min(cs), max(cs)


def support_bound(y: SampledSignal, lines: SweepLines) -> int:
    """Positive-weight count at the lower-left corner of the search box.

    That corner lies in the region where only true impulses stay positive,
    so the count stands in for the unknown support size.
    """
    b1 = lines.b1_bounds[0]
    b2 = max(lines.b2_bounds[0], b1 * (1 + 1e-6))
    return classify_point(b1, b2, y).n_positive


def boundary_gap(y: SampledSignal, c: float, lines: SweepLines, tol: float, pi=None):
    """Crossings of line ``c`` with ``gammaP`` and ``gammaN`` and their distance.

    ``pi`` defaults to :func:`support_bound` of the box.
    """
    seg = lines.segment(c)
    if seg is None:
        return math.inf, None, None
    if pi is None:
        pi = support_bound(y, lines)

    def is_pos(b1, b2):
        return classify_point(b1, b2, y, pi=pi).label is Label.ALL_POSITIVE

    def is_neg(b1, b2):
        return classify_point(b1, b2, y, pi=pi).label is Label.ALL_NON_TRUE_NEGATIVE

    p = bisect_line(is_pos, seg[0], seg[1], tol)
    n = bisect_line(is_neg, seg[0], seg[1], tol)
    if p is None or n is None:
        return math.inf, p, n
    return float(np.hypot(*(p - n))), p, n


def estimate_noise_free(y: SampledSignal, c_range=None, tol: float = 1e-7, *,
                        b1_bounds=(0.05, 5.0), b2_bounds=(0.05, 10.0), slope: float = 2.0,
                        pi: int | None = None, c_tol: float | None = None):
    """Rates from noise-free data via the meeting point of ``gammaP`` and ``gammaN``.

    Parameters
    ----------
    y : SampledSignal
        Noise-free samples of a sparse impulse response.
    c_range : (float, float), optional
        Offsets of the sweep lines ``b1 = slope * b2 + c`` to search; defaults
        to every offset whose line meets the box.
    tol : float
        Bisection tolerance along each line.
    b1_bounds, b2_bounds : (float, float)
        Box that clips the sweep lines.
    slope : float
        Slope of the sweep lines in ``b1`` per unit ``b2``.
    pi : int, optional
        Support bound for the ``gammaN`` predicate; see :func:`support_bound`.
    c_tol : float, optional
        Golden-section tolerance on ``c`` (default ``tol``).

    Returns
    -------
    (float, float)
        Midpoint of the two crossings on the best line.
    """
    lines = SweepLines(tuple(b1_bounds), tuple(b2_bounds), slope)
    if c_range is None:
        c_range = lines.c_range()
    c_tol = tol if c_tol is None else c_tol
    if pi is None:
        pi = support_bound(y, lines)

    def gap(c):
        return boundary_gap(y, c, lines, tol, pi)[0]

    # coarse scan first: golden section needs a finite, unimodal bracket
    cs = np.linspace(c_range[0], c_range[1], 41)
    gaps = np.array([gap(c) for c in cs])
    if not np.isfinite(gaps).any():
        raise EstimationError("no sweep line crosses both boundaries")
    k = int(np.argmin(gaps))
    a, b = cs[max(k - 1, 0)], cs[min(k + 1, cs.size - 1)]
    c_best = golden_section(gap, a, b, c_tol)
    d, p, n = boundary_gap(y, c_best, lines, tol, pi)
    if not math.isfinite(d):
        raise EstimationError("best sweep line lost a boundary crossing")
    mid = 0.5 * (p + n)
    return float(mid[0]), float(mid[1])
