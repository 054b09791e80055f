"""Sparse generalized eigensolver, truncation-stability filter, scans.

Two complementary tools drive everything here:

* ``count_below`` — an exact count of pencil eigenvalues under a level mu
  via block-tridiagonal LDL^T inertia (Sylvester's law).  The sigma-major
  node ordering of ShearedMesh makes K - mu*M block tridiagonal with one
  block per interior sigma line, so the count costs one sweep of small
  dense factorizations and needs no iterative solver at all.

* ``solve_lowest`` — shift-invert Lanczos (ARPACK) marching upward from
  below the spectrum.  Inertia counts bracket each next eigenvalue, the
  shift is placed just below it so the transformed spectrum is well
  separated, and every accepted batch is re-verified against the exact
  count.  This stays reliable even when eigenvalues cluster exponentially
  under the essential-spectrum threshold.

The threshold of the continuous problem is the constant 1 (first
transverse Dirichlet mode of the width-pi cross-section); eigenvalues are
reported as discrete only when they sit below 1 - delta AND reappear,
within a match tolerance, after the artificial boundary is pushed out.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackNoConvergence

from .errors import (FactorizationError, NoConvergenceError, ParameterError)
from .forms import LayerParams, OperatorPencil, assemble_fiber, assemble_scaled_fiber
from .geometry import as_aperture, build_mesh, geometric_mesh

THRESHOLD = 1.0

# ---------------------------------------------------------------------------
# Exact counting by block-tridiagonal inertia
# ---------------------------------------------------------------------------


def _block_arrays(A: sp.spmatrix, nblk: int, bs: int):
    """Split a block-tridiagonal matrix into dense diagonal/off blocks."""
    coo = sp.coo_matrix(A)
    br = coo.row // bs
    bc = coo.col // bs
    if np.any(np.abs(br - bc) > 1):
        raise ParameterError("matrix is not block tridiagonal in this ordering")
    D = np.zeros((nblk, bs, bs))
    E = np.zeros((max(nblk - 1, 0), bs, bs))
    on = br == bc
    np.add.at(D, (br[on], coo.row[on] % bs, coo.col[on] % bs), coo.data[on])
    up = bc == br + 1
    np.add.at(E, (br[up], coo.row[up] % bs, coo.col[up] % bs), coo.data[up])
    return D, E


def count_below(pencil: OperatorPencil, mu) -> int | np.ndarray:
    """Number of pencil eigenvalues strictly below mu (exact, per level).

    Accepts a scalar or an array of levels; the block elimination is
    batched over all levels in one sweep.
    """
    nblk, bs = pencil.block_shape
    return _count_below_blocks(pencil.K, pencil.M, nblk, bs, mu)


def _count_below_blocks(K, M, nblk, bs, mu):
    KD, KE = _block_arrays(K, nblk, bs)
    MD, ME = _block_arrays(M, nblk, bs)
    mus = np.atleast_1d(np.asarray(mu, dtype=float))
    neg = np.zeros(len(mus), dtype=int)
    # Schur-complement elimination: S_0 = D_0, S_{i} = D_i - B^T S_{i-1}^-1 B
    S = KD[0][None, :, :] - mus[:, None, None] * MD[0][None, :, :]
    for i in range(nblk):
        vals = np.linalg.eigvalsh(S)
        neg += (vals < 0).sum(axis=1)
        if i == nblk - 1:
            break
        B = KE[i][None, :, :] - mus[:, None, None] * ME[i][None, :, :]
        X = np.linalg.solve(S, B)
        S = KD[i + 1][None, :, :] - mus[:, None, None] * MD[i + 1][None, :, :] \
            - np.swapaxes(B, 1, 2) @ X
        S = 0.5 * (S + np.swapaxes(S, 1, 2))
    if np.isscalar(mu):
        return int(neg[0])
    return neg


# ---------------------------------------------------------------------------
# Results container
# ---------------------------------------------------------------------------

CSV_COLUMNS = ["theta", "omega", "m", "L", "h", "index",
               "eigenvalue", "residual", "stable"]


@dataclass
class SpectrumResult:
    """Eigenvalues of a fiber pencil with residuals and stability flags."""

    eigenvalues: np.ndarray
    residuals: np.ndarray
    stable_flags: np.ndarray
    threshold: float = THRESHOLD
    delta: float = 1e-4
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        self.residuals = np.asarray(self.residuals, dtype=float)
        self.stable_flags = np.asarray(self.stable_flags, dtype=bool)
        if len(self.eigenvalues) > 1 and np.any(np.diff(self.eigenvalues) < 0):
            raise AssertionError("eigenvalues must be ascending")

    @property
    def discrete(self) -> np.ndarray:
        """Stable eigenvalues strictly below threshold - delta."""
        keep = self.stable_flags & (self.eigenvalues < self.threshold - self.delta)
        return self.eigenvalues[keep]

    def to_rows(self):
        m = self.meta
        rows = []
        for i, (ev, r, st) in enumerate(
                zip(self.eigenvalues, self.residuals, self.stable_flags)):
            rows.append([m.get("theta"), m.get("omega"), m.get("m"),
                         m.get("L"), m.get("h"), i, ev, r, int(st)])
        return rows

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(CSV_COLUMNS)
            for row in self.to_rows():
                wr.writerow(["" if v is None else f"{v:.12g}" if isinstance(v, float) else v
                             for v in row])

    def to_json(self, path=None):
        doc = {
            "schema_version": 1,
            "threshold": self.threshold,
            "delta": self.delta,
            "eigenvalues": self.eigenvalues.tolist(),
            "residuals": self.residuals.tolist(),
            "stable_flags": self.stable_flags.astype(int).tolist(),
            "meta": self.meta,
        }
        if path is not None:
            with open(path, "w") as fh:
                json.dump(doc, fh, sort_keys=True, indent=2)
        return doc


# ---------------------------------------------------------------------------
# Shift-invert marching
# ---------------------------------------------------------------------------


def _dense_lowest(pencil: OperatorPencil, k: int):
    vals, vecs = eigh(pencil.K.toarray(), pencil.M.toarray())
    return vals[:k], vecs[:, :k]


def _residuals(K, M, vals, vecs):
    out = []
    for lam, u in zip(vals, vecs.T):
        out.append(float(np.linalg.norm(K @ u - lam * (M @ u)) / np.linalg.norm(u)))
    return np.array(out)


def _shift_invert(K, M, sigma, k, v0, tol, maxiter):
    """One guarded ARPACK call returning eigenvalues just above sigma."""
    try:
        vals, vecs = spla.eigsh(K, k=k, M=M, sigma=sigma, which="LA",
                                v0=v0, tol=tol, maxiter=maxiter)
    except ArpackNoConvergence as exc:
        if len(exc.eigenvalues) == 0:
            raise
        vals, vecs = exc.eigenvalues, exc.eigenvectors
    except RuntimeError as exc:
        # singular K - sigma*M: nudge the shift and retry once
        raise FactorizationError(str(exc)) from exc
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def solve_lowest(pencil: OperatorPencil, k: int, shift: float = 0.5,
                 tol: float = 1e-8, seed: int = 0,
                 maxiter: int = 5000) -> SpectrumResult:
    """Compute the k smallest pencil eigenvalues, deterministically.

    The shift is only the initial probe level; inertia counts locate each
    next eigenvalue and the factorization shift is re-placed just below
    it, so the result is independent of the starting shift.
    """
    if k < 1:
        raise ParameterError(f"k must be at least 1, got {k}")
    if shift >= THRESHOLD:
        raise ParameterError(f"shift must stay below the threshold 1, got {shift}")
    if tol <= 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    n = pencil.n_dof
    k = min(k, n)
    meta = _pencil_meta(pencil)
    meta.update({"shift": shift, "seed": seed, "solver": "shift-invert"})

    if n <= 400 or k >= n - 1:
        vals, vecs = _dense_lowest(pencil, k)
        res = _residuals(pencil.K, pencil.M, vals, vecs)
        meta["solver"] = "dense"
        return SpectrumResult(vals, res, np.ones(k, bool), meta=meta)

    K, M = pencil.K, pencil.M
    rng = np.random.default_rng(seed)
    v0 = rng.uniform(-1.0, 1.0, n)
    counts = lambda mu: count_below(pencil, mu)

    # find a level with nothing below it
    lo = min(shift, 0.0)
    step = 1.0
    n_inertia = 0
    while counts(lo) > 0:
        lo -= step
        step *= 4
        n_inertia += 1
    frontier = lo           # invariant: count_below(frontier) == len(found)
    found: list[float] = []
    vec_list: list[np.ndarray] = []
    n_calls = 0
    converged = True

    while len(found) < k:
        j = len(found)
        # bracket the next eigenvalue: predicate count(mu) > j
        d = max(0.25, (found[-1] - frontier) if found else 0.25)
        hi = frontier + d
        while counts(hi) <= j:
            n_inertia += 1
            d *= 2
            hi = frontier + d
            if d > 1e8:
                raise NoConvergenceError(
                    "failed to bracket the next eigenvalue",
                    partial=(np.array(found), None))
        blo = frontier
        while hi - blo > 1e-3 * max(1.0, abs(hi)):
            mid = 0.5 * (blo + hi)
            n_inertia += 1
            if counts(mid) > j:
                hi = mid
            else:
                blo = mid
        # count(blo) == j exactly: nothing hides between frontier and blo
        sigma = blo
        chunk = int(min(max(k - len(found) + 2, 3), 10, n - 1))
        try:
            vals, vecs = _shift_invert(K, M, sigma, chunk, v0, 0, maxiter)
        except FactorizationError:
            sigma -= 1e-8 * max(1.0, abs(sigma))
            vals, vecs = _shift_invert(K, M, sigma, chunk, v0, 0, maxiter)
        except ArpackNoConvergence:
            converged = False
            break
        n_calls += 1
        keep = vals > sigma
        vals, vecs = vals[keep], vecs[:, keep]
        if len(vals) == 0:
            converged = False
            break
        # the largest Ritz value of a batch may be an incomplete tail: drop
        # it unless it alone completes the request
        n_take = len(vals) - 1 if len(vals) > 1 else 1
        n_take = min(n_take, k - len(found))
        accept = vals[:n_take]
        # verification level: halfway to the next Ritz value if we have one
        if len(vals) > n_take:
            ver = 0.5 * (accept[-1] + vals[n_take])
        else:
            ver = accept[-1] + 1e-9 * max(1.0, abs(accept[-1]))
        n_inertia += 1
        expect = len(found) + n_take
        got = counts(ver)
        if got <= len(found):
            # degenerate tail: the verification level failed to clear the
            # accepted batch; push it up a little
            ver = accept[-1] + 1e-7 * max(1.0, abs(accept[-1]))
            got = counts(ver)
            if got <= len(found):
                converged = False
                break
        if got != expect:
            # ARPACK missed something inside the window; recover each
            # eigenvalue by pure bisection (slow but exact)
            accept = _bisect_eigenvalues(pencil, frontier, ver,
                                         got - len(found))
            accept = accept[:k - len(found)]
            vecs = np.zeros((n, 0))
        found.extend(float(v) for v in accept)
        for i in range(min(len(accept), vecs.shape[1])):
            vec_list.append(vecs[:, i])
        frontier = ver

    vals = np.array(found[:k])
    if len(vec_list) == len(vals) and len(vals) > 0:
        res = _residuals(K, M, vals, np.column_stack(vec_list)[:, :len(vals)])
    else:
        res = np.full(len(vals), np.nan)
    meta.update({"eigsh_calls": n_calls, "inertia_evals": n_inertia,
                 "converged": converged})
    result = SpectrumResult(vals, res, np.ones(len(vals), bool), meta=meta)
    if not converged:
        raise NoConvergenceError(
            f"eigensolver stalled after {len(found)} of {k} eigenvalues",
            partial=result)
    return result


def _bisect_eigenvalues(pencil, lo, hi, count, rtol=1e-12):
    """Locate `count` pencil eigenvalues in (lo, hi] by inertia bisection."""
    base = count_below(pencil, lo)
    out = []
    for j in range(1, count + 1):
        a, b = lo, hi
        while b - a > rtol * max(1.0, abs(b)):
            mid = 0.5 * (a + b)
            if count_below(pencil, mid) >= base + j:
                b = mid
            else:
                a = mid
        out.append(0.5 * (a + b))
        lo = a
    return np.array(out)


def dense_oracle(pencil: OperatorPencil, k: int | None = None) -> np.ndarray:
    """All (or the k smallest) eigenvalues by a dense symmetric solver."""
    if pencil.n_dof > 4000:
        raise ParameterError("dense oracle restricted to small problems")
    vals = eigh(pencil.K.toarray(), pencil.M.toarray(), eigvals_only=True)
    return vals if k is None else vals[:k]


def _pencil_meta(pencil: OperatorPencil) -> dict:
    m = {"L": pencil.mesh.L, "h": pencil.mesh.grading.get("h_min"),
         "n_sigma": pencil.mesh.n_sigma, "n_t": pencil.mesh.n_t,
         "grading_ratio": pencil.mesh.grading.get("ratio"),
         "n_dof": pencil.n_dof}
    if pencil.params is not None:
        m.update({"theta": pencil.params.theta.theta,
                  "omega": pencil.params.omega, "m": pencil.params.m})
    return m


# ---------------------------------------------------------------------------
# Discrete spectrum with truncation-stability filter
# ---------------------------------------------------------------------------


def discrete_spectrum(theta, omega, m, L, h, refinement_levels: int = 2, *,
                      n_t: int = 32, grading_ratio: float = 1.05,
                      k: int = 12, shift: float = 0.5, tol: float = 1e-8,
                      seed: int = 0, match_tol: float = 1e-6,
                      delta_floor: float = 1e-4) -> SpectrumResult:
    """Stable discrete spectrum below the threshold 1.

    Solves on nested truncations L, 1.25 L, ... (refinement_levels of
    them, sharing the near-corner node sequence) and flags an eigenvalue
    stable when consecutive truncations agree within match_tol.  The
    guard band is delta = max(delta_floor, tol, observed drift); only
    stable eigenvalues below 1 - delta count as discrete.
    """
    if refinement_levels < 2:
        raise ParameterError("refinement_levels must be at least 2")
    params = LayerParams(as_aperture(theta), omega, m)
    mesh = geometric_mesh(params.theta, L, h, n_t, grading_ratio)
    levels = []
    for lev in range(refinement_levels):
        pencil = assemble_fiber(mesh, params)
        n_below = int(count_below(pencil, THRESHOLD - delta_floor))
        n_solve = min(max(n_below, 0), k)
        if n_solve == 0:
            levels.append(SpectrumResult(np.array([]), np.array([]),
                                         np.array([], bool),
                                         meta=_pencil_meta(pencil)))
        else:
            levels.append(solve_lowest(pencil, n_solve, shift=shift,
                                       tol=tol, seed=seed))
        if lev < refinement_levels - 1:
            mesh = mesh.extended(1.25)

    first, last = levels[0], levels[-1]
    n_common = min(len(first.eigenvalues), len(last.eigenvalues))
    drift = np.abs(first.eigenvalues[:n_common] - last.eigenvalues[:n_common])
    stable = np.zeros(len(last.eigenvalues), bool)
    stable[:n_common] = drift < match_tol
    delta = max(delta_floor, tol)
    if np.any(stable[:n_common]):
        delta = max(delta, float(drift[stable[:n_common]].max()))
    meta = dict(last.meta)
    meta.update({"L_levels": [lv.meta.get("L") for lv in levels],
                 "match_tol": match_tol, "requested_L": L, "h": h})
    return SpectrumResult(last.eigenvalues, last.residuals, stable,
                          delta=delta, meta=meta)


def counting_function(result: SpectrumResult, E: float) -> int:
    """Number of stable eigenvalues below threshold - E."""
    if not (0.0 < E < 1.0):
        raise ParameterError(f"E must lie in (0, 1), got {E}")
    keep = result.stable_flags & (result.eigenvalues < result.threshold - E)
    return int(np.count_nonzero(keep))


# ---------------------------------------------------------------------------
# Parameter scans
# ---------------------------------------------------------------------------


@dataclass
class TransitionScan:
    """Stable bound-state counts along a flux grid at fixed aperture."""

    theta: float
    omega_grid: np.ndarray
    counts: np.ndarray
    omega_star: float
    critical: float
    warning: str | None = None
    meta: dict = field(default_factory=dict)

    def to_json(self, path=None):
        doc = {
            "schema_version": 1,
            "theta": self.theta,
            "omega_grid": self.omega_grid.tolist(),
            "counts": self.counts.tolist(),
            "omega_star": self.omega_star,
            "critical_flux": self.critical,
            "warning": self.warning,
            "meta": self.meta,
        }
        if path is not None:
            with open(path, "w") as fh:
                json.dump(doc, fh, sort_keys=True, indent=2)
        return doc


def transition_scan(theta, omega_grid, *, m: int = 0, L: float = 60.0,
                    h: float = 0.01, n_t: int = 32, k: int = 12,
                    tol: float = 1e-8, seed: int = 0,
                    refinement_levels: int = 2) -> TransitionScan:
    """Count stable bound states along an ascending flux grid.

    The estimated transition flux omega_star is the first grid point with
    a zero count; edge cases (grid entirely above or below the observed
    transition) are reported with a warning instead of an error.
    """
    from .forms import critical_flux
    th = as_aperture(theta)
    grid = np.sort(np.asarray(omega_grid, dtype=float))
    if len(grid) < 2:
        raise ParameterError("omega grid needs at least two points")
    counts = []
    for om in grid:
        res = discrete_spectrum(th, float(om), m, L, h,
                                refinement_levels=refinement_levels,
                                n_t=n_t, k=k, tol=tol, seed=seed)
        counts.append(len(res.discrete))
    counts = np.array(counts, dtype=int)
    warning = None
    crit = critical_flux(th)
    zero = np.nonzero(counts == 0)[0]
    if len(zero) == 0:
        omega_star = float(grid[-1])
        warning = "no zero-count point inside the grid; transition above it"
    elif zero[0] == 0:
        omega_star = float(grid[0])
        warning = ("count already zero at the lowest flux scanned; "
                   "transition at or below the grid edge (near-threshold "
                   "states may be unresolvable at this truncation)")
    else:
        omega_star = float(grid[zero[0]])
    if not (grid[0] < crit < grid[-1]) and warning is None:
        warning = "flux grid does not straddle the critical flux"
    return TransitionScan(th.theta, grid, counts, omega_star, crit,
                          warning=warning,
                          meta={"L": L, "h": h, "n_t": n_t, "m": m})


def monotonicity_scan(theta_grid, omega_rule, k_max: int, *,
                      L: float = 40.0, n_sigma: int = 80, n_t: int = 24,
                      grading_ratio: float = 1.06, tol: float = 1e-10) -> dict:
    """Rayleigh quotients E_k along an admissible (theta, omega) path.

    The scan rescales every aperture onto one fixed quarter-strip and
    assembles the weighted form there once; along paths satisfying
    omega_2/cos(theta_2) >= omega_1/cos(theta_1) every coefficient of the
    rescaled form is pointwise non-decreasing, so the discrete E_k on the
    shared mesh are non-decreasing by min-max — exactly, not merely up to
    discretization error.

    omega_rule may be a scalar (fixed flux), a sequence matching the
    grid, or a callable theta -> omega.
    """
    thetas = np.asarray(theta_grid, dtype=float)
    if len(thetas) < 2 or np.any(np.diff(thetas) <= 0):
        raise ParameterError("theta grid must be strictly ascending")
    if not (0 < thetas[0] and thetas[-1] < math.pi / 2):
        raise ParameterError("theta grid must stay inside (0, pi/2)")
    if callable(omega_rule):
        omegas = np.array([float(omega_rule(t)) for t in thetas])
    elif np.isscalar(omega_rule):
        omegas = np.full(len(thetas), float(omega_rule))
    else:
        omegas = np.asarray(omega_rule, dtype=float)
        if len(omegas) != len(thetas):
            raise ParameterError("omega sequence length must match theta grid")
    for om in omegas:
        if not (0.0 < om <= 0.5):
            raise ParameterError(f"omega must lie in (0, 0.5], got {om}")
    # admissibility: omega/cos(theta) non-decreasing along the grid
    ratio = omegas / np.cos(thetas)
    if np.any(np.diff(ratio) < -1e-12):
        raise ParameterError(
            "hypothesis violated: omega_2 must be at least "
            "cos(theta_2)/cos(theta_1) * omega_1 along the grid")

    # the rescaled form lives on a fixed domain: any admissible aperture
    # works for mesh construction; pi/4 is the canonical choice
    mesh = build_mesh(math.pi / 4, L, n_sigma, n_t, grading_ratio)
    mats = assemble_scaled_fiber(mesh)
    table = np.zeros((len(thetas), k_max))
    for i, (th, om) in enumerate(zip(thetas, omegas)):
        K = mats.stiffness(th, om)
        if K.shape[0] <= 2500:
            vals = eigh(K.toarray(), mats.M.toarray(), eigvals_only=True)[:k_max]
        else:
            pen = OperatorPencil(K, mats.M, mesh.dof_map(), None, mesh)
            vals = solve_lowest(pen, k_max, shift=0.0, tol=tol).eigenvalues
        table[i] = vals[:k_max]
    monotone = [bool(np.all(np.diff(table[:, j]) >= -1e-8))
                for j in range(k_max)]
    return {
        "theta": thetas,
        "omega": omegas,
        "E": table,
        "monotone": monotone,
        "mesh": {"L": L, "n_sigma": n_sigma, "n_t": n_t,
                 "grading_ratio": grading_ratio},
    }


def layer_counting_curve(theta, omega, E_grid, *, L: float = 5000.0,
                         h: float = 0.01, n_t: int = 32,
                         grading_ratio: float = 1.05,
                         extension: float = 1.25) -> dict:
    """Counting function N_{1-E} of the m=0 fiber along an energy grid.

    Pure inertia counts at two truncations; an energy is marked stable
    when both truncations agree there.  No eigenvector extraction, so
    this reaches truncations far beyond what the eigensolver needs.
    """
    params = LayerParams(as_aperture(theta), omega, 0)
    E = np.asarray(E_grid, dtype=float)
    if np.any((E <= 0) | (E >= 1)):
        raise ParameterError("energy grid must lie inside (0, 1)")
    mesh = geometric_mesh(params.theta, L, h, n_t, grading_ratio)
    big = mesh.extended(extension)
    pen = assemble_fiber(mesh, params)
    pen_big = assemble_fiber(big, params)
    counts = count_below(pen, THRESHOLD - E)
    counts_big = count_below(pen_big, THRESHOLD - E)
    return {
        "E": E,
        "counts": counts,
        "counts_big": counts_big,
        "stable": counts == counts_big,
        "L": mesh.L,
        "L_big": big.L,
    }
