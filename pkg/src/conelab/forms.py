"""Scalar coefficients and sparse matrix assembly for the fiber forms.

After rotation and shear the m-th fiber form on the quarter-strip reads

    q[u] = int [ (1 + cot^2 th) |d_sigma u|^2
                 + 2 cot th  Re(d_sigma u  conj d_t u)
                 + |d_t u|^2 + c_m sigma^{-2} |u|^2 ] dsigma dt,

with c_m = ((m - omega)^2 - 1/4) / sin^2 th (the shear has unit Jacobian
and r = sigma*sin th on the strip).  For m = 0 the coefficient is the
negative of gamma = (1/4 - omega^2)/sin^2 th; it vanishes at omega = 1/2
and equals -1/4 at the critical flux omega_cr = cos(th)/2 after the
sin^2 th normalization cancels.

Everything is discretized with continuous piecewise-bilinear elements on
the structured (sigma, t) mesh; a 2x2 Gauss rule per cell integrates the
singular sigma^{-2} potential without ever touching sigma = 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import MismatchError, ParameterError
from .geometry import Aperture, ShearedMesh, as_aperture

_INV_SQRT3 = 1.0 / math.sqrt(3.0)


@dataclass(frozen=True)
class LayerParams:
    """Physical problem instance: aperture, reduced flux, fiber index."""

    theta: Aperture
    omega: float
    m: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta", as_aperture(self.theta))
        if not (0.0 < self.omega <= 0.5):
            raise ParameterError(
                f"omega must lie in (0, 0.5], got {self.omega}"
            )
        if self.m != int(self.m):
            raise ParameterError("fiber index m must be an integer")
        object.__setattr__(self, "m", int(self.m))


@dataclass(frozen=True)
class FluxProfile:
    """Samples of a flux function omega(phi) on a uniform grid over [0, 2pi)."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.samples, dtype=float))
        if arr.size < 1:
            raise ParameterError("flux profile needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("flux profile samples must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)


def gamma_coefficient(omega: float, theta) -> float:
    """gamma = (1/4 - omega^2) / sin^2(theta), the well strength at m = 0."""
    th = as_aperture(theta)
    if not (0.0 < omega <= 0.5):
        raise ParameterError(f"omega must lie in (0, 0.5], got {omega}")
    return (0.25 - omega * omega) / (th.sin ** 2)


def critical_flux(theta) -> float:
    """omega_cr = cos(theta)/2: flux where the discrete spectrum empties."""
    return as_aperture(theta).cos / 2.0


def reduce_flux(profile: FluxProfile) -> float:
    """Fold the total flux of a profile into the fundamental cell [0, 1/2].

    The flux is the mean of the samples (trapezoid rule on a uniform
    periodic grid).  Subtracting the nearest integer and using the sign
    symmetry omega <-> -omega folds the result into [0, 1/2]; half-integer
    fluxes land exactly on 1/2.  A zero result is legal output but is
    flagged, since the fiber operators reject omega = 0.
    """
    phi = float(np.mean(profile.samples))
    reduced = abs(phi - np.round(phi))
    if reduced == 0.0:
        warnings.warn(
            "flux reduces to 0 (integer total flux); fiber operators "
            "require omega in (0, 1/2]", stacklevel=2)
    return reduced


def potential_coefficient(params: LayerParams) -> float:
    """c_m = ((m - omega)^2 - 1/4) / sin^2(theta); potential is c_m/sigma^2."""
    d = (params.m - params.omega) ** 2 - 0.25
    return d / (params.theta.sin ** 2)


# ---------------------------------------------------------------------------
# Q1 assembly engine
# ---------------------------------------------------------------------------

def _reference_basis(nq: int):
    """Bilinear shape values/derivatives at an nq x nq Gauss rule.

    Returns (xi, eta, w, N, dNdxi, dNdeta) with leading axis the Gauss
    point; node order matches ShearedMesh.cells (counter-clockwise from
    the low-sigma/low-t corner).
    """
    pts, wts = np.polynomial.legendre.leggauss(nq)
    xi, eta = np.meshgrid(pts, pts, indexing="ij")
    xi, eta = xi.ravel(), eta.ravel()
    w = np.outer(wts, wts).ravel()
    N = 0.25 * np.column_stack([
        (1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
        (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])
    dNdxi = 0.25 * np.column_stack([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    dNdeta = 0.25 * np.column_stack([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    return xi, eta, w, N, dNdxi, dNdeta


def assemble_q1(mesh: ShearedMesh, css=0.0, cst=0.0, ctt=0.0, c00=0.0,
                nq: int = 2, subdivide: int = 1) -> sp.csr_matrix:
    """Assemble the full-node matrix of the bilinear form

        a(u, v) = int [ css  d_sigma u d_sigma v
                        + cst (d_sigma u d_t v + d_t u d_sigma v)
                        + ctt d_t u d_t v + c00 u v ]  dsigma dt.

    Coefficients are scalars or callables of vectorized (sigma, t) arrays
    evaluated at Gauss points.  `subdivide` splits each cell into
    subdivide^2 equal subcells before quadrature, which is how weights
    with kinks or indicator factors are resolved without ever placing a
    quadrature node on sigma = 0 or t = 0.
    """
    ns, nt = mesh.n_sigma, mesh.n_t
    a_full = np.diff(mesh.sigma)
    b_full = np.diff(mesh.t)
    i_s = np.repeat(np.arange(ns), nt)
    i_t = np.tile(np.arange(nt), ns)
    conn = mesh.cells
    ncell = ns * nt

    xi, eta, w, N, dNdxi, dNdeta = _reference_basis(nq)
    Ke = np.zeros((ncell, 4, 4))

    def _coef(c, sig, tt):
        if callable(c):
            return np.asarray(c(sig, tt), dtype=float)
        return np.full(sig.shape, float(c))

    m = subdivide
    for ks in range(m):
        for kt in range(m):
            # subcell [ks/m, (ks+1)/m] x [kt/m, (kt+1)/m] of the reference cell
            a = a_full[i_s] / m
            b = b_full[i_t] / m
            s_lo = mesh.sigma[i_s] + a_full[i_s] * ks / m
            t_lo = mesh.t[i_t] + b_full[i_t] * kt / m
            # global coordinates at Gauss points of the subcell: (ncell, ng)
            sig = s_lo[:, None] + (xi[None, :] + 1) * 0.5 * a[:, None]
            tt = t_lo[:, None] + (eta[None, :] + 1) * 0.5 * b[:, None]
            # reference coordinates w.r.t. the FULL cell, for shape functions
            xi_f = 2 * (sig - mesh.sigma[i_s][:, None]) / a_full[i_s][:, None] - 1
            eta_f = 2 * (tt - mesh.t[i_t][:, None]) / b_full[i_t][:, None] - 1
            Nf = np.stack([
                0.25 * (1 - xi_f) * (1 - eta_f), 0.25 * (1 + xi_f) * (1 - eta_f),
                0.25 * (1 + xi_f) * (1 + eta_f), 0.25 * (1 - xi_f) * (1 + eta_f),
            ], axis=-1)  # (ncell, ng, 4)
            dNx = np.stack([
                -0.25 * (1 - eta_f), 0.25 * (1 - eta_f),
                0.25 * (1 + eta_f), -0.25 * (1 + eta_f),
            ], axis=-1) * (2.0 / a_full[i_s])[:, None, None]
            dNt = np.stack([
                -0.25 * (1 - xi_f), -0.25 * (1 + xi_f),
                0.25 * (1 + xi_f), 0.25 * (1 - xi_f),
            ], axis=-1) * (2.0 / b_full[i_t])[:, None, None]
            jw = (0.25 * a * b)[:, None] * w[None, :]  # (ncell, ng)

            if not (np.isscalar(css) and css == 0.0):
                c = _coef(css, sig, tt) * jw
                Ke += np.einsum("cg,cgi,cgj->cij", c, dNx, dNx, optimize=True)
            if not (np.isscalar(cst) and cst == 0.0):
                c = _coef(cst, sig, tt) * jw
                cross = np.einsum("cg,cgi,cgj->cij", c, dNx, dNt, optimize=True)
                Ke += cross + cross.transpose(0, 2, 1)
            if not (np.isscalar(ctt) and ctt == 0.0):
                c = _coef(ctt, sig, tt) * jw
                Ke += np.einsum("cg,cgi,cgj->cij", c, dNt, dNt, optimize=True)
            if not (np.isscalar(c00) and c00 == 0.0):
                c = _coef(c00, sig, tt) * jw
                Ke += np.einsum("cg,cgi,cgj->cij", c, Nf, Nf, optimize=True)

    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    A = sp.coo_matrix((Ke.ravel(), (rows, cols)),
                      shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    # element matrices are symmetric; enforce exact symmetry against
    # floating-point summation-order noise
    A = (A + A.T) * 0.5
    return A.tocsr()


def restrict_interior(mesh: ShearedMesh, A: sp.csr_matrix) -> sp.csr_matrix:
    """Eliminate Dirichlet rows/columns (all four edges)."""
    idx = mesh.interior_nodes
    return A[np.ix_(idx, idx)].tocsr()


@dataclass(frozen=True)
class OperatorPencil:
    """Stiffness/mass pair of a discretized fiber form, Dirichlet-reduced."""

    K: sp.csr_matrix
    M: sp.csr_matrix
    dof_map: np.ndarray
    params: LayerParams | None
    mesh: ShearedMesh

    def __post_init__(self):
        n = self.K.shape[0]
        if self.M.shape[0] != n:
            raise MismatchError("stiffness and mass dimensions differ")
        if np.any(self.M.diagonal() <= 0):
            raise AssertionError("mass matrix has a non-positive diagonal entry")

    @property
    def n_dof(self) -> int:
        return self.K.shape[0]

    @property
    def block_shape(self) -> tuple[int, int]:
        """(number of sigma blocks, block size) of the interior dof layout."""
        return self.mesh.n_sigma - 1, self.mesh.n_t - 1


def assemble_fiber(mesh: ShearedMesh, params: LayerParams) -> OperatorPencil:
    """Assemble the m-th fiber pencil (K, M) on the sheared rectangle."""
    if abs(mesh.theta.theta - params.theta.theta) > 1e-15:
        raise MismatchError(
            f"mesh aperture {mesh.theta.theta} differs from "
            f"parameter aperture {params.theta.theta}")
    cot = params.theta.cot
    cm = potential_coefficient(params)
    if cm == 0.0:
        c00 = 0.0
    else:
        def c00(sig, tt):
            return cm / sig ** 2
    K_full = assemble_q1(mesh, css=1.0 + cot * cot, cst=cot, ctt=1.0, c00=c00)
    M_full = assemble_q1(mesh, c00=1.0)
    K = restrict_interior(mesh, K_full)
    M = restrict_interior(mesh, M_full)
    return OperatorPencil(K, M, mesh.dof_map(), params, mesh)


# ---------------------------------------------------------------------------
# Hardy weight
# ---------------------------------------------------------------------------

def rho0(t, theta):
    """Half the corner offset: rho0(t) = t*cot(theta)/2."""
    return 0.5 * np.asarray(t) * as_aperture(theta).cot


def hardy_weight_sheared(sigma, t, theta):
    """w(sigma, t) = t^3 / (1 + sigma^2 ln^2(sigma/rho0(t))) on the strip."""
    sigma = np.asarray(sigma, dtype=float)
    t = np.asarray(t, dtype=float)
    r0 = rho0(t, theta)
    return t ** 3 / (1.0 + sigma ** 2 * np.log(sigma / r0) ** 2)


def hardy_weight_meridian(r, z, theta):
    """The same weight written in meridian coordinates (r, z).

    Uses t = r*cos(th) - z*sin(th), sigma = r/sin(th) and
    sigma/rho0 = (r/cos(th)) * (2/t); agrees with the sheared form
    pointwise after transport through rotation + shear.
    """
    th = as_aperture(theta)
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    t = r * th.cos - z * th.sin
    lnarg = (r / th.cos) * (2.0 / t)
    return t ** 3 / (1.0 + (r ** 2 / th.sin ** 2) * np.log(lnarg) ** 2)


@dataclass(frozen=True)
class HardyWeightMatrix:
    """Weighted mass matrix int w(sigma,t) u v, Dirichlet-reduced."""

    W: sp.csr_matrix
    variant: str
    theta: Aperture
    mesh: ShearedMesh


def assemble_hardy_weight(mesh: ShearedMesh, theta,
                          variant: str = "sheared") -> HardyWeightMatrix:
    """Weighted mass matrix of the Hardy weight, in either coordinate form.

    Both variants produce the same matrix up to quadrature round-off; the
    meridian variant evaluates the weight in (r, z) after transporting
    the quadrature points back through shear and rotation, which is the
    cross-check that the two published forms of the weight agree.
    """
    th = as_aperture(theta)
    if abs(mesh.theta.theta - th.theta) > 1e-15:
        raise MismatchError("mesh aperture differs from requested aperture")
    if variant == "sheared":
        def w(sig, tt):
            return hardy_weight_sheared(sig, tt, th)
    elif variant == "meridian":
        def w(sig, tt):
            s = sig - tt * th.cot
            r = s * th.sin + tt * th.cos
            z = s * th.cos - tt * th.sin
            return hardy_weight_meridian(r, z, th)
    else:
        raise ParameterError(f"unknown weight variant {variant!r}")
    W_full = assemble_q1(mesh, c00=w, subdivide=2)
    W = restrict_interior(mesh, W_full)
    return HardyWeightMatrix(W, variant, th, mesh)


# ---------------------------------------------------------------------------
# Fixed-domain weighted assembly for the aperture-monotonicity scan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaledFiberMatrices:
    """theta-independent building blocks of the rescaled fiber form.

    Rescaling s -> s*tan(theta) maps every corner half-strip onto the
    fixed quarter-strip (after the shear), at the price of a weight.  On
    that fixed domain the m = 0 fiber form becomes

        int [ tan^2 th |d_sigma u|^2 + |d_t u + d_sigma u|^2
              + (omega/cos th)^2 sigma^{-2} |u|^2 ] sigma dsigma dt,

    with weighted mass int |u|^2 sigma.  Every coefficient is pointwise
    non-decreasing along admissible (theta, omega) paths, so Rayleigh
    quotients on a FIXED mesh are exactly monotone — the discrete scan
    inherits the ordering with no discretization caveat.
    """

    A_ss: sp.csr_matrix   # int d_sigma u d_sigma v * sigma
    A_tt: sp.csr_matrix   # int (d_t u + d_sigma u)(d_t v + d_sigma v) * sigma
    A_pot: sp.csr_matrix  # int u v / sigma
    M: sp.csr_matrix      # int u v * sigma
    mesh: ShearedMesh

    def stiffness(self, theta, omega) -> sp.csr_matrix:
        th = as_aperture(theta)
        if not (0.0 < omega <= 0.5):
            raise ParameterError(f"omega must lie in (0, 0.5], got {omega}")
        return (th.tan ** 2) * self.A_ss + self.A_tt + (omega / th.cos) ** 2 * self.A_pot


def assemble_scaled_fiber(mesh: ShearedMesh) -> ScaledFiberMatrices:
    """Assemble the theta-independent matrices of the rescaled form."""
    def wgt(sig, tt):
        return sig

    def inv(sig, tt):
        return 1.0 / sig

    A_ss = restrict_interior(mesh, assemble_q1(mesh, css=wgt))
    A_tt = restrict_interior(
        mesh, assemble_q1(mesh, css=wgt, cst=wgt, ctt=wgt))
    A_pot = restrict_interior(mesh, assemble_q1(mesh, c00=inv))
    M = restrict_interior(mesh, assemble_q1(mesh, c00=wgt))
    return ScaledFiberMatrices(A_ss, A_tt, A_pot, M, mesh)


# ---------------------------------------------------------------------------
# Matrix export
# ---------------------------------------------------------------------------

def export_matrix(A: sp.spmatrix, path: str, fmt: str = "mm") -> None:
    """Write a sparse matrix as MatrixMarket ('mm') or plain COO text."""
    if fmt == "mm":
        scipy.io.mmwrite(path, sp.coo_matrix(A))
    elif fmt == "coo":
        coo = sp.coo_matrix(A)
        with open(path, "w") as fh:
            fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {v:.17g}\n")
    else:
        raise ParameterError(f"unknown export format {fmt!r}")
