"""Meridian domain, corner half-strip, shear map, and graded tensor meshes.

The meridian cross-section of the conical layer is a slanted strip of
width pi in the (r, z) half-plane.  A rotation by the half-opening angle
theta takes it to the corner half-strip

    Omega_theta = {(s, t) : t in (0, pi), s > -t*cot(theta)},

and the shear sigma = s + t*cot(theta) then straightens the slanted edge,
mapping Omega_theta onto the quarter-strip (0, inf) x (0, pi).  All
matrix assembly happens on a truncated rectangle [0, L] x [0, pi] in the
(sigma, t) coordinates, on a structured tensor mesh graded toward
sigma = 0 where the effective potential is singular.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

# Layer width is fixed at pi; the first transverse Dirichlet mode of the
# cross-section then sits exactly at 1, the essential-spectrum threshold.
WIDTH = math.pi


@dataclass(frozen=True)
class Aperture:
    """Half-opening angle of the cone, strictly inside (0, pi/2)."""

    theta: float

    def __post_init__(self):
        if not (0.0 < self.theta < math.pi / 2):
            raise ParameterError(
                f"aperture must lie in the open interval (0, pi/2), got {self.theta}"
            )

    @property
    def sin(self) -> float:
        return math.sin(self.theta)

    @property
    def cos(self) -> float:
        return math.cos(self.theta)

    @property
    def cot(self) -> float:
        return math.cos(self.theta) / math.sin(self.theta)

    @property
    def tan(self) -> float:
        return math.tan(self.theta)


def as_aperture(theta) -> Aperture:
    """Coerce a float (radians) or Aperture to an Aperture."""
    return theta if isinstance(theta, Aperture) else Aperture(float(theta))


@dataclass(frozen=True)
class MeridianPoint:
    """Point in the (r, z) half-plane generating the layer by rotation."""

    r: float
    z: float

    def in_guide(self, theta) -> bool:
        """Membership in the open meridian strip of width pi."""
        th = as_aperture(theta)
        if self.z <= -WIDTH / th.sin:
            return False
        lower = max(0.0, self.z * th.tan)
        upper = self.z * th.tan + WIDTH / th.cos
        return lower < self.r < upper


@dataclass(frozen=True)
class CornerPoint:
    """Point in rotated coordinates (s, t)."""

    s: float
    t: float

    def is_interior(self, theta) -> bool:
        th = as_aperture(theta)
        return 0.0 < self.t < WIDTH and self.s > -self.t * th.cot


def rotate_to_corner(p: MeridianPoint, theta) -> CornerPoint:
    """Rotate a meridian point into the corner half-strip coordinates."""
    th = as_aperture(theta)
    s = p.z * th.cos + p.r * th.sin
    t = -p.z * th.sin + p.r * th.cos
    return CornerPoint(s, t)


def rotate_to_meridian(q: CornerPoint, theta) -> MeridianPoint:
    """Inverse rotation; rotate_to_corner o rotate_to_meridian = identity."""
    th = as_aperture(theta)
    r = q.s * th.sin + q.t * th.cos
    z = q.s * th.cos - q.t * th.sin
    return MeridianPoint(r, z)


def shear_to_rectangle(q: CornerPoint, theta) -> tuple[float, float]:
    """Shear (s, t) -> (sigma, t) with sigma = s + t*cot(theta)."""
    th = as_aperture(theta)
    return q.s + q.t * th.cot, q.t


def unshear(sigma: float, t: float, theta) -> CornerPoint:
    """Inverse of the shear map."""
    th = as_aperture(theta)
    return CornerPoint(sigma - t * th.cot, t)


# Boundary tags.  The edge sigma = L is an artificial truncation boundary;
# everything else is the physical boundary of the (sheared) domain.
TAG_INTERIOR = "interior"
TAG_DIRICHLET_PHYSICAL = "dirichlet_physical"
TAG_DIRICHLET_ARTIFICIAL = "dirichlet_artificial"


@dataclass(frozen=True)
class ShearedMesh:
    """Structured tensor-product mesh on [0, L] x [0, pi] in (sigma, t).

    Node ordering is sigma-major: node(i_s, i_t) = i_s*(n_t+1) + i_t.
    Interior degrees of freedom then group into contiguous blocks of size
    n_t - 1 per interior sigma line, which downstream solvers exploit for
    block-tridiagonal inertia counts.
    """

    theta: Aperture
    sigma: np.ndarray  # ascending, sigma[0] = 0
    t: np.ndarray      # ascending, t[0] = 0, t[-1] = pi
    grading: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.sigma, self.t):
            arr.setflags(write=False)
        if self.sigma[0] != 0.0 or np.any(np.diff(self.sigma) <= 0):
            raise ParameterError("sigma nodes must ascend from 0")
        if self.t[0] != 0.0 or abs(self.t[-1] - WIDTH) > 1e-12 or np.any(np.diff(self.t) <= 0):
            raise ParameterError("t nodes must ascend from 0 to pi")

    @property
    def L(self) -> float:
        return float(self.sigma[-1])

    @property
    def n_sigma(self) -> int:
        return len(self.sigma) - 1

    @property
    def n_t(self) -> int:
        return len(self.t) - 1

    @property
    def n_nodes(self) -> int:
        return (self.n_sigma + 1) * (self.n_t + 1)

    @property
    def short_truncation(self) -> bool:
        """True when L < 4*pi: near-threshold states are likely biased."""
        return self.L < 4 * WIDTH

    @property
    def nodes(self) -> np.ndarray:
        """(n_nodes, 2) array of (sigma, t) coordinates, sigma-major order."""
        sg, tg = np.meshgrid(self.sigma, self.t, indexing="ij")
        return np.column_stack([sg.ravel(), tg.ravel()])

    @property
    def cells(self) -> np.ndarray:
        """(n_cells, 4) connectivity, counter-clockwise corner order."""
        ns, nt = self.n_sigma, self.n_t
        i_s = np.repeat(np.arange(ns), nt)
        i_t = np.tile(np.arange(nt), ns)
        n00 = i_s * (nt + 1) + i_t
        return np.column_stack([n00, n00 + (nt + 1), n00 + (nt + 2), n00 + 1])

    @property
    def boundary_tags(self) -> list[str]:
        tags = []
        ns, nt = self.n_sigma, self.n_t
        for i_s in range(ns + 1):
            for i_t in range(nt + 1):
                if i_s == ns:
                    tags.append(TAG_DIRICHLET_ARTIFICIAL)
                elif i_s == 0 or i_t == 0 or i_t == nt:
                    tags.append(TAG_DIRICHLET_PHYSICAL)
                else:
                    tags.append(TAG_INTERIOR)
        return tags

    @property
    def interior_nodes(self) -> np.ndarray:
        """Sorted node indices of interior (non-Dirichlet) nodes."""
        ns, nt = self.n_sigma, self.n_t
        i_s = np.repeat(np.arange(1, ns), nt - 1)
        i_t = np.tile(np.arange(1, nt), ns - 1)
        return i_s * (nt + 1) + i_t

    def dof_map(self) -> np.ndarray:
        """node index -> interior dof index, or -1 for Dirichlet nodes."""
        dm = np.full(self.n_nodes, -1, dtype=np.int64)
        dm[self.interior_nodes] = np.arange(len(self.interior_nodes))
        return dm

    def cell_areas(self) -> np.ndarray:
        a = np.diff(self.sigma)
        b = np.diff(self.t)
        return np.repeat(a, self.n_t) * np.tile(b, self.n_sigma)

    def extended(self, factor: float = 1.25) -> "ShearedMesh":
        """Mesh on [0, factor*L] continuing the outermost spacing ratio.

        The node sequence up to L is reused verbatim, so the near-corner
        discretization is identical; only the artificial boundary moves.
        This is what makes the truncation-stability comparison meaningful.
        """
        if factor <= 1.0:
            raise ParameterError("extension factor must exceed 1")
        sig = list(self.sigma)
        h = sig[-1] - sig[-2]
        ratio = self.grading.get("ratio", 1.0)
        target = factor * self.L
        while sig[-1] < target:
            h *= ratio
            sig.append(sig[-1] + h)
        return ShearedMesh(self.theta, np.array(sig), self.t.copy(),
                           grading=dict(self.grading))

    def to_json(self, path=None):
        """Serialize nodes, cells and tags; returns the dict."""
        doc = {
            "schema_version": 1,
            "theta": self.theta.theta,
            "L": self.L,
            "n_sigma": self.n_sigma,
            "n_t": self.n_t,
            "grading": self.grading,
            "nodes": self.nodes.tolist(),
            "cells": self.cells.tolist(),
            "boundary_tags": self.boundary_tags,
        }
        if path is not None:
            with open(path, "w") as fh:
                json.dump(doc, fh, sort_keys=True)
        return doc


def build_mesh(theta, L: float, n_sigma: int, n_t: int,
               grading_ratio: float = 1.05) -> ShearedMesh:
    """Structured mesh on [0, L] x [0, pi], geometrically graded in sigma.

    Spacing grows by `grading_ratio` per cell away from sigma = 0, so the
    mesh is finest at the corner (singular potential) and coarsest at the
    artificial boundary.  grading_ratio = 1 gives uniform spacing.
    """
    th = as_aperture(theta)
    if L < 2 * WIDTH:
        raise ParameterError(f"truncation length must satisfy L >= 2*pi, got {L}")
    if n_sigma < 4 or n_t < 4:
        raise ParameterError("n_sigma and n_t must both be at least 4")
    if grading_ratio < 1.0:
        raise ParameterError("grading_ratio must be >= 1")

    if grading_ratio == 1.0:
        sigma = np.linspace(0.0, L, n_sigma + 1)
        h0 = L / n_sigma
    else:
        # first spacing h0 chosen so that sum h0*ratio^i = L exactly
        h0 = L * (grading_ratio - 1.0) / (grading_ratio ** n_sigma - 1.0)
        sigma = np.concatenate([
            [0.0], np.cumsum(h0 * grading_ratio ** np.arange(n_sigma))])
        sigma[-1] = L
    t = np.linspace(0.0, WIDTH, n_t + 1)
    grading = {"ratio": grading_ratio, "h_min": float(h0),
               "h_max": float(sigma[-1] - sigma[-2])}
    return ShearedMesh(th, sigma, t, grading=grading)


def geometric_mesh(theta, L: float, h0: float, n_t: int,
                   grading_ratio: float = 1.05) -> ShearedMesh:
    """Mesh whose sigma spacings start at h0 and grow geometrically past L.

    Unlike build_mesh, the node count is implied: spacings h0*ratio^i are
    appended until the domain covers L (the final node may overshoot
    slightly).  Extending such a mesh keeps every existing node, which is
    required by the truncation-stability filter.
    """
    th = as_aperture(theta)
    if L < 2 * WIDTH:
        raise ParameterError(f"truncation length must satisfy L >= 2*pi, got {L}")
    if h0 <= 0 or grading_ratio < 1.0:
        raise ParameterError("need h0 > 0 and grading_ratio >= 1")
    sig = [0.0]
    h = h0
    while sig[-1] < L:
        sig.append(sig[-1] + h)
        h *= grading_ratio
    if len(sig) < 5:
        raise ParameterError("h0 too coarse: fewer than 4 sigma cells")
    if n_t < 4:
        raise ParameterError("n_t must be at least 4")
    t = np.linspace(0.0, WIDTH, n_t + 1)
    grading = {"ratio": grading_ratio, "h_min": float(h0),
               "h_max": float(sig[-1] - sig[-2])}
    return ShearedMesh(th, np.array(sig), t, grading=grading)
