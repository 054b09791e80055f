import math
import warnings

import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
from scipy.linalg import eigh

from conelab import forms as F
from conelab import geometry as G
from conelab.errors import MismatchError, ParameterError


def test_gamma_coefficient_examples():
    assert F.gamma_coefficient(0.25, math.pi / 6) == pytest.approx(0.75)
    assert F.gamma_coefficient(0.5, 0.9) == 0.0
    assert F.gamma_coefficient(0.1, math.pi / 2 - 1e-9) == pytest.approx(0.24, rel=1e-6)


def test_critical_flux_examples():
    assert F.critical_flux(math.pi / 3) == pytest.approx(0.25)
    assert F.critical_flux(1.0) == pytest.approx(0.27015, abs=1e-5)
    assert F.critical_flux(math.pi / 2 - 1e-9) < 1e-8


def test_potential_coefficient_examples():
    assert F.potential_coefficient(
        F.LayerParams(math.pi / 6, 0.25, 0)) == pytest.approx(-0.75)
    assert F.potential_coefficient(
        F.LayerParams(math.pi / 2 - 1e-9, 0.5, 1)) == pytest.approx(0.0, abs=1e-8)
    assert F.potential_coefficient(
        F.LayerParams(math.pi / 6, 0.5, -1)) == pytest.approx(8.0)


def test_layer_params_validation():
    with pytest.raises(ParameterError):
        F.LayerParams(0.7, 0.0, 0)   # omega = 0 excluded
    with pytest.raises(ParameterError):
        F.LayerParams(0.7, 0.6, 0)
    with pytest.raises(ParameterError):
        F.LayerParams(0.7, -0.2, 0)


def test_reduce_flux_examples():
    assert F.reduce_flux(F.FluxProfile([1.3])) == pytest.approx(0.3)
    assert F.reduce_flux(F.FluxProfile([-0.2])) == pytest.approx(0.2)
    phi = np.linspace(0, 2 * math.pi, 256, endpoint=False)
    assert F.reduce_flux(
        F.FluxProfile(0.3 + 0.2 * np.sin(phi))) == pytest.approx(0.3, abs=1e-12)
    assert F.reduce_flux(F.FluxProfile([0.75])) == pytest.approx(0.25)
    # half-integer ties resolve to exactly 1/2
    assert F.reduce_flux(F.FluxProfile([0.5])) == 0.5
    assert F.reduce_flux(F.FluxProfile([2.5])) == 0.5
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert F.reduce_flux(F.FluxProfile([3.0])) == 0.0
        assert any("omega" in str(w.message) for w in caught)


def test_reduce_flux_properties():
    rng = np.random.default_rng(3)
    for _ in range(200):
        prof = rng.normal(0, 2, rng.integers(1, 64))
        k = rng.integers(-5, 6)
        base = F.reduce_flux(F.FluxProfile(prof))
        assert 0.0 <= base <= 0.5
        assert F.reduce_flux(F.FluxProfile(prof + k)) == pytest.approx(base, abs=1e-12)
        assert F.reduce_flux(F.FluxProfile(-prof)) == pytest.approx(base, abs=1e-12)


@pytest.fixture(scope="module")
def coarse_mesh():
    return G.build_mesh(math.pi / 4, 4 * math.pi, 16, 8, 1.05)


def test_zero_potential_at_half_flux(coarse_mesh):
    pen = F.assemble_fiber(coarse_mesh, F.LayerParams(math.pi / 4, 0.5, 0))
    cot = G.Aperture(math.pi / 4).cot
    K_lap = F.restrict_interior(coarse_mesh, F.assemble_q1(
        coarse_mesh, css=1 + cot * cot, cst=cot, ctt=1.0))
    assert abs(pen.K - K_lap).max() == 0.0


def test_dense_agreement(coarse_mesh):
    # the pencil's lowest eigenvalue by a dense solve agrees with an
    # independent shift-inverted sparse solve to 1e-10
    import scipy.sparse.linalg as spla
    pen = F.assemble_fiber(coarse_mesh, F.LayerParams(math.pi / 4, 0.45, 0))
    dense = eigh(pen.K.toarray(), pen.M.toarray(), eigvals_only=True)[0]
    sparse = spla.eigsh(pen.K, k=1, M=pen.M, sigma=0.0, which="LA",
                        v0=np.ones(pen.n_dof))[0][0]
    assert abs(dense - sparse) < 1e-10


def test_rayleigh_quotient_above_minimum(coarse_mesh):
    pen = F.assemble_fiber(coarse_mesh, F.LayerParams(math.pi / 4, 0.45, 0))
    lam1 = eigh(pen.K.toarray(), pen.M.toarray(), eigvals_only=True)[0]
    idx = coarse_mesh.interior_nodes
    sig, t = coarse_mesh.nodes[idx, 0], coarse_mesh.nodes[idx, 1]
    u = np.sin(t) * sig * np.exp(-sig)
    rq = (u @ (pen.K @ u)) / (u @ (pen.M @ u))
    assert rq >= lam1 - 1e-12


def test_exact_symmetry_and_mass_positivity(coarse_mesh):
    for m, om in ((0, 0.3), (1, 0.5), (-2, 0.1)):
        pen = F.assemble_fiber(coarse_mesh, F.LayerParams(math.pi / 4, om, m))
        assert (pen.K - pen.K.T).nnz == 0
        assert (pen.M - pen.M.T).nnz == 0
        assert np.linalg.eigvalsh(pen.M.toarray()).min() > 0


def test_positive_potential_for_nonzero_m(coarse_mesh):
    # potential part K(m) - K(half-flux Laplacian-like reference) is PSD
    params = F.LayerParams(math.pi / 4, 0.3, 1)
    assert F.potential_coefficient(params) >= 0
    pen = F.assemble_fiber(coarse_mesh, params)
    pen0 = F.assemble_fiber(coarse_mesh, F.LayerParams(math.pi / 4, 0.5, 0))
    pot = (pen.K - pen0.K).toarray()
    assert np.linalg.eigvalsh(pot).min() > -1e-12


def test_monotone_form_ordering_in_omega(coarse_mesh):
    rng = np.random.default_rng(1)
    pens = [F.assemble_fiber(coarse_mesh, F.LayerParams(math.pi / 4, om, 0))
            for om in (0.1, 0.2, 0.3, 0.4, 0.5)]
    for _ in range(20):
        u = rng.normal(0, 1, pens[0].n_dof)
        rqs = [(u @ (p.K @ u)) / (u @ (p.M @ u)) for p in pens]
        assert np.all(np.diff(rqs) > 0)


def test_mesh_params_mismatch(coarse_mesh):
    with pytest.raises(MismatchError):
        F.assemble_fiber(coarse_mesh, F.LayerParams(0.9, 0.3, 0))


def _triangle_p1_lowest(theta, L, n_s, n_t):
    """Independent P1 oracle: plain Laplacian on the unsheared corner strip."""
    th = G.Aperture(theta)
    mesh = G.build_mesh(th, L, n_s, n_t, 1.0)
    # physical (s, t) coordinates of the sheared grid nodes
    pts = mesh.nodes.copy()
    pts[:, 0] = pts[:, 0] - pts[:, 1] * th.cot
    tris = []
    for c in mesh.cells:
        tris.append((c[0], c[1], c[2]))
        tris.append((c[0], c[2], c[3]))
    n = len(pts)
    K = sp.lil_matrix((n, n))
    M = sp.lil_matrix((n, n))
    for tri in tris:
        x = pts[list(tri)]
        d1, d2 = x[1] - x[0], x[2] - x[0]
        area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
        b = np.array([x[1][1] - x[2][1], x[2][1] - x[0][1], x[0][1] - x[1][1]])
        c = np.array([x[2][0] - x[1][0], x[0][0] - x[2][0], x[1][0] - x[0][0]])
        ke = (np.outer(b, b) + np.outer(c, c)) / (4 * area)
        me = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
        for i in range(3):
            for j in range(3):
                K[tri[i], tri[j]] += ke[i, j]
                M[tri[i], tri[j]] += me[i, j]
    idx = mesh.interior_nodes
    K = K.tocsr()[np.ix_(idx, idx)].toarray()
    M = M.tocsr()[np.ix_(idx, idx)].toarray()
    return eigh(K, M, eigvals_only=True)[0]


def test_shear_consistency_with_unsheared_triangulation():
    # zero-potential case: the sheared Q1 pencil and an independent P1
    # assembly on the physical domain agree within discretization error
    theta, L = 0.9, 4 * math.pi
    mesh = G.build_mesh(theta, L, 24, 12, 1.0)
    pen = F.assemble_fiber(mesh, F.LayerParams(theta, 0.5, 0))
    lam_sheared = eigh(pen.K.toarray(), pen.M.toarray(), eigvals_only=True)[0]
    lam_tri = _triangle_p1_lowest(theta, L, 24, 12)
    assert lam_tri == pytest.approx(lam_sheared, rel=0.05)


def test_hardy_weight_values():
    th = math.pi / 4
    # vanishes at the inner conical boundary t -> 0
    assert F.hardy_weight_sheared(1.0, 1e-8, th) < 1e-20
    # log factor vanishes on sigma = rho0(t)
    t = 2.0
    r0 = F.rho0(t, th)
    assert F.hardy_weight_sheared(r0, t, th) == pytest.approx(t ** 3)
    assert F.rho0(math.pi, math.pi / 4) == pytest.approx(math.pi / 2)


def test_hardy_weight_transport_pointwise():
    rng = np.random.default_rng(5)
    th = G.Aperture(0.8)
    t = rng.uniform(0.05, math.pi - 0.05, 500)
    sig = rng.uniform(0.01, 40.0, 500)
    w_sheared = F.hardy_weight_sheared(sig, t, th)
    s = sig - t * th.cot
    r = s * th.sin + t * th.cos
    z = s * th.cos - t * th.sin
    w_meridian = F.hardy_weight_meridian(r, z, th)
    assert np.max(np.abs(w_sheared - w_meridian) / np.abs(w_sheared)) < 1e-12


def test_hardy_weight_matrix_variants_agree(coarse_mesh):
    Ws = F.assemble_hardy_weight(coarse_mesh, math.pi / 4, "sheared").W
    Wm = F.assemble_hardy_weight(coarse_mesh, math.pi / 4, "meridian").W
    scale = abs(Ws).max()
    assert abs(Ws - Wm).max() / scale < 1e-12
    assert (Ws - Ws.T).nnz == 0
    assert np.all(Ws.diagonal() >= 0)


def test_matrix_export_round_trip(tmp_path, coarse_mesh):
    pen = F.assemble_fiber(coarse_mesh, F.LayerParams(math.pi / 4, 0.3, 0))
    mm = tmp_path / "K.mtx"
    F.export_matrix(pen.K, str(mm), fmt="mm")
    back = scipy.io.mmread(str(mm)).tocsr()
    assert abs(back - pen.K).max() < 1e-15
    coo = tmp_path / "K.coo"
    F.export_matrix(pen.K, str(coo), fmt="coo")
    header = coo.read_text().splitlines()[0].split()
    assert int(header[2]) == pen.K.nnz
