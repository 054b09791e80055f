import math

import numpy as np
import pytest

from conelab import eigensolve as E
from conelab import forms as F
from conelab import geometry as G
from conelab.errors import ParameterError


def _pencil(theta=0.7, omega=0.3, m=0, L=6 * math.pi, ns=40, nt=14, ratio=1.05):
    mesh = G.build_mesh(theta, L, ns, nt, ratio)
    return F.assemble_fiber(mesh, F.LayerParams(theta, omega, m))


@pytest.fixture(scope="module")
def pen():
    return _pencil()


def test_oracle_equivalence(pen):
    dense = E.dense_oracle(pen, 6)
    res = E.solve_lowest(pen, 6, shift=0.5)
    rel = np.abs(res.eigenvalues - dense) / np.abs(dense)
    assert rel.max() < 1e-8
    assert np.all(np.diff(res.eigenvalues) >= 0)
    assert np.nanmax(res.residuals) < 1e-8


def test_shift_independence(pen):
    a = E.solve_lowest(pen, 4, shift=0.5)
    b = E.solve_lowest(pen, 4, shift=-10.0)
    assert np.abs(a.eigenvalues - b.eigenvalues).max() < 1e-10


def test_solver_preconditions(pen):
    with pytest.raises(ParameterError):
        E.solve_lowest(pen, 0)
    with pytest.raises(ParameterError):
        E.solve_lowest(pen, 2, shift=1.5)
    with pytest.raises(ParameterError):
        E.solve_lowest(pen, 2, tol=0.0)


def test_count_below_matches_dense(pen):
    dense = E.dense_oracle(pen)
    for mu in (0.5, 1.0, 1.05, 1.2, 2.0, 5.0):
        assert E.count_below(pen, mu) == int((dense < mu).sum())
    mus = np.array([0.5, 1.1, 1.5])
    assert np.array_equal(E.count_below(pen, mus),
                          [(dense < m).sum() for m in mus])


def test_half_flux_lowest_above_threshold():
    # zero potential: the truncated Dirichlet problem sits above the
    # threshold, and conforming refinement approaches it from above
    lam = []
    for ns, nt in ((16, 8), (32, 16)):
        pen = _pencil(math.pi / 4, 0.5, 0, L=4 * math.pi, ns=ns, nt=nt, ratio=1.0)
        lam.append(E.solve_lowest(pen, 1).eigenvalues[0])
    assert lam[0] >= lam[1] >= 1.0


def test_truncation_monotonicity():
    # enlarging L never increases a fixed-index eigenvalue
    mesh = G.geometric_mesh(0.15, 500.0, 0.01, 16, 1.05)
    params = F.LayerParams(0.15, 0.3, 0)
    lam = []
    for m in (mesh, mesh.extended(1.25), mesh.extended(1.6)):
        p = F.assemble_fiber(m, params)
        lam.append(E.solve_lowest(p, 1).eigenvalues[0])
    assert lam[0] >= lam[1] - 1e-6
    assert lam[1] >= lam[2] - 1e-6


def test_discrete_spectrum_subcritical_has_bound_state():
    res = E.discrete_spectrum(0.15, 0.3, 0, L=math.exp(7), h=0.01, n_t=24)
    assert len(res.discrete) >= 1
    assert np.all(res.discrete < 1.0 - res.delta)


def test_discrete_spectrum_supercritical_empty():
    # cos(theta) <= 2*omega: no discrete spectrum
    res = E.discrete_spectrum(math.pi / 3, 0.3, 0, L=50.0, h=0.02, n_t=24)
    assert len(res.discrete) == 0


def test_nonzero_fibers_empty():
    for m in (1, -1):
        res = E.discrete_spectrum(1.0, 0.3, m, L=50.0, h=0.02, n_t=24)
        assert len(res.discrete) == 0


def test_counting_function_examples():
    res = E.SpectrumResult(np.array([0.90, 0.95, 0.99]),
                           np.zeros(3), np.ones(3, bool), delta=1e-4)
    assert E.counting_function(res, 0.05) == 1
    assert E.counting_function(res, 0.5) == 0
    assert E.counting_function(res, 1e-9) == 3  # E -> 0 recovers the total
    with pytest.raises(ParameterError):
        E.counting_function(res, 1.5)


def test_monotonicity_fixed_omega():
    scan = E.monotonicity_scan([0.5, 0.7, 0.9], 0.1, 2,
                               L=40, n_sigma=60, n_t=16)
    assert all(scan["monotone"])
    assert np.all(np.diff(scan["E"][:, 0]) >= -1e-8)


def test_monotonicity_two_parameter_path():
    rule = lambda th: math.cos(th) / math.cos(0.5) * 0.1
    scan = E.monotonicity_scan([0.5, 0.7], rule, 2, L=40, n_sigma=60, n_t=16)
    assert all(scan["monotone"])


def test_monotonicity_equal_points_equal_values():
    scan = E.monotonicity_scan([0.6, 0.6 + 1e-14], 0.2, 3,
                               L=40, n_sigma=40, n_t=12)
    assert np.abs(scan["E"][0] - scan["E"][1]).max() < 1e-9


def test_monotonicity_hypothesis_violation():
    with pytest.raises(ParameterError):
        E.monotonicity_scan([0.5, 0.7], [0.1, 0.05], 2)
    with pytest.raises(ParameterError):
        E.monotonicity_scan([0.7, 0.5], 0.1, 2)  # not ascending


def test_transition_scan_resolvable_aperture():
    # small aperture: bound states deep enough to resolve, so the scan
    # actually exhibits the infinite-to-zero transition
    scan = E.transition_scan(0.1, [0.30, 0.35, 0.40, 0.45, 0.48, 0.499],
                             L=2000.0, h=0.01, n_t=24)
    assert np.all(np.diff(scan.counts) <= 0)
    assert scan.counts[0] >= 1
    assert scan.counts[-1] == 0
    assert abs(scan.omega_star - scan.critical) <= 0.05


def test_transition_scan_grid_above_critical():
    scan = E.transition_scan(math.pi / 3, [0.3, 0.35, 0.4],
                             L=50.0, h=0.02, n_t=16)
    assert np.all(scan.counts == 0)
    assert scan.omega_star == 0.3
    assert scan.warning is not None


def test_spectrum_serialization(tmp_path):
    res = E.discrete_spectrum(0.15, 0.3, 0, L=math.exp(7), h=0.01, n_t=24)
    csv_path = tmp_path / "s.csv"
    res.to_csv(csv_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0].split(",") == E.CSV_COLUMNS
    assert len(lines) == 1 + len(res.eigenvalues)
    doc = res.to_json(tmp_path / "s.json")
    assert doc["schema_version"] == 1
