"""Invariant cohomology: classical tables, spectral pages, page-2 machinery."""

import dataclasses
import math

import numpy as np
import pytest

from hsgeom.forms import (
    basis_form,
    coeff_norm,
    conjugate,
    differential,
    flat_metric_form,
    wedge,
    zero_form,
)
from hsgeom.hodge import Metric
from hsgeom.analysis import torsion_form
from hsgeom.cohomology import (
    CohomClass,
    HypothesisFailed,
    NotHSError,
    classical_groups,
    e2_intersection,
    e2_torsion_class,
    er_closed_exact,
    higher_page_groups,
    spectral_page,
)

IW_BETTI = [1, 4, 8, 10, 8, 4, 1]
IW_E1_TOTALS = [1, 5, 11, 14, 11, 5, 1]
HEIS_BETTI = [1, 5, 11, 14, 11, 5, 1]
IW_DOLBEAULT = [[1, 2, 2, 1], [3, 6, 6, 3], [3, 6, 6, 3], [1, 2, 2, 1]]
IW_BC = [[1, 2, 3, 1], [2, 4, 6, 2], [3, 6, 8, 3], [1, 2, 3, 1]]
HEIS_E2_BC = [[1, 2, 2, 1], [2, 5, 6, 3], [2, 6, 7, 3], [1, 3, 3, 1]]


# -- classical groups ----------------------------------------------------------


def test_torus3_tables_are_binomial(torus3):
    tab = classical_groups(torus3)
    for p in range(4):
        for q in range(4):
            want = math.comb(3, p) * math.comb(3, q)
            assert tab.dolbeault[p, q] == want
            assert tab.bott_chern[p, q] == want
            assert tab.aeppli[p, q] == want
    assert tab.de_rham == [math.comb(6, k) for k in range(7)]
    assert tab.duality_ok


def test_iwasawa_tables(iwasawa):
    tab = classical_groups(iwasawa)
    assert tab.de_rham == IW_BETTI
    assert tab.dolbeault.tolist() == IW_DOLBEAULT
    assert tab.bott_chern.tolist() == IW_BC
    assert tab.duality_ok
    # aeppli is the flip of bott-chern: a[p,q] = bc[n-p, n-q]
    assert tab.aeppli.tolist() == np.array(IW_BC)[::-1, ::-1].tolist()


def test_heis3_betti(heis3):
    tab = classical_groups(heis3)
    assert tab.de_rham == HEIS_BETTI
    assert tab.duality_ok


def test_frolicher_inequality(lie_models):
    """Dolbeault totals dominate the de Rham numbers degree by degree."""
    for model in lie_models.values():
        tab = classical_groups(model)
        for k in range(7):
            total = sum(
                tab.dolbeault[p, k - p] for p in range(4) if 0 <= k - p <= 3
            )
            assert total >= tab.de_rham[k]


def test_lie_only_guard(two_coord):
    with pytest.raises(ValueError):
        classical_groups(two_coord[0])


# -- spectral pages ---------------------------------------------------------------


def test_torus3_degenerates_immediately(torus3):
    page = spectral_page(torus3, 1)
    assert page.degenerates
    for k in range(7):
        assert page.total(k) == math.comb(6, k)


def test_iwasawa_page_cascade(iwasawa):
    e1 = spectral_page(iwasawa, 1)
    assert [e1.total(k) for k in range(7)] == IW_E1_TOTALS  # E1 is still big
    assert not e1.degenerates
    e2 = spectral_page(iwasawa, 2)
    assert [e2.total(k) for k in range(7)] == IW_BETTI
    assert e2.degenerates
    e3 = spectral_page(iwasawa, 3)
    assert [e3.total(k) for k in range(7)] == IW_BETTI


def test_heis3_degenerates_at_one(heis3):
    e1 = spectral_page(heis3, 1)
    assert e1.degenerates
    assert [e1.total(k) for k in range(7)] == HEIS_BETTI


def test_page_one_is_dolbeault(iwasawa):
    tab = classical_groups(iwasawa)
    page = spectral_page(iwasawa, 1)
    for p in range(4):
        for q in range(4):
            assert page.dims[(p, q)] == tab.dolbeault[p, q]


def test_differentials_compose_to_zero(iwasawa):
    for r in (1, 2):
        page = spectral_page(iwasawa, r)
        for (p, q), first in page.d_maps.items():
            tgt = (p + r, q - r + 1)
            second = page.d_maps.get(tgt)
            if second is None or first.size == 0 or second.size == 0:
                continue
            assert np.linalg.norm(second @ first) < 1e-10


def test_rank_arithmetic(iwasawa):
    """dim E_{r+1} = dim E_r - rank(d_r in) - rank(d_r out), slot by slot."""
    e1 = spectral_page(iwasawa, 1)
    e2 = spectral_page(iwasawa, 2)
    rank = lambda M: 0 if M.size == 0 else np.linalg.matrix_rank(M, tol=1e-10)
    for (p, q), dim1 in e1.dims.items():
        out_rk = rank(e1.d_maps[(p, q)])
        src = (p - 1, q)
        in_rk = rank(e1.d_maps[src]) if src in e1.d_maps else 0
        assert e2.dims[(p, q)] == dim1 - out_rk - in_rk


def test_euler_characteristic_conserved(lie_models):
    for model in lie_models.values():
        tab = classical_groups(model)
        chi = sum((-1) ** k * b for k, b in enumerate(tab.de_rham))
        for r in (1, 2):
            page = spectral_page(model, r)
            chi_r = sum((-1) ** k * page.total(k) for k in range(7))
            assert chi_r == chi


# -- page-r bott-chern / aeppli groups ------------------------------------------------


def test_page_one_higher_groups_match_classical(lie_models):
    for model in lie_models.values():
        tab = classical_groups(model)
        hp = higher_page_groups(model, r=1)
        assert hp.bc_dims.tolist() == tab.bott_chern.tolist()
        assert hp.a_dims.tolist() == tab.aeppli.tolist()


def test_higher_duality_all_pages(lie_models):
    for model in lie_models.values():
        for r in (1, 2, 3):
            hp = higher_page_groups(model, r=r)
            assert hp.bc_dims.tolist() == hp.a_dims[::-1, ::-1].tolist()


def test_page_diagnostic_flags(lie_models):
    # the identity-map comparison becomes an isomorphism exactly when the
    # page-r groups collapse onto the spectral page
    assert higher_page_groups(lie_models["torus3"], r=1).page_diagnostic
    assert higher_page_groups(lie_models["torus3"], r=2).page_diagnostic
    assert not higher_page_groups(lie_models["iwasawa"], r=1).page_diagnostic
    assert higher_page_groups(lie_models["iwasawa"], r=2).page_diagnostic
    assert higher_page_groups(lie_models["iwasawa"], r=3).page_diagnostic
    for r in (1, 2, 3):
        assert not higher_page_groups(lie_models["heis3"], r=r).page_diagnostic


def test_iwasawa_page2_collapse(iwasawa):
    hp = higher_page_groups(iwasawa, r=2)
    page = spectral_page(iwasawa, 2)
    for p in range(4):
        for q in range(4):
            assert hp.bc_dims[p, q] == page.dims[(p, q)]
            assert hp.a_dims[p, q] == page.dims[(p, q)]


def test_heis3_page2_tables(heis3):
    hp = higher_page_groups(heis3, r=2)
    assert hp.bc_dims.tolist() == HEIS_E2_BC
    assert hp.a_dims.tolist() == np.array(HEIS_E2_BC)[::-1, ::-1].tolist()


# -- membership tests -----------------------------------------------------------------


def test_er_closed_exact_on_flat_omega(torus3):
    omega = flat_metric_form(torus3)
    out = er_closed_exact(omega, r=2)
    assert out["closed"]
    assert not out["exact"]
    assert out["closed_residual"] < 1e-12


def test_er_exact_witnesses_verify(heis3):
    # dbar(phi3) = phi1 ^ phibar1 is exact on the page and the witnesses
    # returned must reproduce it
    target = differential("dbar", basis_form(heis3, 1, 0, (3,), ()))
    out = er_closed_exact(target, r=2)
    assert out["exact"]
    assert out["exact_residual"] < 1e-10
    zeta, xi, eta = (out["exact_witnesses"][k] for k in ("zeta", "xi", "eta"))
    recon = (
        differential("del", zeta)
        + differential("del", differential("dbar", xi))
        + differential("dbar", eta)
    )
    assert coeff_norm(recon - target) < 1e-9


def test_er_guards(torus3, two_coord):
    omega = flat_metric_form(torus3)
    with pytest.raises(ValueError):
        er_closed_exact(omega, r=5)
    with pytest.raises(ValueError):
        er_closed_exact(flat_metric_form(two_coord[0]), r=2)


# -- the torsion class -------------------------------------------------------------------


def test_torsion_class_vanishes_on_torus(torus3_metric):
    cls, cert = e2_torsion_class(torus3_metric)
    assert isinstance(cls, CohomClass)
    assert cls.group == "E_2"
    assert cls.bidegree == (0, 2)
    assert np.allclose(cls.coordinates, 0.0)
    assert cert["vanishing"]
    assert cert["xi_residual"] < 1e-10
    assert cert["d2_image_norm"] < 1e-12
    assert cert["perturbed_coordinate_drift"] < 1e-10


def test_torsion_class_nonzero_when_injected(torus3_metric, torus3):
    rep = torsion_form(torus3_metric, mode="dim3")
    rho02 = 0.3 * basis_form(torus3, 0, 2, (), (1, 2))
    fake = dataclasses.replace(rep, rho02=rho02, rho20=conjugate(rho02))
    cls, cert = e2_torsion_class(torus3_metric, torsion_report=fake)
    assert not cert["vanishing"]
    assert abs(cert["witness_pairing"]) > 0.1
    assert np.max(np.abs(cls.coordinates)) > 0.1
    assert cert["perturbed_coordinate_drift"] is None


def test_torsion_class_needs_hs(iwasawa):
    with pytest.raises(NotHSError):
        e2_torsion_class(Metric(flat_metric_form(iwasawa)))


# -- the intersection number ---------------------------------------------------------------


def test_intersection_on_torus(torus3_metric):
    res = e2_intersection(torus3_metric)
    assert abs(res.integral - 6.0 * res.a_value) < 1e-9
    assert abs(res.a_value - 1.0) < 1e-12
    assert res.residual < 1e-9
    assert res.closure_residual < 1e-10
    assert res.stage2_residual < 1e-10
    d_tilde = max(
        coeff_norm(differential("del", res.omega_tilde)),
        coeff_norm(differential("dbar", res.omega_tilde)),
    )
    assert d_tilde < 1e-10


def test_intersection_scales_with_volume(torus3):
    # omega -> 2 omega: A -> 8 A and the pairing stays 6 A
    g = Metric(2.0 * flat_metric_form(torus3))
    res = e2_intersection(g)
    assert abs(res.a_value - 8.0) < 1e-10
    assert abs(res.integral - 48.0) < 1e-8


def test_intersection_hypothesis_order(lie_models, torus3_metric, torus3):
    with pytest.raises(HypothesisFailed) as e1:
        e2_intersection(Metric(flat_metric_form(lie_models["heis3"])))
    assert "page-1" in e1.value.which
    with pytest.raises(HypothesisFailed) as e2:
        e2_intersection(Metric(flat_metric_form(lie_models["iwasawa"])))
    assert "hermitian-symplectic" in e2.value.which
    rep = torsion_form(torus3_metric, mode="dim3")
    rho02 = 0.3 * basis_form(torus3, 0, 2, (), (1, 2))
    fake = dataclasses.replace(rep, rho02=rho02, rho20=conjugate(rho02))
    with pytest.raises(HypothesisFailed) as e3:
        e2_intersection(torus3_metric, torsion_report=fake)
    assert "vanishing" in e3.value.which
    assert isinstance(e3.value.certificate, CohomClass)
