"""Torsion analysis of Hermitian-symplectic and pluriclosed metrics.

The central objects: for a metric form omega whose associated d-closed
completion exists, the (2,0) torsion form rho solves

    del rho = 0,   dbar rho = -del omega,

with minimal metric L2 norm.  On top of rho sit the torsion energy
F = ||rho||^2, the generalized volume A = F + Vol, the co-closedness energy
of the conjugate torsion, a metric classification with its pointwise sign
field, the positive square-root completion of omega^2 + 2 rho ^ conj(rho),
perturbations which move omega inside its generalized-volume class, and the
first variation of all three functionals.

Every derived number that admits two independent formulas is computed both
ways and cross-asserted; disagreement raises instead of warning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _basis
from .forms import (Form, conjugate, differential, integrate_top, is_real,
                    wedge, zero_form)
from .hodge import (Metric, adjoint_diff, contract, contract_trace,
                    green_solve, harmonic_basis, inner, laplacian,
                    metric_from_form, norm, pointwise_inner, star)

TORSION_MODES = ("hs_min", "dim3", "skt")


class NotFeasibleError(RuntimeError):
    """No torsion form satisfies the constraints at tolerance."""

    def __init__(self, message, residuals=None, certificate=None):
        super().__init__(message)
        self.residuals = dict(residuals or {})
        self.certificate = certificate


class NotSKTError(RuntimeError):
    """skt torsion mode called on a metric with deldbar omega != 0."""


class RootFailure(RuntimeError):
    """Positive square root of a (2,2)-form does not exist."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


def _default_tol(model) -> float:
    return 1e-9 if model.kind == "lie" else 1e-7


def _real_integral(value: complex, tol=1e-8, what="integral") -> float:
    if abs(value.imag) > tol * max(1.0, abs(value.real)):
        raise RuntimeError(f"{what} unexpectedly complex: {value}")
    return float(value.real)


# ---------------------------------------------------------------------------
# torsion


@dataclass
class TorsionReport:
    mode: str
    rho20: Form
    rho02: Form
    energy: float                     # F = ||rho||^2
    volume: float
    generalized_volume: float         # A = F + Vol
    dv_mass: float | None
    g_energy: float | None
    g_marker: str | None
    residuals: dict
    diagnostics: dict
    tolerances: dict

    def to_json(self):
        return {
            "mode": self.mode,
            "F": self.energy,
            "Vol": self.volume,
            "A": self.generalized_volume,
            "dv_mass": self.dv_mass,
            "G": self.g_energy,
            "G_marker": self.g_marker,
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "diagnostics": {
                k: (float(v) if np.isscalar(v) else v)
                for k, v in self.diagnostics.items()
            },
            "tolerances": self.tolerances,
        }


def torsion_least_squares(metric: Metric) -> Form:
    """Minimal-norm torsion by brute-force constrained least squares.

    Independent oracle for torsion_form: assembles the dense stacked system
    {del rho = 0, dbar rho = -del omega} over all (2,0) degrees of freedom
    (channels times grid points), weighted so that both the residual and the
    minimized norm are the metric L2 ones, and solves it with lstsq.  No
    Green operators, stars, or adjoints are involved.
    """
    model = metric.model
    n = metric.n
    p_src = (n - 1, 0)
    d_src = _basis.degree_dims(n, *p_src)
    grid = model.grid_shape
    npts = int(np.prod(grid)) if grid else 1
    m = d_src * npts

    def op_matrix(part, p, q):
        d_in = _basis.degree_dims(n, p, q)
        d_out = _basis.degree_dims(n, *((p + 1, q) if part == "del" else (p, q + 1)))
        A = np.zeros((d_out * npts, d_in * npts), dtype=np.complex128)
        for j in range(d_in * npts):
            x = np.zeros((d_in * npts,), dtype=np.complex128)
            x[j] = 1.0
            y = model.apply_differential(part, p, q, x.reshape((d_in,) + grid))
            A[:, j] = y.reshape(-1)
        return A

    def weight_blocks(p, q):
        # per-point Cholesky transposes, scaled so the stacked Euclidean
        # norm is the mean-based L2 norm
        L = metric.gram_cholesky(p, q)           # (d, d, *grid)
        LH = np.conj(np.moveaxis(L, (0, 1), (-1, -2)))   # (*grid, d, d) = L^H
        return LH / math.sqrt(npts)

    def apply_weight(W, vec, d):
        # vec indexed channel-major: (d, npts) flattened
        V = vec.reshape((d,) + grid)
        out = np.einsum("...uv,v...->u...", W, V)
        return out.reshape(-1)

    def weight_matrix(W, A, d_out):
        out = np.empty_like(A)
        for j in range(A.shape[1]):
            out[:, j] = apply_weight(W, A[:, j], d_out)
        return out

    A_del = op_matrix("del", *p_src)
    A_dbar = op_matrix("dbar", *p_src)
    d_omega = model.apply_differential("del", 1, 1, metric.omega.coeffs)
    d_t1 = _basis.degree_dims(n, n, 0)
    d_t2 = _basis.degree_dims(n, n - 1, 1)

    W_src = weight_blocks(*p_src)
    W_t1 = weight_blocks(n, 0)
    W_t2 = weight_blocks(n - 1, 1)
    Aw = np.vstack([
        weight_matrix(W_t1, A_del, d_t1),
        weight_matrix(W_t2, A_dbar, d_t2),
    ])
    b = np.concatenate([
        np.zeros(d_t1 * npts, dtype=np.complex128),
        apply_weight(W_t2, -d_omega.reshape(-1), d_t2),
    ])
    # substitute y = W_src x so that min ||y||_2 = min ||x||_omega
    Winv = np.linalg.inv(W_src)                  # (*grid, d, d)
    # column transform: Aw @ W_src^{-1}
    Awx = np.empty_like(Aw)
    for i in range(Aw.shape[0]):
        row = Aw[i].reshape((d_src,) + grid)
        Awx[i] = np.einsum("...vu,v...->u...", Winv, row).reshape(-1)
    y, *_ = np.linalg.lstsq(Awx, b, rcond=None)
    x = np.einsum("...uv,v...->u...", Winv, y.reshape((d_src,) + grid))
    return Form(model, *p_src, x)


def torsion_form(metric: Metric, mode: str = "dim3",
                 tol: float = None) -> TorsionReport:
    """Minimal torsion form by the Green-operator formulas.

    hs_min: rho = -G_bc[dbar* del omega + dbar* del del* del omega]
    dim3:   rho = -G_dbar[dbar* del omega]           (n = 3 shortcut)
    skt:    the same formula, but only Im(dbar*)-minimality is claimed and
            the metric must be pluriclosed.
    """
    if mode not in TORSION_MODES:
        raise ValueError(f"unknown torsion mode {mode!r}")
    model = metric.model
    n = metric.n
    if tol is None:
        tol = _default_tol(model)
    omega = metric.omega
    d_omega = differential("del", omega)
    scale = max(1.0, norm(metric, d_omega))

    if mode == "skt":
        ddbar = differential("del", differential("dbar", omega))
        r = norm(metric, ddbar)
        if r > tol * max(1.0, norm(metric, omega)):
            raise NotSKTError(
                f"deldbar omega has norm {r:.3e}; not pluriclosed at {tol:.1e}"
            )

    if mode in ("hs_min", "dim3") and model.kind == "lie":
        from .lie import hs_feasibility
        cert = hs_feasibility(model, omega)
        if not cert.feasible:
            raise NotFeasibleError(
                f"invariant torsion system infeasible "
                f"(residual {cert.residual:.3e})",
                residuals={"least_squares": cert.residual},
                certificate=cert,
            )

    rhs = adjoint_diff(metric, "dbar", d_omega)
    if mode == "hs_min":
        extra = adjoint_diff(
            metric, "dbar",
            differential("del", adjoint_diff(metric, "del", d_omega)),
        )
        rho = -1.0 * green_solve(metric, "bc", rhs + extra)
        min_kind = "bc"
    else:
        rho = -1.0 * green_solve(metric, "dbar", rhs)
        min_kind = "dbar"

    res_del = norm(metric, differential("del", rho)) / scale
    res_dbar = norm(metric, differential("dbar", rho) + d_omega) / scale
    kernel = harmonic_basis(metric, min_kind, n - 1, 0)
    res_min = max((abs(inner(metric, rho, h)) for h in kernel), default=0.0)
    residuals = {
        "del_rho": res_del,
        "dbar_rho_plus_del_omega": res_dbar,
        "minimality": res_min,
    }
    feas_tol = max(tol, 100 * _default_tol(model))
    if res_dbar > feas_tol or res_del > feas_tol:
        raise NotFeasibleError(
            f"torsion constraints violated (del: {res_del:.3e}, "
            f"dbar: {res_dbar:.3e})", residuals=residuals,
        )

    F = inner(metric, rho, rho).real
    vol = metric.volume
    A = F + vol
    rho02 = conjugate(rho)
    diagnostics = {
        "del_omega_norm": norm(metric, d_omega),
        "f_zero_implies_del_omega": (
            norm(metric, d_omega) if F < tol else None
        ),
    }
    return TorsionReport(
        mode=mode, rho20=rho, rho02=rho02,
        energy=F, volume=vol, generalized_volume=A,
        dv_mass=None, g_energy=None, g_marker=None,
        residuals=residuals, diagnostics=diagnostics,
        tolerances={"constraint": tol},
    )


def e2_obstruction(metric: Metric, rho02: Form, tol: float = None):
    """Co-closedness energy of a (0,2)-form, when it is dbar-exact.

    Returns (value, marker, diagnostics): value = ||dbar* rho02||^2 when
    rho02 lies in the image of dbar (three independent routes are
    cross-checked), else None with an explanatory marker.
    """
    if tol is None:
        tol = _default_tol(metric.model)
    nr = norm(metric, rho02)
    dbs = adjoint_diff(metric, "dbar", rho02)
    xi = adjoint_diff(metric, "dbar", green_solve(metric, "dbar", rho02))
    member_res = norm(metric, differential("dbar", xi) - rho02) / max(1.0, nr)
    diagnostics = {"membership_residual": member_res,
                   "dbar_star_rho_norm": norm(metric, dbs)}
    if member_res > max(tol, 1e3 * _default_tol(metric.model)) and nr > tol:
        return None, "page-2 torsion class nonzero", diagnostics
    g1 = norm(metric, dbs) ** 2
    g2 = inner(metric, laplacian(metric, "dbar", rho02), rho02).real \
        - norm(metric, differential("dbar", rho02)) ** 2
    g3 = norm(metric, laplacian(metric, "dbar", xi)) ** 2
    s = max(1.0, g1)
    if abs(g1 - g2) > 1e-6 * s or abs(g1 - g3) > 1e-6 * s:
        raise RuntimeError(
            f"co-closedness energy routes disagree: {g1}, {g2}, {g3}"
        )
    diagnostics["g_routes"] = (g1, g2, g3)
    return g1, None, diagnostics


def energy_and_volume(metric: Metric, mode: str = "dim3",
                      tol: float = None) -> TorsionReport:
    """Complete torsion report with dual-route energies and diagnostics."""
    report = torsion_form(metric, mode=mode, tol=tol)
    rho, rho02 = report.rho20, report.rho02
    n = metric.n

    # energy again, by the wedge formula (different code path)
    pow_omega = metric.omega
    for _ in range(n - 3):
        pow_omega = wedge(pow_omega, metric.omega)
    f_wedge = _real_integral(
        integrate_top(wedge(wedge(rho, rho02), pow_omega))
        / math.factorial(n - 2),
        what="wedge energy",
    )
    if abs(f_wedge - report.energy) > 1e-9 * max(1.0, report.energy):
        raise RuntimeError(
            f"energy routes disagree: pointwise {report.energy!r} vs "
            f"wedge {f_wedge!r}"
        )

    # mass of the completed volume form (1 + |rho|^2) dV
    dens = (1.0 + pointwise_inner(metric, rho, rho).real) * metric.density
    dv_mass = float(np.real(metric.model.mean(dens)))

    g_val, g_marker, g_diag = e2_obstruction(metric, rho02, tol=tol)

    tilde_kernel = harmonic_basis(metric, "tilde", 0, 2)
    tilde_pairings = [abs(inner(metric, rho02, h)) for h in tilde_kernel]

    report.dv_mass = dv_mass
    report.g_energy = g_val
    report.g_marker = g_marker
    report.diagnostics.update(g_diag)
    report.diagnostics["energy_wedge_route"] = f_wedge
    report.diagnostics["tilde_harmonic_pairings"] = tilde_pairings
    report.diagnostics["rho_norm"] = math.sqrt(max(report.energy, 0.0))
    report.residuals["dv_mass_vs_A"] = abs(dv_mass - report.generalized_volume)
    return report


# ---------------------------------------------------------------------------
# classification


@dataclass
class MetricClassification:
    kahler: bool
    skt: bool
    gauduchon: bool
    balanced: bool
    strongly_gauduchon: bool
    hs_feasible: bool
    residuals: dict
    sign_field: np.ndarray
    set_fractions: dict
    tolerance: float

    def to_json(self):
        s = np.asarray(self.sign_field, dtype=float)
        return {
            "kahler": self.kahler,
            "skt": self.skt,
            "gauduchon": self.gauduchon,
            "balanced": self.balanced,
            "strongly_gauduchon": self.strongly_gauduchon,
            "hs_feasible": self.hs_feasible,
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "sign_field": {
                "min": float(s.min()), "max": float(s.max()),
                "mean": float(s.mean()),
            },
            "set_fractions": {k: float(v)
                              for k, v in self.set_fractions.items()},
            "tolerance": self.tolerance,
        }


def _im_dbar_residual(metric: Metric, v: Form) -> float:
    """Relative distance of v from the image of dbar."""
    nv = norm(metric, v)
    if nv == 0.0:
        return 0.0
    w = differential(
        "dbar", adjoint_diff(metric, "dbar", green_solve(metric, "dbar", v))
    )
    return norm(metric, v - w) / nv


def classify_metric(metric: Metric, tol: float = None) -> MetricClassification:
    """Decide the standard metric classes by residual tests."""
    model = metric.model
    if tol is None:
        tol = _default_tol(model)
    omega = metric.omega
    n = metric.n
    omega_pow = omega
    for _ in range(n - 2):
        omega_pow = wedge(omega_pow, omega)      # omega^{n-1}

    scale = max(1.0, norm(metric, omega))
    r_kahler = norm(metric, differential("del", omega)) / scale
    r_skt = norm(metric, differential("del", differential("dbar", omega))) / scale
    d_pow = differential("del", omega_pow)
    r_bal = norm(metric, d_pow) / scale
    r_gau = norm(metric, differential("dbar", d_pow)) / scale
    r_sg = _im_dbar_residual(metric, d_pow)

    if model.kind == "lie":
        from .lie import hs_feasibility
        cert = hs_feasibility(model, omega)
        hs_ok, r_hs = cert.feasible, cert.residual
    else:
        try:
            rep = torsion_form(metric, mode="dim3", tol=tol)
            hs_ok = True
            r_hs = max(rep.residuals["del_rho"],
                       rep.residuals["dbar_rho_plus_del_omega"])
        except NotFeasibleError as exc:
            hs_ok = False
            r_hs = max(exc.residuals.values()) if exc.residuals else math.inf

    alpha, prim, _ = lefschetz_alpha(metric)
    a_wedge = wedge(alpha, omega)
    s = (pointwise_inner(metric, a_wedge, a_wedge).real
         - pointwise_inner(metric, prim, prim).real)
    s_arr = np.asarray(s)
    total = s_arr.size
    frac_u = float(np.count_nonzero(s_arr > tol)) / total
    frac_v = float(np.count_nonzero(s_arr < -tol)) / total
    frac_z = 1.0 - frac_u - frac_v

    return MetricClassification(
        kahler=r_kahler <= tol,
        skt=r_skt <= tol,
        gauduchon=r_gau <= tol,
        balanced=r_bal <= tol,
        strongly_gauduchon=r_sg <= max(tol, 1e2 * _default_tol(model)),
        hs_feasible=hs_ok,
        residuals={
            "d_omega": r_kahler,
            "deldbar_omega": r_skt,
            "d_omega_power": r_bal,
            "deldbar_omega_power": r_gau,
            "sg_membership": r_sg,
            "hs": r_hs,
        },
        sign_field=s_arr,
        set_fractions={"positive": frac_u, "negative": frac_v,
                       "null": frac_z},
        tolerance=tol,
    )


# ---------------------------------------------------------------------------
# Lefschetz splitting of del omega


def lefschetz_alpha(metric: Metric):
    """Split del omega = prim + alpha ^ omega with prim primitive.

    Returns (alpha, prim, residual of the pointwise sign-field identity
    i del omega ^ dbar omega = s dV).
    """
    n = metric.n
    if n != 3:
        raise ValueError("implemented for complex dimension 3")
    omega = metric.omega
    d_omega = differential("del", omega)
    alpha = 0.5 * contract(metric, d_omega)
    prim = d_omega - wedge(alpha, omega)
    # postcondition: prim really is primitive
    lp = contract(metric, prim)
    if norm(metric, lp) > 1e-8 * max(1.0, norm(metric, d_omega)):
        raise RuntimeError("primitive part failed the contraction test")

    a_wedge = wedge(alpha, omega)
    s = (pointwise_inner(metric, a_wedge, a_wedge).real
         - pointwise_inner(metric, prim, prim).real)
    lhs = 1j * wedge(d_omega, conjugate(d_omega)).coeffs[0]
    rhs = s * metric.volume_form().coeffs[0]
    scale = max(1.0, float(np.max(np.abs(lhs))))
    residual = float(np.max(np.abs(lhs - rhs))) / scale
    return alpha, prim, residual


# ---------------------------------------------------------------------------
# sG form and minimal completion


@dataclass
class SGCompletion:
    Omega: Form                 # omega^2 + 2 rho ^ conj(rho), a (2,2)-form
    gamma: Form                 # its positive (1,1) square root
    rho20: Form
    omega_tilde: tuple          # (rho20, omega, rho02): the d-closed completion
    identities: dict

    def to_json(self):
        return {"identities": {k: float(v)
                               for k, v in self.identities.items()}}


def _matrix_of_22(a: Form):
    """K[i,j] = coefficient on phi^{comp(i)} ^ phibar^{comp(j)} (n = 3)."""
    n = a.model.n
    if n != 3 or (a.p, a.q) != (2, 2):
        raise ValueError("expects a (2,2)-form in dimension 3")
    idx = _basis.channel_index(3, 2, 2)
    comp = {0: (2, 3), 1: (1, 3), 2: (1, 2)}
    grid = a.model.grid_shape
    K = np.empty(grid + (3, 3), dtype=np.complex128)
    for i in range(3):
        for j in range(3):
            K[..., i, j] = a.coeffs[idx[(comp[i], comp[j])]]
    return K


def root_of_22(Omega: Form, pos_tol: float = 1e-9) -> Form:
    """Positive (1,1)-root gamma with gamma^2 = Omega (n = 3).

    Writes the (2,2)-form as the adjugate of the root's coefficient matrix
    and inverts the adjugate in closed form: G = adj(M)/sqrt(det M), using
    adj(adj(G)) = det(G) G for 3x3 matrices.
    """
    model = Omega.model
    K = _matrix_of_22(Omega)
    sign = np.array([[(-1) ** (i + j) for j in range(3)] for i in range(3)])
    M = 0.5 * np.swapaxes(K * sign, -1, -2)     # candidate adjugate of G
    herm = np.max(np.abs(M - np.conj(np.swapaxes(M, -1, -2))))
    if herm > 1e-8 * max(1.0, float(np.max(np.abs(M)))):
        raise RootFailure(f"coefficient matrix not Hermitian ({herm:.2e})")
    M = 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))
    eigs = np.linalg.eigvalsh(M)
    worst = float(eigs[..., 0].min())
    if worst <= pos_tol:
        raise RootFailure(
            f"(2,2)-form not positive enough for a root "
            f"(min eigenvalue {worst:.3e})", worst=worst,
        )
    det = np.linalg.det(M).real
    adjM = det[..., None, None] * np.linalg.inv(M)
    G = adjM / np.sqrt(det)[..., None, None]
    coeffs = np.zeros((_basis.degree_dims(3, 1, 1),) + model.grid_shape,
                      dtype=np.complex128)
    idx = _basis.channel_index(3, 1, 1)
    for j in range(1, 4):
        for k in range(1, 4):
            coeffs[idx[((j,), (k,))]] = 1j * G[..., j - 1, k - 1]
    return Form(model, 1, 1, coeffs)


def sg_and_completion(metric: Metric, mode: str = "dim3",
                      tol: float = None) -> SGCompletion:
    """The associated positive (2,2)-form, its root, and the completion."""
    if tol is None:
        tol = _default_tol(metric.model)
    report = torsion_form(metric, mode=mode, tol=tol)
    rho, rho02 = report.rho20, report.rho02
    omega = metric.omega
    Omega = wedge(omega, omega) + 2.0 * wedge(rho, rho02)
    gamma = root_of_22(Omega)
    root_res = norm_of_coeffs(wedge(gamma, gamma) - Omega) / max(
        1.0, norm_of_coeffs(Omega))

    # quoted integral identities
    lhs1 = _real_integral(integrate_top(wedge(Omega, omega)) / 6.0,
                          what="Omega wedge omega")
    rhs1 = (2.0 / 3.0) * report.volume + (1.0 / 3.0) * report.generalized_volume
    dbar_Omega = differential("dbar", Omega)
    closure = dbar_Omega + 2.0 * differential("del", wedge(rho02, omega))
    r2 = norm_of_coeffs(closure) / max(1.0, norm_of_coeffs(dbar_Omega))

    # completion integral: the (3,3)-part of (rho + omega + rho02)^3 / 3!
    top = wedge(wedge(omega, omega), omega) \
        + 6.0 * wedge(wedge(rho, rho02), omega)
    tilde_vol = _real_integral(integrate_top(top) / 6.0,
                               what="completion volume")
    d_tilde = max(
        norm_of_coeffs(differential("del", rho)),
        norm_of_coeffs(differential("dbar", rho)
                       + differential("del", omega)),
        norm_of_coeffs(differential("dbar", omega)
                       + differential("del", rho02)),
        norm_of_coeffs(differential("dbar", rho02)),
    )

    identities = {
        "sixth_integral_lhs": lhs1,
        "sixth_integral_rhs": rhs1,
        "sixth_integral_residual": abs(lhs1 - rhs1),
        "dbar_Omega_residual": r2,
        "root_residual": root_res,
        "completion_volume": tilde_vol,
        "completion_vs_A": abs(tilde_vol - report.generalized_volume),
        "completion_closure": d_tilde,
    }
    return SGCompletion(Omega=Omega, gamma=gamma, rho20=rho,
                        omega_tilde=(rho, omega, rho02),
                        identities=identities)


def norm_of_coeffs(a: Form) -> float:
    """Metric-free coefficient norm; scale gauge for residual reporting."""
    if a.coeffs.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.abs(a.coeffs) ** 2) * a.coeffs.shape[0]))


# ---------------------------------------------------------------------------
# moving inside the generalized-volume class


@dataclass
class PerturbReport:
    transport_residual: float      # || rho' - (rho + del u) ||
    volume_change: float
    energy_change: float
    a_change: float
    closed_direction: bool         # del u = 0 within tolerance
    quadratic_residual: float | None

    def to_json(self):
        return {k: (float(v) if v is not None and not isinstance(v, bool)
                    else v)
                for k, v in self.__dict__.items()}


def aeppli_perturb(metric: Metric, u: Form, mode: str = "dim3",
                   tol: float = None):
    """Perturb omega by del(conj u) + dbar(u) and track the torsion.

    Returns the new metric and a report of the exact transport identity
    rho' = rho + del u, the change of volume and energy, and the invariance
    of the generalized volume.
    """
    if (u.p, u.q) != (1, 0):
        raise ValueError("perturbation potential must be a (1,0)-form")
    if tol is None:
        tol = _default_tol(metric.model)
    omega2 = metric.omega + differential("del", conjugate(u)) \
        + differential("dbar", u)
    metric2 = metric_from_form(omega2)
    rep1 = torsion_form(metric, mode=mode, tol=tol)
    rep2 = torsion_form(metric2, mode=mode, tol=tol)
    du = differential("del", u)
    transported = rep1.rho20 + du
    tres = norm(metric2, rep2.rho20 - transported) / max(
        1.0, norm(metric2, transported))
    closed = norm(metric, du) <= tol * max(1.0, norm(metric, u))
    quad = None
    if closed:
        # same torsion, re-weighted: F' = F + int rho ^ conj rho ^ (w' - w)
        shift = _real_integral(
            integrate_top(wedge(wedge(rep1.rho20, rep1.rho02),
                                omega2 - metric.omega)),
            what="energy shift")
        quad = abs(rep2.energy - rep1.energy - shift)
    return metric2, PerturbReport(
        transport_residual=tres,
        volume_change=rep2.volume - rep1.volume,
        energy_change=rep2.energy - rep1.energy,
        a_change=rep2.generalized_volume - rep1.generalized_volume,
        closed_direction=closed,
        quadratic_residual=quad,
    )


def bc_perturb(metric: Metric, phi: Form, mode: str = "dim3",
               tol: float = None):
    """Perturb omega by i del dbar phi (phi a real function).

    The torsion form must be unchanged; the energy moves by the re-weighting
    integral only.
    """
    if (phi.p, phi.q) != (0, 0):
        raise ValueError("expected a function")
    if tol is None:
        tol = _default_tol(metric.model)
    bump = 1j * differential("del", differential("dbar", phi))
    omega2 = metric.omega + bump
    metric2 = metric_from_form(omega2)
    rep1 = torsion_form(metric, mode=mode, tol=tol)
    rep2 = torsion_form(metric2, mode=mode, tol=tol)
    same = norm(metric2, rep2.rho20 - rep1.rho20) / max(
        1.0, norm(metric2, rep1.rho20))
    shift = _real_integral(
        integrate_top(wedge(wedge(rep1.rho20, rep1.rho02), bump)),
        what="energy shift")
    quad = abs(rep2.energy - rep1.energy - shift)
    return metric2, PerturbReport(
        transport_residual=same,
        volume_change=rep2.volume - rep1.volume,
        energy_change=rep2.energy - rep1.energy,
        a_change=rep2.generalized_volume - rep1.generalized_volume,
        closed_direction=True,
        quadratic_residual=quad,
    )


# ---------------------------------------------------------------------------
# first variation


@dataclass
class FirstVariation:
    dF: float
    dVol: float
    dA: float
    gradient_norm: float     # || dbar* omega ||

    def to_json(self):
        return {k: float(v) for k, v in self.__dict__.items()}


def first_variation(metric: Metric, u: Form) -> FirstVariation:
    """Directional derivatives of F, Vol, A along del(conj u) + dbar(u).

    dF comes from the variational formula (the cubic correction term is
    absent in dimension 3); dVol from differentiating the volume integral
    directly, an independent route; their sum is the derivative of the
    generalized volume and must vanish.
    """
    if (u.p, u.q) != (1, 0):
        raise ValueError("direction potential must be a (1,0)-form")
    if metric.n != 3:
        raise ValueError("implemented for complex dimension 3")
    grad = adjoint_diff(metric, "dbar", metric.omega)
    pairing = inner(metric, u, grad).real
    dF = -2.0 * pairing
    gamma = differential("del", conjugate(u)) + differential("dbar", u)
    dVol = _real_integral(
        integrate_top(wedge(gamma, wedge(metric.omega, metric.omega))) / 2.0,
        what="volume derivative")
    return FirstVariation(dF=dF, dVol=dVol, dA=dF + dVol,
                          gradient_norm=norm(metric, grad))


def scalar_volume_derivative(metric: Metric, phi: Form) -> float:
    """Derivative of the volume along i del dbar phi: int phi i del w ^ dbar w."""
    if (phi.p, phi.q) != (0, 0):
        raise ValueError("expected a function")
    d_omega = differential("del", metric.omega)
    integrand = 1j * wedge(phi, wedge(d_omega, conjugate(d_omega)))
    return _real_integral(integrate_top(integrand),
                          what="scalar volume derivative")


# ---------------------------------------------------------------------------
# Monge-Ampere constants


@dataclass
class MACoefficients:
    c: float
    holder_gap: float
    b_lower: float
    f_normaliser: np.ndarray

    def to_json(self):
        f = np.asarray(self.f_normaliser, dtype=float)
        return {
            "c": self.c,
            "holder_gap": self.holder_gap,
            "b_lower": self.b_lower,
            "f_normaliser": {"min": float(f.min()), "max": float(f.max()),
                             "mean": float(f.mean())},
        }


def ma_constants(metric: Metric, gamma: Metric,
                 mode: str = "dim3") -> MACoefficients:
    """Normalization constants of the volume-comparison problem."""
    report = torsion_form(metric, mode=mode)
    A = report.generalized_volume
    omega, g = metric.omega, gamma.omega
    vol_gamma = _real_integral(
        integrate_top(wedge(wedge(g, g), g)) / 6.0, what="gamma volume")
    mixed = _real_integral(
        integrate_top(wedge(omega, wedge(g, g))) / 2.0, what="mixed volume")
    c = 6.0 * A * vol_gamma ** 2 / mixed ** 3

    ratio = (metric.detH / gamma.detH) ** (1.0 / 3.0)
    lhs = float(np.real(metric.model.mean(ratio * gamma.density)))
    rhs = metric.volume ** (1.0 / 3.0) * gamma.volume ** (2.0 / 3.0)
    gap = rhs - lhs

    f = np.real(contract_trace(gamma, omega))
    b = report.volume / A
    return MACoefficients(c=c, holder_gap=gap, b_lower=b, f_normaliser=f)


# ---------------------------------------------------------------------------
# holomorphic 1-form audit


@dataclass
class OneFormAudit:
    entries: list
    max_d_residual: float
    passes: bool

    def to_json(self):
        return {
            "entries": [{k: float(v) for k, v in e.items()}
                        for e in self.entries],
            "max_d_residual": float(self.max_d_residual),
            "passes": self.passes,
        }


def holo_oneform_audit(metric: Metric, tol: float = None) -> OneFormAudit:
    """Check that every dbar-closed (1,0)-form is d-closed.

    The basis audited is the numerically computed dbar-harmonic space on
    (1,0) (harmonic forms are automatically dbar-closed).  A violation is
    an obstruction to the existence of a compatible d-closed completion for
    any metric on the model.
    """
    if tol is None:
        tol = _default_tol(metric.model)
    entries = []
    worst = 0.0
    for h in harmonic_basis(metric, "dbar", 1, 0):
        r_dbar = norm(metric, differential("dbar", h))
        r_d = norm(metric, differential("del", h))
        entries.append({"dbar_residual": r_dbar, "d_residual": r_d})
        worst = max(worst, r_d)
    return OneFormAudit(entries=entries, max_d_residual=worst,
                        passes=worst <= max(tol, 1e2 * _default_tol(metric.model)))
