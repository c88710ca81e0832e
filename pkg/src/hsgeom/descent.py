"""Energy descent over an Aeppli class.

The torsion energy F of a hermitian-symplectic metric decreases fastest in
the direction u = dbar* omega: perturbing omega by t (del ubar + dbar u)
keeps the generalized volume A fixed and changes F at first order by
-2 t ||dbar* omega||^2.  Critical points of the descent are exactly the
Kahler metrics in the class, so the trace (energy, volume, gradient norm,
Kahler defect per step) is the deliverable, not a convergence theorem.

The line search exploits the conservation law F + Vol = A: along an
admissible direction A is constant, so minimizing F is the same as
maximizing the ordinary volume, which costs one determinant per trial
instead of a torsion solve.  Accepted iterates recompute F from the torsion
system, which turns the conservation law into a per-step cross-check.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .forms import Form, conjugate, differential, real_part
from .hodge import Metric, NotPositiveError, adjoint_diff, inner, norm


class LineSearchStalled(RuntimeError):
    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = state or {}
        self.trace = trace


class PositivityBoundary(RuntimeError):
    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = state or {}
        self.trace = trace


@dataclass
class DescentOptions:
    tol: float = 1e-6                # stop when ||dbar* omega|| drops below
    max_iters: int = 200
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    torsion_mode: str = "dim3"
    torsion_tol: float = None        # forwarded to the torsion solver
    positivity_bisections: int = 60
    kahler_bridge: float = 10.0      # Kahler defect allowance per unit tol

    def initial_step(self, grad_norm):
        return 1.0 / (1.0 + grad_norm)


@dataclass
class DescentTrace:
    iterates: list = field(default_factory=list)
    termination: str = "running"
    options: dict = field(default_factory=dict)

    def append(self, row):
        self.iterates.append(row)

    @property
    def final(self):
        return self.iterates[-1]

    def column(self, key):
        return [row.get(key) for row in self.iterates]

    _COLUMNS = ("k", "F", "vol", "gen_vol", "grad_norm", "d_omega_norm",
                "step", "armijo_trials", "slope_formula", "slope_secant",
                "slope_rel_err")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self._COLUMNS)
        for row in self.iterates:
            w.writerow(["" if row.get(c) is None else repr(row.get(c))
                        for c in self._COLUMNS])
        return buf.getvalue()

    def to_json(self):
        return {
            "schema": 1,
            "termination": self.termination,
            "options": self.options,
            "iterates": self.iterates,
        }


@dataclass
class CriticalityCertificate:
    balanced_defect: float   # ||dbar* omega||
    skt_residual: float      # ||del dbar omega||
    kahler_defect: float     # ||d omega||
    tol: float
    kahler_tol: float
    critical: bool
    kahler: bool

    def to_json(self):
        return {
            "balanced_defect": self.balanced_defect,
            "skt_residual": self.skt_residual,
            "kahler_defect": self.kahler_defect,
            "tol": self.tol,
            "kahler_tol": self.kahler_tol,
            "critical": self.critical,
            "kahler": self.kahler,
        }


@dataclass
class DescentResult:
    trace: DescentTrace
    metric: Metric
    certificate: CriticalityCertificate


def gradient_direction(metric: Metric) -> Form:
    """Steepest-descent direction u = dbar* omega (a (1,0)-form)."""
    return adjoint_diff(metric, "dbar", metric.omega)


def _d_norm(metric: Metric) -> float:
    do = differential("del", metric.omega)
    dbo = differential("dbar", metric.omega)
    return float(np.sqrt(norm(metric, do) ** 2 + norm(metric, dbo) ** 2))


def certify_critical(metric: Metric, tol: float = 1e-6,
                     bridge: float = 10.0) -> CriticalityCertificate:
    """Defect report at a candidate critical point.

    Criticality of the energy is equivalent to the balanced condition
    dbar* omega = 0; combined with the SKT identity (automatic for a
    hermitian-symplectic metric) it forces d omega = 0.  The Kahler defect
    is therefore asserted against bridge * tol rather than independently.
    """
    u = gradient_direction(metric)
    balanced = norm(metric, u)
    skt = norm(metric, differential(
        "del", differential("dbar", metric.omega)))
    kahler = _d_norm(metric)
    kahler_tol = bridge * tol
    return CriticalityCertificate(
        balanced_defect=float(balanced),
        skt_residual=float(skt),
        kahler_defect=float(kahler),
        tol=float(tol),
        kahler_tol=float(kahler_tol),
        critical=bool(balanced < tol),
        kahler=bool(balanced < tol and kahler < kahler_tol),
    )


def _torsion(metric, opts):
    return analysis.torsion_form(metric, mode=opts.torsion_mode,
                                 tol=opts.torsion_tol)


def _energy_state(metric, opts):
    rep = _torsion(metric, opts)
    return {
        "F": rep.energy,
        "vol": rep.volume,
        "gen_vol": rep.generalized_volume,
    }


def _positivity_cap(metric, direction, t_hi, n_bisect):
    """Largest step (up to t_hi) keeping the metric form positive.

    Returns (cap, boundary_hit).  The feasible set is open and convex, so a
    single bisection along the ray finds the boundary.
    """
    def ok(t):
        try:
            Metric(real_part(metric.omega + t * direction))
            return True
        except (NotPositiveError, ValueError):
            return False

    if ok(t_hi):
        return t_hi, False
    lo, hi = 0.0, t_hi
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return 0.9 * lo, True


def descend(metric0: Metric, opts: DescentOptions = None) -> DescentResult:
    """Backtracking descent of the torsion energy inside one Aeppli class.

    Each iterate records energy, volume, generalized volume, gradient norm,
    Kahler defect, the accepted step, and a secant/derivative cross-check of
    the first-variation formula over the accepted step.  Raises
    LineSearchStalled or PositivityBoundary with the partial trace attached.
    """
    opts = opts or DescentOptions()
    trace = DescentTrace(options={
        "tol": opts.tol, "max_iters": opts.max_iters,
        "armijo_c1": opts.armijo_c1, "backtrack": opts.backtrack,
        "min_step": opts.min_step, "torsion_mode": opts.torsion_mode,
    })

    metric = metric0
    state = _energy_state(metric, opts)
    u = gradient_direction(metric)
    g = norm(metric, u)
    row = {"k": 0, **state, "grad_norm": float(g),
           "d_omega_norm": _d_norm(metric),
           "step": None, "armijo_trials": None, "slope_formula": None,
           "slope_secant": None, "slope_rel_err": None}
    trace.append(row)

    for k in range(opts.max_iters):
        if g < opts.tol:
            break
        # del ubar + dbar u is real identically; resymmetrising here keeps
        # roundoff skew from feeding back through u = dbar* omega, which
        # amplifies it geometrically along the iteration otherwise
        direction = real_part(differential("del", conjugate(u))
                              + differential("dbar", u))
        slope = -2.0 * float(np.real(inner(metric, u, u)))   # dF/dt at t=0

        t_init = opts.initial_step(g)
        t_cap, hit = _positivity_cap(metric, direction, t_init,
                                     opts.positivity_bisections)
        if t_cap < opts.min_step:
            raise PositivityBoundary(
                f"feasible step {t_cap:.3e} below minimum {opts.min_step:.3e}"
                f" at iterate {k}",
                state={"k": k, "grad_norm": g, "t_cap": t_cap, **state},
                trace=trace,
            )

        # Armijo on the volume surrogate: A is constant along the direction,
        # so F(t) <= F - c1 t |slope|  <=>  Vol(t) >= Vol + c1 t |slope|.
        t = t_cap
        trials = 0
        accepted = None
        while t >= opts.min_step:
            trials += 1
            try:
                cand = Metric(real_part(metric.omega + t * direction))
            except (NotPositiveError, ValueError):
                t *= opts.backtrack
                continue
            if cand.volume >= state["vol"] - opts.armijo_c1 * t * slope:
                accepted = cand
                break
            t *= opts.backtrack
        if accepted is None:
            raise LineSearchStalled(
                f"no Armijo step above {opts.min_step:.3e} at iterate {k}",
                state={"k": k, "grad_norm": g, "t_last": t,
                       "slope": slope, **state},
                trace=trace,
            )

        new_state = _energy_state(accepted, opts)
        new_u = gradient_direction(accepted)
        # slope of F along the *old* direction at the accepted endpoint;
        # the trapezoid of the endpoint slopes matches the secant exactly
        # for the cubic volume restricted to the ray
        slope_end = -2.0 * float(np.real(inner(accepted, u, new_u)))
        secant = (new_state["F"] - state["F"]) / t
        trapezoid = 0.5 * (slope + slope_end)
        denom = max(abs(trapezoid), abs(secant), 1e-300)
        row.update(step=float(t), armijo_trials=trials,
                   slope_formula=float(slope), slope_secant=float(secant),
                   slope_rel_err=float(abs(secant - trapezoid) / denom))

        metric = accepted
        state = new_state
        u = new_u
        g = norm(metric, u)
        row = {"k": k + 1, **state, "grad_norm": float(g),
               "d_omega_norm": _d_norm(metric),
               "step": None, "armijo_trials": None, "slope_formula": None,
               "slope_secant": None, "slope_rel_err": None}
        trace.append(row)

    trace.termination = "converged" if g < opts.tol else "max_iters"
    cert = certify_critical(metric, opts.tol, opts.kahler_bridge)
    return DescentResult(trace=trace, metric=metric, certificate=cert)
