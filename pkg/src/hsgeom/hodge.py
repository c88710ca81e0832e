"""Metric-dependent operators on the bicomplex.

Inner products, the complex-linear Hodge star, adjoint differentials, the
four Laplacians (holomorphic, antiholomorphic, the six-term fourth-order
one, and the projector-twisted second-order one), harmonic projection,
Green operators, orthogonal three-space splittings, and the Lefschetz
contraction.

Conventions, locked by the test suite:

* omega = i * sum_{j,k} H_{jk} phi^j ^ phibar^k with H Hermitian positive
  definite; the flat reference omega0 = (i/2) sum phi^k ^ phibar^k has
  H = I/2, so |phi^k|^2 = 2.
* <phi^j, phi^k> = (H^{-1})_{kj}; dV_omega = 2^n det(H) dV_0 where dV_0 is
  the unit-mass reference volume form.
* star is complex-linear, (p,q) -> (n-q,n-p), characterized by
  a ^ star(conj b) = <a,b>_pt dV_omega pointwise; hence star(star a) =
  (-1)^{p+q} a and the adjoints are del* = -star dbar star,
  dbar* = -star del star.

Green operators: the finite invariant backend uses an eigendecomposition in
metric-orthonormal coordinates with a relative singular-value cutoff; the
grid backend runs kernel-deflated preconditioned conjugate gradients, with
the preconditioner built from the (numerically sampled) Fourier symbol of
the same operator at the grid-averaged metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _basis
from .forms import BidegreeError, Form, differential, is_real, zero_form

LAPLACIAN_KINDS = ("del", "dbar", "bc", "tilde")

_EIG_CUTOFF = 1e-10        # relative eigenvalue cutoff, finite backend
_SYMBOL_RCOND = 1e-8       # relative cutoff for symbol pseudoinverses
_CG_TOL = 1e-9             # default relative residual for iterative solves
_KERNEL_RESIDUAL = 1e-9    # relative residual demanded of deflated kernels


class NotPositiveError(ValueError):
    """The candidate metric form fails pointwise positive-definiteness."""

    def __init__(self, worst, location):
        super().__init__(
            f"(1,1)-form is not positive: min eigenvalue {worst:.6e} "
            f"at grid index {location}"
        )
        self.worst = worst
        self.location = location


class SolveDiverged(RuntimeError):
    """Iterative Green solve failed to reach its residual target."""

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = tuple(residual_history)


@dataclass
class GreenInfo:
    method: str
    iterations: int
    residual: float
    relative_residual: float
    discarded_mass: float
    residual_history: tuple = field(default_factory=tuple)


def _trailing(mat):
    """(d1, d2, *grid) -> (*grid, d1, d2) for batched linalg."""
    return np.moveaxis(mat, (0, 1), (-2, -1))


def _leading(mat):
    return np.moveaxis(mat, (-2, -1), (0, 1))


class Metric:
    """A positive (1,1)-form with cached pointwise linear-algebra data."""

    def __init__(self, omega: Form, pos_tol: float = 1e-9):
        if (omega.p, omega.q) != (1, 1):
            raise BidegreeError("a metric form must have bidegree (1,1)")
        if not is_real(omega, 1e-8):
            raise ValueError("metric form must be real")
        self.model = omega.model
        self.omega = omega
        n = self.model.n
        self.n = n

        H = _matrix_of_11(omega)           # (*grid, n, n)
        herm_dev = np.max(np.abs(H - np.conj(np.swapaxes(H, -1, -2))))
        if herm_dev > 1e-8 * max(1.0, np.max(np.abs(H))):
            raise ValueError(f"coefficient matrix not Hermitian ({herm_dev:.2e})")
        H = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
        eigs = np.linalg.eigvalsh(H)
        worst = float(eigs[..., 0].min())
        if worst <= pos_tol:
            loc = np.unravel_index(int(np.argmin(eigs[..., 0])),
                                   eigs[..., 0].shape)
            raise NotPositiveError(worst, loc)

        self.H = H
        self.Hinv = np.linalg.inv(H)
        det = np.linalg.det(H)
        self.detH = det.real
        self.density = (2.0 ** n) * self.detH    # dV_omega / dV_0, pointwise
        self.volume = float(np.real(self.model.mean(self.density)))
        self.min_eigenvalue = worst

        self._pairing_cache: dict = {}
        self._chol_cache: dict = {}
        self._star_cache: dict = {}
        self._lmat_cache: dict = {}
        self._gram_inv_cache: dict = {}
        self._eig_cache: dict = {}
        self._kernel_cache: dict = {}
        self._symbol_cache: dict = {}
        self._averaged = None

    # -- pointwise Gram data -------------------------------------------------

    def pairing(self, p, q):
        """Matrix P with P[u, w] = <e_u, e_w> pointwise, channel-first."""
        key = (p, q)
        if key not in self._pairing_cache:
            bas = _basis.basis(self.n, p, q)
            d = len(bas)
            grid = self.model.grid_shape
            M1 = np.swapaxes(self.Hinv, -1, -2)   # <phi^j, phi^k>
            M2 = self.Hinv                        # <phibar^j, phibar^k>
            P = np.empty(grid + (d, d), dtype=np.complex128)
            for u, (I, J) in enumerate(bas):
                for w, (K, L) in enumerate(bas):
                    i0 = np.array(I, dtype=int) - 1
                    k0 = np.array(K, dtype=int) - 1
                    j0 = np.array(J, dtype=int) - 1
                    l0 = np.array(L, dtype=int) - 1
                    d1 = np.linalg.det(M1[..., i0[:, None], k0[None, :]])
                    d2 = np.linalg.det(M2[..., j0[:, None], l0[None, :]])
                    P[..., u, w] = d1 * d2
            self._pairing_cache[key] = _leading(P)
        return self._pairing_cache[key]

    def gram(self, p, q):
        """Numpy-convention Gram: pointwise <a,b> = b^H G a."""
        return np.conj(self.pairing(p, q))

    def gram_cholesky(self, p, q):
        """Pointwise Cholesky factor L of the volume-weighted Gram.

        ||a||^2_{L2} = mean over the grid of |L(x)^H a(x)|^2.
        """
        key = (p, q)
        if key not in self._chol_cache:
            G = _trailing(self.gram(p, q)) * self.density[..., None, None]
            self._chol_cache[key] = _leading(np.linalg.cholesky(G))
        return self._chol_cache[key]

    def _gram_inverse(self, p, q):
        key = (p, q)
        if key not in self._gram_inv_cache:
            self._gram_inv_cache[key] = _leading(
                np.linalg.inv(_trailing(self.gram(p, q)))
            )
        return self._gram_inv_cache[key]

    # -- star ----------------------------------------------------------------

    def star_matrix(self, p, q):
        """Channel matrix of star: (p,q) -> (n-q, n-p)."""
        key = (p, q)
        if key not in self._star_cache:
            n = self.n
            d = _basis.degree_dims(n, p, q)
            d_out = _basis.degree_dims(n, n - q, n - p)
            grid = self.model.grid_shape
            if d == 0 or d_out == 0:
                self._star_cache[key] = np.zeros(
                    (d_out, d) + grid, dtype=np.complex128
                )
                return self._star_cache[key]
            W = _basis.wedge_pairing(n, q, p)          # (d, d_out) signed perm
            perm, csign = _basis.conjugation(n, q, p)  # conj: (p,q) -> (q,p)
            inv_perm = np.empty_like(perm)
            inv_perm[perm] = np.arange(d)
            P = self.pairing(q, p)[:, inv_perm]        # (d, d, *grid)
            sigma = (-1) ** ((n * (n - 1)) // 2)
            factor = (1j ** n) * sigma * csign
            S = np.einsum("vw,vu...->wu...", W, P) * factor
            S = S * self.detH
            self._star_cache[key] = S
        return self._star_cache[key]

    # -- Lefschetz -----------------------------------------------------------

    def wedge_omega_matrix(self, p, q):
        """Channel matrix of a -> omega ^ a, (p,q) -> (p+1,q+1)."""
        key = (p, q)
        if key not in self._lmat_cache:
            n = self.n
            d_in = _basis.degree_dims(n, p, q)
            d_out = _basis.degree_dims(n, p + 1, q + 1)
            grid = self.model.grid_shape
            L = np.zeros((d_out, d_in) + grid, dtype=np.complex128)
            for c1, c2, c_out, sign in _basis.wedge_table(n, 1, 1, p, q):
                L[c_out, c2] += sign * self.omega.coeffs[c1]
            self._lmat_cache[key] = L
        return self._lmat_cache[key]

    # -- misc ----------------------------------------------------------------

    def averaged(self) -> "Metric":
        """Constant-coefficient metric with the grid-averaged matrix."""
        if self._averaged is None:
            grid_axes = tuple(range(len(self.model.grid_shape)))
            Hbar = self.H
            if grid_axes:
                Hbar = np.mean(self.H, axis=grid_axes)
            coeffs = np.zeros(
                (_basis.degree_dims(self.n, 1, 1),) + self.model.grid_shape,
                dtype=np.complex128,
            )
            idx = _basis.channel_index(self.n, 1, 1)
            for j in range(1, self.n + 1):
                for k in range(1, self.n + 1):
                    coeffs[idx[((j,), (k,))]] = 1j * Hbar[j - 1, k - 1]
            self._averaged = Metric(Form(self.model, 1, 1, coeffs))
        return self._averaged

    def volume_form(self) -> Form:
        n = self.n
        sigma = (-1) ** ((n * (n - 1)) // 2)
        coeffs = np.zeros((1,) + self.model.grid_shape, dtype=np.complex128)
        coeffs[0] = (1j ** n) * sigma * self.detH
        return Form(self.model, n, n, coeffs)

    def describe(self):
        return {
            "backend": self.model.kind,
            "volume": self.volume,
            "min_eigenvalue": self.min_eigenvalue,
        }


def _matrix_of_11(a: Form):
    """Coefficient matrix M with a = i * sum M_{jk} phi^j ^ phibar^k."""
    n = a.model.n
    if (a.p, a.q) != (1, 1):
        raise BidegreeError("expected a (1,1)-form")
    idx = _basis.channel_index(n, 1, 1)
    grid = a.model.grid_shape
    M = np.empty(grid + (n, n), dtype=np.complex128)
    for j in range(1, n + 1):
        for k in range(1, n + 1):
            M[..., j - 1, k - 1] = a.coeffs[idx[((j,), (k,))]] / 1j
    return M


def metric_from_form(omega: Form, pos_tol: float = 1e-9) -> Metric:
    return Metric(omega, pos_tol=pos_tol)


# ---------------------------------------------------------------------------
# inner products


def pointwise_inner(metric: Metric, a: Form, b: Form):
    if a.model is not metric.model or b.model is not metric.model:
        raise ValueError("forms live on a different model than the metric")
    if (a.p, a.q) != (b.p, b.q):
        raise BidegreeError("pointwise inner product needs equal bidegrees")
    P = metric.pairing(a.p, a.q)
    return np.einsum("u...,uw...,w...->...", a.coeffs, P, np.conj(b.coeffs))


def inner(metric: Metric, a: Form, b: Form) -> complex:
    """L2 inner product <<a, b>> with the metric volume form."""
    return complex(metric.model.mean(pointwise_inner(metric, a, b)
                                     * metric.density))


def norm(metric: Metric, a: Form) -> float:
    val = inner(metric, a, a).real
    return math.sqrt(max(val, 0.0))


# ---------------------------------------------------------------------------
# star, adjoints, Laplacians


def star(metric: Metric, a: Form) -> Form:
    S = metric.star_matrix(a.p, a.q)
    n = metric.n
    out = np.einsum("wu...,u...->w...", S, a.coeffs)
    return Form(metric.model, n - a.q, n - a.p, out)


def adjoint_diff(metric: Metric, part: str, a: Form) -> Form:
    """Adjoint of del (part='del') or dbar (part='dbar')."""
    if part == "del":
        return -1.0 * star(metric, differential("dbar", star(metric, a)))
    if part == "dbar":
        return -1.0 * star(metric, differential("del", star(metric, a)))
    raise ValueError(f"unknown part {part!r}")


def laplacian(metric: Metric, kind: str, a: Form) -> Form:
    """Apply one of the four Laplacians."""
    d, dbar = (lambda f: differential("del", f)), (lambda f: differential("dbar", f))
    ds = lambda f: adjoint_diff(metric, "del", f)
    dbs = lambda f: adjoint_diff(metric, "dbar", f)
    if kind == "del":
        return d(ds(a)) + ds(d(a))
    if kind == "dbar":
        return dbar(dbs(a)) + dbs(dbar(a))
    if kind == "bc":
        return (
            ds(d(a))
            + dbs(dbar(a))
            + dbs(ds(d(dbar(a))))
            + d(dbar(dbs(ds(a))))
            + dbs(d(ds(dbar(a))))
            + ds(dbar(dbs(d(a))))
        )
    if kind == "tilde":
        proj = lambda f: harmonic_project(metric, "dbar", f)
        return (
            d(proj(ds(a)))
            + ds(proj(d(a)))
            + dbar(dbs(a))
            + dbs(dbar(a))
        )
    raise ValueError(f"unknown Laplacian kind {kind!r}")


# ---------------------------------------------------------------------------
# finite-backend eigendecompositions


def _operator_matrix(metric: Metric, kind: str, p, q):
    """Dense matrix of the Laplacian on the finite invariant complex."""
    model = metric.model
    d = _basis.degree_dims(metric.n, p, q)
    A = np.zeros((d, d), dtype=np.complex128)
    for j in range(d):
        e = np.zeros((d,), dtype=np.complex128)
        e[j] = 1.0
        A[:, j] = laplacian(metric, kind, Form(model, p, q, e)).coeffs
    return A


def _lie_eig(metric: Metric, kind: str, p, q):
    key = (kind, p, q)
    if key not in metric._eig_cache:
        d = _basis.degree_dims(metric.n, p, q)
        if d == 0:
            metric._eig_cache[key] = (np.zeros((0, 0)), np.zeros(0),
                                      np.zeros((0, 0)))
            return metric._eig_cache[key]
        A = _operator_matrix(metric, kind, p, q)
        L = metric.gram_cholesky(p, q)
        LH = L.conj().T
        # operator in metric-orthonormal coordinates y = L^H x
        Aon = LH @ A @ np.linalg.inv(LH)
        Aon = 0.5 * (Aon + Aon.conj().T)
        lam, U = np.linalg.eigh(Aon)
        metric._eig_cache[key] = (LH, lam, U)
    return metric._eig_cache[key]


# ---------------------------------------------------------------------------
# harmonic bases


def _mgs(metric: Metric, forms, drop_tol=1e-8):
    """Modified Gram-Schmidt in the metric L2 inner product."""
    out = []
    for f in forms:
        for g in out:
            f = f - inner(metric, f, g) * g
        nf = norm(metric, f)
        if nf > drop_tol:
            out.append((1.0 / nf) * f)
    return out


def _symbol_pinv(metric: Metric, kind: str, p, q):
    """Per-frequency pseudoinverse of the constant-coefficient symbol.

    The symbol is sampled numerically: the operator at the grid-averaged
    metric is applied to forms whose channel field is a delta at the grid
    origin, whose FFT reads off one symbol column at every frequency
    simultaneously.
    """
    key = (kind, p, q)
    if key not in metric._symbol_cache:
        model = metric.model
        flat = metric.averaged()
        d = _basis.degree_dims(metric.n, p, q)
        grid = model.grid_shape
        axes = tuple(1 + a for a in model.active)
        M = np.empty(grid + (d, d), dtype=np.complex128)
        for j in range(d):
            x = np.zeros((d,) + grid, dtype=np.complex128)
            x[(j,) + (0,) * len(grid)] = 1.0
            y = laplacian(flat, kind, Form(model, p, q, x)).coeffs
            M[..., :, j] = np.moveaxis(np.fft.fftn(y, axes=axes), 0, -1)
        # pseudo-invert with a cutoff relative to the largest singular value
        # over the whole frequency range: per-frequency cutoffs would happily
        # invert the floating-point dust sitting at exactly-singular symbols
        U, s, Vh = np.linalg.svd(M)
        opnorm = float(s.max()) if s.size else 0.0
        cut = _SYMBOL_RCOND * max(opnorm, 1e-300)
        sinv = np.where(s > cut, 1.0 / np.where(s > cut, s, 1.0), 0.0)
        pinv = np.swapaxes(Vh, -1, -2).conj() @ (
            sinv[..., :, None] * np.swapaxes(U, -1, -2).conj()
        )
        metric._symbol_cache[key] = (pinv, opnorm, axes)
    return metric._symbol_cache[key]


def _symbol_apply(metric: Metric, kind: str, b: Form) -> Form:
    pinv, _, axes = _symbol_pinv(metric, kind, b.p, b.q)
    spec = np.fft.fftn(b.coeffs, axes=axes)
    z = pinv @ np.moveaxis(spec, 0, -1)[..., None]
    out = np.fft.ifftn(np.moveaxis(z[..., 0], -1, 0), axes=axes)
    return Form(b.model, b.p, b.q, out)


def _lie_opnorm(metric: Metric, kind: str, p, q) -> float:
    """Largest-eigenvalue estimate by plain power iteration."""
    d = _basis.degree_dims(metric.n, p, q)
    rng = np.random.default_rng(7)
    v = Form(metric.model, p, q,
             rng.standard_normal(d) + 1j * rng.standard_normal(d))
    nv = norm(metric, v)
    if nv == 0:
        return 0.0
    v = (1.0 / nv) * v
    lam = 0.0
    for _ in range(60):
        w = laplacian(metric, kind, v)
        lam = norm(metric, w)
        if lam < 1e-300:
            return 0.0
        v = (1.0 / lam) * w
    return lam


def _deflated_kernel(metric: Metric, kind: str, p, q, precond, scale,
                     max_sweeps=400):
    """Kernel basis by preconditioned Richardson deflation.

    Starts from the constant channel basis, repeatedly removes the
    preconditioned image, re-orthonormalizes, and finishes with a
    Rayleigh-Ritz rotation that separates genuine kernel directions from
    slow modes.
    """
    model = metric.model
    d = _basis.degree_dims(metric.n, p, q)
    if d == 0:
        return ()
    if scale <= 0:
        # zero operator: the whole space is harmonic
        basis = [Form(model, p, q, _unit_channel(d, j, model.grid_shape))
                 for j in range(d)]
        return tuple(_mgs(metric, basis))
    V = [Form(model, p, q, _unit_channel(d, j, model.grid_shape))
         for j in range(d)]
    V = _mgs(metric, V)
    res = np.inf
    for _ in range(max_sweeps):
        V = [v - precond(laplacian(metric, kind, v)) for v in V]
        V = _mgs(metric, V)
        if not V:
            return ()
        res = max(norm(metric, laplacian(metric, kind, v)) for v in V) / scale
        if res < 1e-12:
            break
    # Rayleigh-Ritz cleanup
    m = len(V)
    R = np.empty((m, m), dtype=np.complex128)
    images = [laplacian(metric, kind, v) for v in V]
    for i in range(m):
        for j in range(m):
            R[i, j] = inner(metric, images[j], V[i])
    lam, U = np.linalg.eigh(0.5 * (R + R.conj().T))
    kept = []
    for i in range(m):
        if lam[i] < 1e-8 * scale:
            w = zero_form(model, p, q)
            for j in range(m):
                w = w + U[j, i] * V[j]
            kept.append(w)
    kept = _mgs(metric, kept)
    for w in kept:
        r = norm(metric, laplacian(metric, kind, w)) / scale
        if r > _KERNEL_RESIDUAL:
            raise SolveDiverged(
                f"harmonic basis for {kind} on ({p},{q}) stalled at relative "
                f"residual {r:.2e}"
            )
    return tuple(kept)


def _unit_channel(d, j, grid):
    x = np.zeros((d,) + grid, dtype=np.complex128)
    x[j] = 1.0
    return x


def harmonic_basis(metric: Metric, kind: str, p, q):
    """Metric-orthonormal basis of ker(Laplacian) in bidegree (p,q)."""
    key = (kind, p, q)
    if key not in metric._kernel_cache:
        if metric.model.kind == "lie":
            LH, lam, U = _lie_eig(metric, kind, p, q)
            d = lam.shape[0]
            if d == 0:
                metric._kernel_cache[key] = ()
            else:
                lmax = float(lam[-1]) if lam.size else 0.0
                cut = _EIG_CUTOFF * max(lmax, 1e-300)
                cols = U[:, lam < cut]
                X = np.linalg.solve(LH, cols)
                metric._kernel_cache[key] = tuple(
                    Form(metric.model, p, q, X[:, i])
                    for i in range(X.shape[1])
                )
        else:
            _, opnorm, _ = _symbol_pinv(metric, kind, p, q)
            precond = lambda f: _symbol_apply(metric, kind, f)
            metric._kernel_cache[key] = _deflated_kernel(
                metric, kind, p, q, precond, opnorm
            )
    return metric._kernel_cache[key]


def harmonic_project(metric: Metric, kind: str, a: Form) -> Form:
    out = zero_form(metric.model, a.p, a.q)
    for v in harmonic_basis(metric, kind, a.p, a.q):
        out = out + inner(metric, a, v) * v
    return out


# ---------------------------------------------------------------------------
# Green operators


def _pcg(metric, kind, b, precond, kernel, rtol, cap):
    def proj(f):
        for v in kernel:
            f = f - inner(metric, f, v) * v
        return f

    nb_full = norm(metric, b)
    bp = proj(b)
    nb = norm(metric, bp)
    discarded = 0.0
    if nb_full > 0:
        discarded = math.sqrt(max(nb_full ** 2 - nb ** 2, 0.0)) / nb_full
    if nb <= 1e-13 * max(nb_full, 1.0):
        # nothing left of the right-hand side after removing harmonic mass
        info = GreenInfo("pcg", 0, nb, 0.0, discarded)
        return zero_form(metric.model, b.p, b.q), info

    x = zero_form(metric.model, b.p, b.q)
    r = bp
    z = proj(precond(r))
    pdir = z
    rz = inner(metric, r, z).real
    history = []
    for it in range(cap):
        res = norm(metric, r)
        history.append(res)
        if res <= rtol * nb:
            info = GreenInfo("pcg", it, res, res / nb, discarded,
                             tuple(history))
            return proj(x), info
        Ap = proj(laplacian(metric, kind, pdir))
        pAp = inner(metric, Ap, pdir).real
        if pAp <= 0.0:
            raise SolveDiverged(
                f"indefinite curvature in cg ({pAp:.2e})", history
            )
        alpha = rz / pAp
        x = x + alpha * pdir
        r = r - alpha * Ap
        z = proj(precond(r))
        rz_new = inner(metric, r, z).real
        beta = rz_new / rz
        rz = rz_new
        pdir = z + beta * pdir
    raise SolveDiverged(
        f"cg hit the iteration cap {cap} at relative residual "
        f"{history[-1] / nb:.2e}", history
    )


def green_solve(metric: Metric, kind: str, b: Form, *, tol: float = None,
                max_iter: int = None, method: str = None,
                with_info: bool = False):
    """Solve Laplacian x = (b minus its harmonic part), x orthogonal to ker.

    The right-hand side is projected onto the operator's range first; the
    discarded harmonic mass is reported in the info record.
    """
    model = metric.model
    if method is None:
        method = "direct" if model.kind == "lie" else "cg"

    if method == "direct":
        if model.kind != "lie":
            raise ValueError("direct solves need the finite backend")
        LH, lam, U = _lie_eig(metric, kind, b.p, b.q)
        if lam.size == 0:
            info = GreenInfo("direct", 0, 0.0, 0.0, 0.0)
            out = zero_form(model, b.p, b.q)
            return (out, info) if with_info else out
        y = U.conj().T @ (LH @ b.coeffs)
        lmax = float(lam[-1]) if lam.size else 0.0
        cut = _EIG_CUTOFF * max(lmax, 1e-300)
        invlam = np.where(lam > cut, 1.0 / np.where(lam > cut, lam, 1.0), 0.0)
        nfull = float(np.linalg.norm(y))
        nkept = float(np.linalg.norm(y[lam > cut]))
        discarded = 0.0
        if nfull > 0:
            discarded = math.sqrt(max(nfull ** 2 - nkept ** 2, 0.0)) / nfull
        x = np.linalg.solve(LH, U @ (invlam * y))
        out = Form(model, b.p, b.q, x)
        info = GreenInfo("direct", 0, 0.0, 0.0, discarded)
        return (out, info) if with_info else out

    if method != "cg":
        raise ValueError(f"unknown solve method {method!r}")

    rtol = _CG_TOL if tol is None else tol
    if model.kind == "torus":
        _, opnorm, _ = _symbol_pinv(metric, kind, b.p, b.q)
        precond = lambda f: _symbol_apply(metric, kind, f)
        kernel = harmonic_basis(metric, kind, b.p, b.q)
        active = 1
        for a in model.active:
            active *= model.resolutions[a]
        cap = max_iter or max(50, int(10 * math.sqrt(active)))
    else:
        opnorm = _lie_opnorm(metric, kind, b.p, b.q)
        tau = 1.0 / opnorm if opnorm > 0 else 1.0
        precond = lambda f: tau * f
        key = ("cg-kernel", kind, b.p, b.q)
        if key not in metric._kernel_cache:
            metric._kernel_cache[key] = _deflated_kernel(
                metric, kind, b.p, b.q, precond, opnorm, max_sweeps=3000
            )
        kernel = metric._kernel_cache[key]
        cap = max_iter or 600
    out, info = _pcg(metric, kind, b, precond, kernel, rtol, cap)
    return (out, info) if with_info else out


# ---------------------------------------------------------------------------
# three-space decompositions


def decompose_3space(metric: Metric, flavor: str, a: Form):
    """Orthogonal splitting (harmonic, middle, co-part) of a bidegree slice.

    flavor 'bc':    harmonic + image of deldbar + (image of del* + dbar*)
    flavor 'tilde': harmonic + (image of dbar + del(ker dbar))
                    + (image of del*-after-projection + dbar*)
    """
    if flavor not in ("bc", "tilde"):
        raise ValueError(f"unknown decomposition flavor {flavor!r}")
    kind = flavor
    h = harmonic_project(metric, kind, a)
    g = green_solve(metric, kind, a)
    d = lambda f: differential("del", f)
    dbar = lambda f: differential("dbar", f)
    ds = lambda f: adjoint_diff(metric, "del", f)
    dbs = lambda f: adjoint_diff(metric, "dbar", f)
    if flavor == "bc":
        mid = d(dbar(dbs(ds(g))))
    else:
        pr = lambda f: harmonic_project(metric, "dbar", f)
        mid = d(pr(ds(g))) + dbar(dbs(g))
    co = a - h - mid
    return h, mid, co


# ---------------------------------------------------------------------------
# Lefschetz contraction and primitive parts


def contract(metric: Metric, a: Form) -> Form:
    """Pointwise adjoint of omega ^ (.) : the Lefschetz contraction."""
    p, q = a.p - 1, a.q - 1
    model = metric.model
    d_lo = _basis.degree_dims(metric.n, p, q)
    if d_lo == 0:
        return zero_form(model, p, q)
    G_hi = metric.gram(a.p, a.q)
    Lm = metric.wedge_omega_matrix(p, q)
    t = np.einsum("uv...,v...->u...", G_hi, a.coeffs)
    s = np.einsum("uw...,u...->w...", np.conj(Lm), t)
    Ginv = metric._gram_inverse(p, q)
    x = np.einsum("uv...,v...->u...", Ginv, s)
    return Form(model, p, q, x)


def contract_trace(metric: Metric, gamma: Form):
    """The contraction of a (1,1)-form against the metric: tr(H^{-1} G)."""
    G = _matrix_of_11(gamma)
    return np.einsum("...jk,...kj->...", metric.Hinv, G)


def primitive_part(metric: Metric, a: Form) -> Form:
    """Orthogonal projection onto primitive forms (degree <= n)."""
    n = metric.n
    k = a.p + a.q
    if k > n:
        raise ValueError("primitive projection implemented for degree <= n")
    if k <= 1:
        return a
    lam1 = contract(metric, a)
    if k == 2:
        from .forms import wedge
        return a - (1.0 / n) * wedge(metric.omega, lam1)
    if k == 3:
        from .forms import wedge
        return a - (1.0 / (n - 1)) * wedge(metric.omega, lam1)
    raise ValueError("unexpected degree")


def primitive_star_reference(metric: Metric, v: Form) -> Form:
    """Closed-form star of a primitive form; test oracle for star()."""
    from .forms import wedge
    n = metric.n
    k = v.p + v.q
    sign = (-1) ** ((k * (k + 1)) // 2)
    phase = 1j ** (v.p - v.q)
    out = v
    for _ in range(n - k):
        out = wedge(metric.omega, out)
    return (sign * phase / math.factorial(n - k)) * out
