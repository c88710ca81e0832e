"""Spectral backend: band-limited forms on the standard complex 3-torus.

Coordinates are x_1..x_{2n} on [0, 2pi)^{2n} with z_j = x_{2j-1} + i x_{2j},
so dz^j plays the role of the j-th coframe generator.  Coefficient fields are
sampled on a tensor grid whose resolution is 1 on masked-out coordinates;
derivatives are exact FFT collocation derivatives, and integration is the
grid mean (the fundamental domain carries unit mass).

Resolutions must be powers of two with at least 4 points per active
coordinate, and synthesized data must keep its frequencies strictly below a
quarter of the resolution so that the cubic expressions used downstream stay
below the Nyquist limit without dealiasing.
"""

from __future__ import annotations

import json

import numpy as np

from . import _basis
from .forms import Form, zero_form


class GridError(ValueError):
    """Invalid resolution / mask combination."""


class AliasingError(ValueError):
    """Requested frequency content exceeds the safe band limit."""


_COORD_NAMES = tuple(f"x{i}" for i in range(1, 13))


def _coord_id(c, n):
    if isinstance(c, str):
        c = c.strip().lower()
        if c in _COORD_NAMES[: 2 * n]:
            return _COORD_NAMES.index(c)
        raise GridError(f"unknown coordinate {c!r}")
    c = int(c)
    if not 0 <= c < 2 * n:
        raise GridError(f"coordinate index {c} out of range")
    return c


class TorusModel:
    """Flat complex n-torus sampled on a masked tensor grid."""

    kind = "torus"

    def __init__(self, n: int, resolutions):
        self.n = n
        self.resolutions = tuple(int(r) for r in resolutions)
        if len(self.resolutions) != 2 * n:
            raise GridError(f"need {2 * n} per-coordinate resolutions")
        for N in self.resolutions:
            if N == 1:
                continue
            if N < 4 or (N & (N - 1)) != 0:
                raise GridError(
                    f"active resolutions must be powers of two >= 4, got {N}"
                )
        self.grid_shape = self.resolutions
        self.active = tuple(i for i, N in enumerate(self.resolutions) if N > 1)
        # integer FFT frequencies per coordinate, broadcast-ready
        self._freqs = []
        for ax, N in enumerate(self.resolutions):
            k = np.fft.fftfreq(N, d=1.0 / N)
            shape = [1] * (2 * n)
            shape[ax] = N
            self._freqs.append(k.reshape(shape))

    # -- backend protocol ---------------------------------------------------

    @staticmethod
    def mean(field):
        return complex(np.mean(field))

    def describe(self):
        return {
            "backend": "torus",
            "dim": self.n,
            "resolutions": list(self.resolutions),
            "mask": [_COORD_NAMES[i] for i in self.active],
            "scope": "band-limited-grid",
        }

    def _axis_derivative(self, field, axis):
        if self.resolutions[axis] == 1:
            return np.zeros_like(field)
        spec = np.fft.fft(field, axis=1 + axis)
        spec *= 1j * self._freqs[axis]
        return np.fft.ifft(spec, axis=1 + axis)

    def _dz_derivative(self, field, j, conjugate):
        """d/dz_j (or d/dzbar_j) of every channel, j in 1..n."""
        dx = self._axis_derivative(field, 2 * (j - 1))
        dy = self._axis_derivative(field, 2 * (j - 1) + 1)
        return 0.5 * (dx + 1j * dy) if conjugate else 0.5 * (dx - 1j * dy)

    def apply_differential(self, part, p, q, coeffs):
        tgt = (p + 1, q) if part == "del" else (p, q + 1)
        out = np.zeros(
            (_basis.degree_dims(self.n, *tgt),) + self.grid_shape,
            dtype=np.complex128,
        )
        conj = part == "dbar"
        gen_bidegree = (0, 1) if conj else (1, 0)
        table = _basis.wedge_table(self.n, *gen_bidegree, p, q)
        if out.shape[0] == 0 or coeffs.shape[0] == 0:
            return out
        # channel c1 of the generator factor is dz^{c1+1} (or conjugate)
        derivs = [self._dz_derivative(coeffs, j, conj) for j in range(1, self.n + 1)]
        for c1, c2, c_out, sign in table:
            out[c_out] += sign * derivs[c1][c2]
        return out

    # -- grid helpers ---------------------------------------------------------

    def coordinate_grids(self):
        """Open (broadcastable) arrays of the 2n coordinates."""
        grids = []
        for ax, N in enumerate(self.resolutions):
            x = np.arange(N) * (2 * np.pi / N)
            shape = [1] * (2 * self.n)
            shape[ax] = N
            grids.append(x.reshape(shape))
        return grids

    def headroom(self, axis):
        """Largest safe synthesis frequency magnitude on an axis."""
        N = self.resolutions[axis]
        return 0 if N == 1 else N // 4 - 1


def make_torus_model(resolution, mask, n: int = 3) -> TorusModel:
    """Build a torus model from a scalar resolution and a coordinate mask."""
    if isinstance(resolution, int):
        ids = sorted(_coord_id(c, n) for c in mask)
        if len(set(ids)) != len(ids):
            raise GridError("duplicate coordinates in mask")
        res = [1] * (2 * n)
        for i in ids:
            res[i] = resolution
        return TorusModel(n, res)
    return TorusModel(n, resolution)


# ---------------------------------------------------------------------------
# band-limited synthesis


def synthesize_form(model: TorusModel, p, q, table, real: bool = False) -> Form:
    """Assemble a form from (channel, frequency, coefficient) rows.

    Each row is ((I, J) or channel position, 2n-tuple of integer frequencies,
    complex coefficient); the sampled field of the row is
    coeff * exp(i sum_m k_m x_m).  Frequencies on masked coordinates must be
    zero, and active frequencies must stay within the quarter-resolution
    headroom (AliasingError otherwise).  With real=True the Hermitian
    symmetrization (a + conj a)/2 is returned, which requires p == q.
    """
    from .forms import conjugate

    out = zero_form(model, p, q)
    idx = _basis.channel_index(model.n, p, q)
    grids = model.coordinate_grids()
    for channel, freqs, coeff in table:
        if not isinstance(channel, (int, np.integer)):
            I, J = channel
            channel = idx[(tuple(I), tuple(J))]
        freqs = tuple(int(k) for k in freqs)
        if len(freqs) != 2 * model.n:
            raise GridError(f"frequency tuple must have {2 * model.n} entries")
        for ax, k in enumerate(freqs):
            N = model.resolutions[ax]
            if N == 1:
                if k != 0:
                    raise AliasingError(
                        f"frequency {k} on masked coordinate {_COORD_NAMES[ax]}"
                    )
            elif abs(k) >= N // 4:
                raise AliasingError(
                    f"|k|={abs(k)} exceeds the headroom bound {N // 4 - 1} on "
                    f"{_COORD_NAMES[ax]} (resolution {N})"
                )
        wave = 1.0
        for ax, k in enumerate(freqs):
            if k:
                wave = wave * np.exp(1j * k * grids[ax])
        out.coeffs[channel] += coeff * np.broadcast_to(wave, model.grid_shape)
    if real:
        if p != q:
            raise ValueError("real synthesis requires p == q")
        out = 0.5 * (out + conjugate(out))
    return out


def refine(model: TorusModel, factor: int = 2) -> TorusModel:
    """Same torus with every active resolution multiplied by `factor`."""
    if factor < 1 or (factor & (factor - 1)) != 0:
        raise GridError("refinement factor must be a power of two")
    if factor == 1:
        return model
    res = tuple(N * factor if N > 1 else 1 for N in model.resolutions)
    return TorusModel(model.n, res)


def resample(form: Form, target: TorusModel) -> Form:
    """Spectral interpolation of a form onto a finer or coarser grid.

    Exact for data band-limited below the coarser Nyquist bound.
    """
    src = form.model
    if src.n != target.n or src.active != target.active:
        raise GridError("resampling requires the same coordinate mask")
    spec = np.fft.fftn(form.coeffs, axes=tuple(1 + a for a in src.active))
    spec_t = np.zeros(
        (form.coeffs.shape[0],) + target.grid_shape, dtype=np.complex128
    )
    # copy the spectral block both grids can represent; per axis the shared
    # frequencies are [0, m/2) and [-m/2, 0) with m = min(Ns, Nt)
    grids_src, grids_dst = [], []
    scale = 1.0
    for ax in range(2 * src.n):
        Ns, Nt = src.resolutions[ax], target.resolutions[ax]
        scale *= Nt / Ns
        m = min(Ns, Nt)
        if m == 1:
            grids_src.append(np.array([0]))
            grids_dst.append(np.array([0]))
            continue
        freqs = np.concatenate([np.arange(0, m // 2), np.arange(-(m // 2), 0)])
        grids_src.append(freqs % Ns)
        grids_dst.append(freqs % Nt)
    channels = np.arange(form.coeffs.shape[0])
    spec_t[np.ix_(channels, *grids_dst)] = spec[np.ix_(channels, *grids_src)]
    spec_t *= scale
    out = np.fft.ifftn(spec_t, axes=tuple(1 + a for a in target.active))
    return Form(target, form.p, form.q, out)


# ---------------------------------------------------------------------------
# standard fixtures


def flat_form(model: TorusModel) -> Form:
    from .forms import flat_metric_form

    return flat_metric_form(model)


def standard_potential(model: TorusModel, name: str, eps: float = 0.05) -> Form:
    """Named (1,0)-form potentials for the perturbed-torus fixtures.

    'two_coord':  eps * exp(i x1) dz^2                  (mask x1, x2)
    'three_coord': eps * exp(i x1) dz^2
                   + eps * exp(i (x3 + x5)) dz^3        (mask x1, x3, x5)

    The perturbed metric omega0 + del(conj u) + dbar(u) is positive for
    eps well below 1/2 and carries nonvanishing torsion.
    """
    if name == "two_coord":
        table = [(((2,), ()), (1, 0, 0, 0, 0, 0), eps)]
    elif name == "three_coord":
        table = [
            (((2,), ()), (1, 0, 0, 0, 0, 0), eps),
            (((3,), ()), (0, 0, 1, 0, 1, 0), eps),
        ]
    else:
        raise ValueError(f"unknown potential fixture {name!r}")
    return synthesize_form(model, 1, 0, table)


def standard_fixture(name: str, resolution: int = 16, eps: float = 0.05):
    """Return (model, u, omega0, omega) for a named perturbed-torus fixture."""
    from .forms import conjugate, differential, flat_metric_form

    mask = {"two_coord": ("x1", "x2"), "three_coord": ("x1", "x3", "x5")}[name]
    model = make_torus_model(resolution, mask)
    u = standard_potential(model, name, eps)
    omega0 = flat_metric_form(model)
    omega = omega0 + differential("del", conjugate(u)) + differential("dbar", u)
    return model, u, omega0, omega


# ---------------------------------------------------------------------------
# import / export


def save_form(form: Form, prefix: str):
    """Write <prefix>.json (header) and <prefix>.npy (channel payload)."""
    model = form.model
    header = {
        "schema": 1,
        "bidegree": [form.p, form.q],
        "channels": [
            {"I": list(I), "J": list(J)}
            for I, J in _basis.basis(model.n, form.p, form.q)
        ],
        "grid_shape": list(model.grid_shape),
        "dim": model.n,
        "dtype": "complex128",
    }
    with open(f"{prefix}.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
    np.save(f"{prefix}.npy", form.coeffs)


def load_form(model: TorusModel, prefix: str) -> Form:
    with open(f"{prefix}.json") as fh:
        header = json.load(fh)
    if tuple(header["grid_shape"]) != model.grid_shape:
        raise GridError("stored grid shape does not match the model")
    coeffs = np.load(f"{prefix}.npy")
    p, q = header["bidegree"]
    return Form(model, p, q, np.ascontiguousarray(coeffs, dtype=np.complex128))


# ---------------------------------------------------------------------------
# fixture description files


def parse_fixture_text(text: str):
    """Parse a fixture description into (model, {name: Form}).

    Grammar::

        resolution <N>
        mask x1 x2 ...
        form <name> <p> <q> [real]
        term <I|J> k1 k2 k3 k4 k5 k6 <re> <im>

    The channel label I|J lists holomorphic indices before the bar, e.g.
    ``12|3`` for phi^1^phi^2^phibar^3 and ``2|`` for phi^2.
    """
    resolution = None
    mask = None
    forms: dict = {}
    current = None
    rows: list = []
    pending: list = []

    def flush():
        nonlocal current, rows
        if current is not None:
            pending.append((current, list(rows)))
        current, rows = None, []

    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if toks[0] == "resolution":
            resolution = int(toks[1])
        elif toks[0] == "mask":
            mask = toks[1:]
        elif toks[0] == "form":
            flush()
            name, p, q = toks[1], int(toks[2]), int(toks[3])
            current = (name, p, q, "real" in toks[4:])
        elif toks[0] == "term":
            if current is None:
                raise GridError("term outside of a form block")
            label = toks[1]
            i_part, j_part = label.split("|")
            I = tuple(int(c) for c in i_part)
            J = tuple(int(c) for c in j_part)
            freqs = tuple(int(t) for t in toks[2:8])
            coeff = complex(float(toks[8]), float(toks[9]))
            rows.append(((I, J), freqs, coeff))
        else:
            raise GridError(f"unparseable fixture line {line!r}")
    flush()
    if resolution is None or mask is None:
        raise GridError("fixture needs resolution and mask lines")
    model = make_torus_model(resolution, mask)
    for (name, p, q, real), tab in pending:
        forms[name] = synthesize_form(model, p, q, tab, real=real)
    return model, forms
