"""Secret key fractions and rates.

Three estimators share a :class:`~rfiqkd.estimators.CorrelatorSet` or a
:class:`~rfiqkd.linksim.CountMatrix`:

* ``device-model``: worst-case usable entropy over a 34-parameter model of
  the source, detectors and channel that is consistent with 21 observed
  statistics, minus the (finite-size widened) key-basis error entropy;
* ``closed-form``: the asymptotic reference-frame-independent bound;
* ``bb84``: the two-basis BB84 figure using only Z and X, with fixed labels.

Channel family
--------------
The two-qubit state is ``lambda1 |Phi+><Phi+| + lambda2 |Phi-><Phi-| +
(1 - lambda1 - lambda2) I/4``.  Its correlation matrix is
``diag(t, t, tz)`` with ``t = lambda1 - lambda2`` and ``tz = lambda1 +
lambda2``, and the phase-error rate is ``(1 - t) / 2``, so the usable entropy
``1 - h((1 - t)/2)`` depends on ``t`` only.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize

from .estimators import CorrelatorSet, correlators, marginals
from .linksim import CountMatrix, multiphoton_fraction
from .polarization import binary_entropy

N_PARAMS = 34
N_CONSTRAINTS = 21
DEFAULT_SIGMA = 5.0
FEASIBILITY_TOL = 1e-6
# minimum interval half-width, keeps exact (noiseless) constraints solvable
INTERVAL_FLOOR = 1e-9

_PREP_ANG = slice(0, 8)
_DET_ANG = slice(8, 20)
_PREP_EFF = slice(20, 26)
_DET_EFF = slice(26, 32)
_L1, _L2 = 32, 33

_HALF_PI = np.pi / 2
# (polar, azimuth) of X+, X-, Y+, Y-
_CANON_XY = np.array([[_HALF_PI, 0.0], [_HALF_PI, np.pi], [_HALF_PI, _HALF_PI], [_HALF_PI, -_HALF_PI]])
_CANON_Z = np.array([[0.0, 0.0], [np.pi, 0.0]])


class InfeasibleModelError(RuntimeError):
    """No device model reproduces the observations within their intervals."""

    def __init__(self, message, max_violation=float("nan")):
        super().__init__(message)
        self.max_violation = max_violation


def usable_entropy(lambda1, lambda2):
    """``1 - h(lambda2 + (1 - lambda1 - lambda2)/2)`` on the unit simplex."""
    l1 = np.asarray(lambda1, dtype=float)
    l2 = np.asarray(lambda2, dtype=float)
    tol = 1e-12
    if np.any(l1 < -tol) or np.any(l2 < -tol) or np.any(l1 + l2 > 1 + tol):
        raise ValueError("(lambda1, lambda2) must satisfy l1, l2 >= 0 and l1 + l2 <= 1")
    phase = np.clip(l2 + (1.0 - l1 - l2) / 2.0, 0.0, 1.0)
    return 1.0 - binary_entropy(phase)


def _unit(angles):
    """(polar, azimuth) pairs -> unit vectors, batched over leading axes."""
    th, ph = angles[..., 0], angles[..., 1]
    st = np.sin(th)
    return np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], axis=-1)


@dataclass
class DeviceModel:
    """Source and detector directions, efficiencies and channel weights.

    ``prep_angles`` holds (polar, azimuth) in radians for X+, X-, Y+, Y-; the
    Z preparations are pinned to +-s3.  ``det_angles`` covers all six
    detectors.  Efficiencies are a gauge-free set of positive weights.
    """

    prep_angles: np.ndarray
    det_angles: np.ndarray
    prep_eff: np.ndarray
    det_eff: np.ndarray
    lambda1: float
    lambda2: float

    @classmethod
    def ideal(cls, lambda1=1.0, lambda2=0.0) -> "DeviceModel":
        return cls(_CANON_XY.copy(), np.vstack([_CANON_XY, _CANON_Z]), np.ones(6), np.ones(6), lambda1, lambda2)

    @classmethod
    def from_vector(cls, x) -> "DeviceModel":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got shape {x.shape}")
        return cls(
            x[_PREP_ANG].reshape(4, 2),
            x[_DET_ANG].reshape(6, 2),
            x[_PREP_EFF].copy(),
            x[_DET_EFF].copy(),
            float(x[_L1]),
            float(x[_L2]),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                np.ravel(self.prep_angles),
                np.ravel(self.det_angles),
                self.prep_eff,
                self.det_eff,
                [self.lambda1, self.lambda2],
            ]
        ).astype(float)

    @property
    def prep_vectors(self) -> np.ndarray:
        return np.vstack([_unit(np.asarray(self.prep_angles)), [[0, 0, 1.0], [0, 0, -1.0]]])

    @property
    def det_vectors(self) -> np.ndarray:
        return _unit(np.asarray(self.det_angles))

    @property
    def usable_entropy(self) -> float:
        # via t directly: solutions may sit on the simplex edge within tolerance
        t = np.clip(self.lambda1 - self.lambda2, -1.0, 1.0)
        return float(1.0 - binary_entropy((1.0 - t) / 2.0))


def _q_batch(x: np.ndarray) -> np.ndarray:
    """Normalized joint click distribution (..., 6, 6) for parameter vectors (..., 34)."""
    x = np.asarray(x, dtype=float)
    lead = x.shape[:-1]
    prep_xy = _unit(x[..., _PREP_ANG].reshape(*lead, 4, 2))
    z = np.broadcast_to(np.array([[0, 0, 1.0], [0, 0, -1.0]]), (*lead, 2, 3))
    a = np.concatenate([prep_xy, z], axis=-2)
    b = _unit(x[..., _DET_ANG].reshape(*lead, 6, 2))
    l1, l2 = x[..., _L1], x[..., _L2]
    t = l1 - l2
    tz = l1 + l2
    scale = np.stack([t, t, tz], axis=-1)[..., None, :]
    corr = np.einsum("...id,...jd->...ij", a * scale, b)
    pe = np.abs(x[..., _PREP_EFF])
    de = np.abs(x[..., _DET_EFF])
    q = pe[..., :, None] * de[..., None, :] * 0.5 * (1.0 + corr)
    return q / q.sum(axis=(-2, -1), keepdims=True)


def model_probabilities(dm: DeviceModel) -> np.ndarray:
    """Predicted probability of each (prepared state, detector) click, summing to 1."""
    return _q_batch(dm.to_vector())


def constraint_functions(q) -> np.ndarray:
    """The 21 statistics: 9 correlators (row-major XX..ZZ), 6 prep and 6 detector marginals.

    Works on observed counts or model probabilities alike (batched over leading axes).
    """
    q = np.asarray(q, dtype=float)
    lead = q.shape[:-2]
    blocks = q.reshape(*lead, 3, 2, 3, 2)
    pp = blocks[..., :, 0, :, 0]
    mm = blocks[..., :, 1, :, 1]
    pm = blocks[..., :, 0, :, 1]
    mp = blocks[..., :, 1, :, 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (pp + mm - pm - mp) / (pp + mm + pm + mp)
    total = q.sum(axis=(-2, -1))[..., None]
    p = q.sum(axis=-1) / total
    d = q.sum(axis=-2) / total
    return np.concatenate([c.reshape(*lead, 9), p, d], axis=-1)


CONSTRAINT_NAMES = tuple(
    [f"C_{a}{b}" for a in "XYZ" for b in "XYZ"]
    + [f"P_{s}" for s in ("X+", "X-", "Y+", "Y-", "Z+", "Z-")]
    + [f"D_{s}" for s in ("X+", "X-", "Y+", "Y-", "Z+", "Z-")]
)


@dataclass(frozen=True)
class ConstraintSet:
    """Observed statistics, their standard deviations and the confidence multiplier."""

    values: np.ndarray
    deltas: np.ndarray
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if np.shape(self.values) != (N_CONSTRAINTS,) or np.shape(self.deltas) != (N_CONSTRAINTS,):
            raise ValueError(f"need {N_CONSTRAINTS} values and deltas")
        if np.any(np.asarray(self.deltas) < 0):
            raise ValueError("deltas must be >= 0")

    @property
    def half_width(self) -> np.ndarray:
        return np.maximum(self.sigma * np.asarray(self.deltas), INTERVAL_FLOOR)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.values) - self.half_width

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.values) + self.half_width

    def with_sigma(self, sigma: float) -> "ConstraintSet":
        return ConstraintSet(self.values, self.deltas, sigma)

    @classmethod
    def from_counts(cls, m, sigma: float = DEFAULT_SIGMA) -> "ConstraintSet":
        c = correlators(m)
        mg = marginals(m)
        values = np.concatenate([c.values.ravel(), mg.prep, mg.det])
        deltas = np.concatenate([c.deltas.ravel(), mg.prep_delta, mg.det_delta])
        # a correlator with no counts constrains nothing
        undefined = ~np.isfinite(values)
        values[undefined] = 0.0
        deltas[undefined] = 1.0 / sigma
        return cls(values, deltas, sigma)


@dataclass
class MinimizationResult:
    s_min: float
    model: DeviceModel
    max_violation: float
    n_feasible: int
    n_starts: int

    @property
    def phase_error(self) -> float:
        return (1.0 - (self.model.lambda1 - self.model.lambda2)) / 2.0


class _Problem:
    """SLSQP plumbing with cached batched forward-difference Jacobians.

    Works on the sub-vector ``x[free]``; the remaining parameters stay at
    ``base``.
    """

    def __init__(self, cs: ConstraintSet, free=None, base=None):
        self.lo = cs.lower
        self.hi = cs.upper
        self.step = 1e-7
        self.free = np.arange(N_PARAMS) if free is None else np.asarray(free)
        self.base = np.zeros(N_PARAMS) if base is None else np.asarray(base, dtype=float).copy()
        self._lam = np.searchsorted(self.free, [_L1, _L2])
        self._x = None

    def full(self, z) -> np.ndarray:
        x = self.base.copy()
        x[self.free] = z
        return x

    def _eval(self, z):
        if self._x is not None and np.array_equal(z, self._x):
            return
        x = self.full(z)
        pts = np.vstack([x, x + self.step * np.eye(N_PARAMS)[self.free]])
        f = constraint_functions(_q_batch(pts))
        self._x = np.array(z, dtype=float)
        self._f = f[0]
        self._J = (f[1:] - f[0]).T / self.step

    def f(self, z):
        self._eval(z)
        return self._f

    def ineq(self, z):
        f = self.f(z)
        l1, l2 = np.asarray(z)[self._lam]
        return np.concatenate([f - self.lo, self.hi - f, [1.0 - l1 - l2]])

    def ineq_jac(self, z):
        self._eval(z)
        simplex = np.zeros((1, len(self.free)))
        simplex[0, self._lam] = -1.0
        return np.vstack([self._J, -self._J, simplex])

    def violation(self, z) -> float:
        g = self.ineq(z)
        return float(max(0.0, -g.min()))

    def objective(self, z):
        l1, l2 = np.asarray(z)[self._lam]
        return (l1 - l2) ** 2

    def objective_grad(self, z):
        l1, l2 = np.asarray(z)[self._lam]
        g = np.zeros(len(self.free))
        g[self._lam] = 2 * (l1 - l2), -2 * (l1 - l2)
        return g


def _bounds():
    lo = np.empty(N_PARAMS)
    hi = np.empty(N_PARAMS)
    lo[0:20:2], hi[0:20:2] = 0.0, np.pi
    lo[1:20:2], hi[1:20:2] = -2 * np.pi, 2 * np.pi
    lo[20:32], hi[20:32] = 0.05, 20.0
    lo[32:], hi[32:] = 0.0, 1.0
    return lo, hi


def initial_model(cs: ConstraintSet) -> DeviceModel:
    """Model that roughly reproduces the observations, used as the first start.

    X/Y detector directions are read off the observed 2x2 correlator block, so
    any relative rotation or reflection of the frames is absorbed; a key-basis
    deficit relative to the channel strength is absorbed by tilting the Z
    detectors.
    """
    c = np.asarray(cs.values[:9]).reshape(3, 3)
    blk = c[:2, :2]
    col_x = blk[:, 0]  # (C_XX, C_YX): response of the X detectors
    col_y = blk[:, 1]
    t = float(np.clip(np.sqrt(max(np.sum(blk**2) / 2.0, 1e-12)), 1e-3, 1.0))
    tz = float(np.clip(max(abs(c[2, 2]), t), t, 1.0))
    l1 = min((t + tz) / 2.0, 1.0)
    l2 = max(0.0, min((tz - t) / 2.0, 1.0 - l1))
    dm = DeviceModel.ideal(l1, l2)
    det = dm.det_angles.copy()
    for k, col in ((0, col_x), (2, col_y)):
        az = np.arctan2(col[1], col[0]) if np.linalg.norm(col) > 1e-9 else det[k, 1]
        det[k] = [_HALF_PI, az]
        det[k + 1] = [_HALF_PI, az + np.pi]
    tilt = float(np.arccos(np.clip(c[2, 2] / max(l1 + l2, 1e-9), -1.0, 1.0)))
    det[4] = [tilt, 0.0]
    det[5] = [np.pi - tilt, 0.0]
    dm.det_angles = det
    p = np.asarray(cs.values[9:15])
    d = np.asarray(cs.values[15:21])
    dm.prep_eff = np.clip(p / p.mean(), 0.05, 20.0)
    dm.det_eff = np.clip(d / d.mean(), 0.05, 20.0)
    return dm


def _feasibility(prob: _Problem, x0, lo, hi):
    def resid(x):
        g = prob.ineq(x)
        return np.minimum(g, 0.0)

    def jac(x):
        g = prob.ineq(x)
        return prob.ineq_jac(x) * (g < 0)[:, None]

    sol = least_squares(resid, np.clip(x0, lo, hi), jac=jac, bounds=(lo, hi), xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=500)
    return sol.x


def minimize_usable_entropy(
    cs: ConstraintSet,
    n_starts: int = 32,
    seed: int = 0,
    warm_starts=(),
    maxiter: int = 300,
    fixed_directions: bool = False,
) -> MinimizationResult:
    """Worst-case usable entropy over all device models consistent with ``cs``.

    Multi-start SLSQP: the first start is :func:`initial_model` pushed to
    feasibility, the rest are seeded random perturbations of it, plus any
    ``warm_starts`` (models or vectors).  Raises :class:`InfeasibleModelError`
    when no start reaches feasibility within ``FEASIBILITY_TOL``.

    With ``fixed_directions`` every preparation and detector direction is held
    at its ideal value and only efficiencies and channel weights vary.
    """
    x0 = initial_model(cs).to_vector()
    if fixed_directions:
        x0[:20] = DeviceModel.ideal().to_vector()[:20]
        free = np.arange(20, N_PARAMS)
    else:
        free = np.arange(N_PARAMS)
    prob = _Problem(cs, free, x0)
    lo, hi = (b[free] for b in _bounds())
    bounds = list(zip(lo, hi))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EC]))

    z0 = x0[free]
    z_feas = _feasibility(prob, z0, lo, hi)
    viol = prob.violation(z_feas)
    tries = 0
    while viol > FEASIBILITY_TOL and tries < 8:
        tries += 1
        trial = _perturb(x0, rng, scale=0.3)[free]
        cand = _feasibility(prob, trial, lo, hi)
        if prob.violation(cand) < viol:
            z_feas, viol = cand, prob.violation(cand)
    if viol > FEASIBILITY_TOL:
        raise InfeasibleModelError(f"no feasible device model (max violation {viol:.3g})", viol)

    starts = [z_feas]
    for w in warm_starts:
        starts.append((w.to_vector() if isinstance(w, DeviceModel) else np.asarray(w, dtype=float))[free])
    x_feas = prob.full(z_feas)
    while len(starts) < n_starts + len(warm_starts):
        starts.append(_perturb(x_feas, rng, scale=0.05 + 0.15 * rng.random())[free])

    best_z, best_val, n_ok = z_feas, prob.objective(z_feas), 1
    for z_start in starts:
        with warnings.catch_warnings():
            # SLSQP may step marginally outside bounds; the result is clipped below
            warnings.filterwarnings("ignore", message="Values in x were outside bounds")
            res = minimize(
                prob.objective,
                np.clip(z_start, lo, hi),
                jac=prob.objective_grad,
                method="SLSQP",
                bounds=bounds,
                constraints=[{"type": "ineq", "fun": prob.ineq, "jac": prob.ineq_jac}],
                options={"maxiter": maxiter, "ftol": 1e-12},
            )
        z = np.clip(res.x, lo, hi)
        if prob.violation(z) <= FEASIBILITY_TOL:
            n_ok += 1
            val = prob.objective(z)
            if val < best_val:
                best_z, best_val = z, val
    model = DeviceModel.from_vector(prob.full(best_z))
    return MinimizationResult(model.usable_entropy, model, prob.violation(best_z), n_ok, len(starts))


def _perturb(x, rng, scale):
    y = x.copy()
    y[:20] += rng.normal(0.0, scale, 20)
    y[20:32] *= np.exp(rng.normal(0.0, scale, 12))
    t = y[_L1] - y[_L2]
    tz = y[_L1] + y[_L2]
    t = np.clip(t - abs(rng.normal(0.0, scale)), 0.0, 1.0)
    tz = np.clip(tz + rng.normal(0.0, scale), t, 1.0)
    y[_L1], y[_L2] = (t + tz) / 2, (tz - t) / 2
    return y


def sigma_sweep(cs: ConstraintSet, sigmas, **kwargs) -> list[MinimizationResult]:
    """S_min over increasing ``sigmas``, each run warm-started from the previous argmin.

    Intervals are nested, so each previous optimum stays feasible and the
    sequence is non-increasing.
    """
    results = []
    warm = []
    for s in sorted(sigmas):
        res = minimize_usable_entropy(cs.with_sigma(s), warm_starts=warm, **kwargs)
        results.append(res)
        warm = [res.model]
    return results


def secret_key_fraction(s_min: float, c_zz: float, delta_c_zz: float, sigma: float = DEFAULT_SIGMA) -> float:
    """``S_min - h((1 - C_ZZ + sigma * dC_ZZ) / 2)``, clamped to [0, 1]."""
    e = np.clip((1.0 - c_zz + sigma * delta_c_zz) / 2.0, 0.0, 0.5)
    return float(np.clip(s_min - binary_entropy(e), 0.0, 1.0))


def _require(c: CorrelatorSet, pairs):
    for pair in pairs:
        if not c.n(*pair) > 0 or not np.isfinite(c.c(*pair)):
            raise ValueError(f"correlator C_{pair[0]}{pair[1]} undefined")


def rfi_closed_form_rate(c: CorrelatorSet) -> float:
    """Asymptotic reference-frame-independent key fraction.

    ``v`` is clamped to [0, 1]: observations outside the range of a physical
    channel (e.g. a key-basis-only detector defect) otherwise push it above 1.
    """
    _require(c, [("Z", "Z"), ("X", "X"), ("X", "Y"), ("Y", "X"), ("Y", "Y")])
    big_c = c.c("X", "X") ** 2 + c.c("X", "Y") ** 2 + c.c("Y", "X") ** 2 + c.c("Y", "Y") ** 2
    e = (1.0 - c.c("Z", "Z")) / 2.0
    root = np.sqrt(big_c / 2.0)
    u = 1.0 if 1.0 - e <= 0 else min(root / (1.0 - e), 1.0)
    if e <= 0:
        v = 0.0
    else:
        v = np.sqrt(max(big_c / 2.0 - (1.0 - e) ** 2 * u**2, 0.0)) / e
    v = min(v, 1.0)
    r = 1.0 - binary_entropy(e) - (1.0 - e) * binary_entropy((1 + u) / 2) - e * binary_entropy((1 + v) / 2)
    return float(np.clip(r, 0.0, 1.0))


def bb84_fraction(c: CorrelatorSet, sigma: float = 0.0) -> float:
    """Two-basis (Z key, X monitor) BB84 key fraction from the same counts.

    Assumes perfectly orthogonal, aligned bases: an X error rate above one
    half is not relabelled.  ``sigma > 0`` widens both error rates by
    ``sigma`` standard deviations.
    """
    _require(c, [("Z", "Z"), ("X", "X")])
    ez = (1.0 - c.c("Z", "Z") + sigma * c.delta("Z", "Z")) / 2.0
    ex = (1.0 - c.c("X", "X") + sigma * c.delta("X", "X")) / 2.0
    ez, ex = np.clip([ez, ex], 0.0, 0.5)
    return float(max(0.0, 1.0 - binary_entropy(ez) - binary_entropy(ex)))


def sifted_rate(m: CountMatrix) -> float:
    if m.duration <= 0:
        raise ValueError("duration must be > 0")
    return float(m.counts[4:6, 4:6].sum() / m.duration)


def secure_key_rate(r: float, m: CountMatrix, mu: float) -> float:
    """Secure bits per second after giving multi-photon events to the adversary."""
    if m.duration <= 0:
        raise ValueError("duration must be > 0")
    if not 0.0 <= r <= 1.0:
        raise ValueError("key fraction must lie in [0, 1]")
    return max(0.0, (r - multiphoton_fraction(mu)) * sifted_rate(m))


@dataclass
class KeyRateReport:
    method: str
    sigma: float
    s_min: float
    secret_key_fraction: float
    sifted_rate: float
    secure_rate: float
    multiphoton_penalty: float
    extra: dict = field(default_factory=dict)

    FIELDS = ("method", "sigma", "s_min", "secret_key_fraction", "sifted_rate", "secure_rate", "multiphoton_penalty")

    def row(self) -> list:
        return [getattr(self, k) for k in self.FIELDS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.FIELDS)
        w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in self.row()])
        return buf.getvalue()

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d


def key_rate_report(
    m: CountMatrix,
    mu: float,
    method: str = "device-model",
    sigma: float = DEFAULT_SIGMA,
    n_starts: int = 32,
    seed: int = 0,
) -> KeyRateReport:
    """Full key-rate accounting for one block with the chosen estimator."""
    c = correlators(m)
    extra = {}
    if method == "device-model":
        res = minimize_usable_entropy(ConstraintSet.from_counts(m, sigma), n_starts=n_starts, seed=seed)
        s_min = res.s_min
        r = secret_key_fraction(s_min, c.c("Z", "Z"), c.delta("Z", "Z"), sigma)
        extra["result"] = res
    elif method == "closed-form":
        r = rfi_closed_form_rate(c)
        s_min = float("nan")
    elif method == "bb84":
        r = bb84_fraction(c, sigma)
        s_min = float("nan")
    else:
        raise ValueError(f"unknown method {method!r}")
    return KeyRateReport(
        method,
        sigma,
        s_min,
        r,
        sifted_rate(m),
        secure_key_rate(r, m, mu),
        multiphoton_fraction(mu),
        extra,
    )
