"""Large-population limits of the stationary allele-frequency law.

Fixed-point solvers for the limit frequency vector under a scaled prior,
the reweighted-prior density of the critical regime, the two-locus
(``K = L = 2``) landscape analysis with multimodal mixture limits, and a
dispatcher that picks the right object for a given configuration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize
from scipy.special import betaln, gammaln, logsumexp, xlog1py, xlogy

from .errors import BracketError, ConvergenceError, InvalidArgument, NonUniqueMinimizer
from .genotype import AlleleSpace, SimplexPoint, as_alpha_per_locus, r_map

THETA_TOL = 1e-13
MAX_BISECT = 200
QUAD_RTOL = 1e-8
MIN_ESS = 1000
NEWTON_GRID = 21
NEWTON_MARGIN = 0.02
DEDUP_RADIUS = 1e-6


class FixedPoint(NamedTuple):
    q: SimplexPoint
    theta: float
    r: SimplexPoint | None = None


def _positive(alpha, name="alpha") -> np.ndarray:
    a = np.asarray(alpha, dtype=float).ravel()
    if a.size < 2 or not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise InvalidArgument(f"{name} must hold at least two finite positive entries")
    return a


def _bisect(f, lo, hi, increasing: bool) -> float:
    """Root of a monotone ``f`` on ``[lo, hi]``; runs to ``THETA_TOL`` or floating-point exhaustion."""
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        val = f(mid)
        if val == 0.0:
            return mid
        if (val > 0) == increasing:
            hi = mid
        else:
            lo = mid
        if hi - lo < THETA_TOL * 1e-3 * max(1.0, abs(mid)):
            break
    else:
        if hi - lo > THETA_TOL:
            raise ConvergenceError("bisection did not converge")
    return 0.5 * (lo + hi)


def solve_qstar_lambda0(alpha, w) -> FixedPoint:
    """Limit frequency vector when the prior scales like ``n * alpha``.

    Solves ``q(k) = alpha_k / ((1 + |alpha|) - w(k) / theta)`` with
    ``theta = <w, q>``.  The left side summed over ``k`` decreases in
    ``theta``, so the root on ``(max w / (1 + |alpha|), max w]`` is unique;
    Brent's method finds it.

    Returns
    -------
    FixedPoint
        ``(q, theta, r)`` with ``r = r_map(q, w)``.
    """
    a = _positive(alpha)
    w = _positive(w, "w")
    if w.shape != a.shape:
        raise InvalidArgument("alpha and w must have the same length")
    A = a.sum()
    wmax = w.max()
    gap = (1.0 + A) * ((wmax - w) / wmax)
    rho = w / wmax

    # parametrise by t = (1 + A) - wmax / theta in (0, A]; the denominators
    # c - w / theta = gap + rho * t then keep full relative precision even
    # when the weights are nearly equal and the root sits close to t = 0
    def excess(t):
        return np.sum(a / (gap + rho * t)) - 1.0

    if excess(A) > 1e-15:
        raise BracketError(f"no root: sum at theta=max w is {excess(A) + 1:.17g} > 1")
    if excess(A) >= -1e-15:
        t = A
    else:
        t = optimize.brentq(excess, A * 1e-300, A, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    theta = wmax / (1.0 + A - t)
    q = a / (gap + rho * t)
    _check_residual(q, theta, w)
    q = SimplexPoint(q)
    return FixedPoint(q, float(theta), r_map(q, w))


def solve_qstar_lambda_mid(alpha, phi) -> FixedPoint:
    """Limit frequency vector when the prior scales like ``n**(1-lam) * alpha``, ``0 < lam < 1``.

    Solves ``q(k) = alpha_k / (phi(k) + |alpha| - theta)`` with
    ``theta = <phi, q>``; the answer does not depend on ``lam``.
    """
    a = _positive(alpha)
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.shape != a.shape or not np.all(np.isfinite(phi)):
        raise InvalidArgument("phi must be finite and match alpha in length")
    A = a.sum()
    lo, hi = phi.min(), phi.min() + A

    def excess(theta):
        d = phi + A - theta
        if np.any(d <= 0):
            return np.inf
        return np.sum(a / d) - 1.0

    if excess(lo) > 1e-15:
        raise BracketError("no root: sum at theta=min phi already exceeds 1")
    theta = lo if excess(lo) >= -1e-15 else _bisect(excess, lo, hi, increasing=True)
    q = a / (phi + A - theta)
    _check_residual(q, theta, phi)
    return FixedPoint(SimplexPoint(q), float(theta), None)


def _check_residual(q, theta, table):
    s = q.sum()
    if abs(s - 1.0) > 1e-12 or abs(theta - q @ table) > 1e-12 * max(1.0, abs(theta)):
        raise ConvergenceError(f"fixed-point residual too large (sum={s!r}, theta={theta!r})")


def qstar_m(alpha, phi, m: float) -> tuple[SimplexPoint, SimplexPoint]:
    """Constant-mutation fixed point with ``alpha / m`` and weights ``exp(-phi / m)``.

    As ``m`` grows both ``q*_m`` and its r-image approach the fixed point of
    :func:`solve_qstar_lambda_mid`.
    """
    if not m >= 1:
        raise InvalidArgument("m must be >= 1")
    a = _positive(alpha)
    fp = solve_qstar_lambda0(a / m, np.exp(-np.asarray(phi, dtype=float) / m))
    return fp.q, fp.r


def objective_lambda0(q, alpha, w) -> float:
    """``ln <w, q> + sum_k alpha_k ln q(k)`` (maximised by the lam = 0 fixed point)."""
    q = np.asarray(q, dtype=float)
    return float(np.log(np.dot(w, q)) + np.dot(alpha, np.log(q)))


def objective_lambda_mid(q, alpha, phi) -> float:
    """``-<phi, q> + sum_k alpha_k ln q(k)`` (maximised by the 0 < lam < 1 fixed point)."""
    q = np.asarray(q, dtype=float)
    return float(-np.dot(phi, q) + np.dot(alpha, np.log(q)))


def lagrangian_gradient(q, alpha, table, regime: str) -> np.ndarray:
    """Analytic gradient of the regime objective projected on the simplex tangent space."""
    q = np.asarray(q, dtype=float)
    if regime == "lambda0":
        g = np.asarray(table) / np.dot(table, q) + np.asarray(alpha) / q
    elif regime == "lambda_mid":
        g = -np.asarray(table) + np.asarray(alpha) / q
    else:
        raise InvalidArgument(f"unknown regime {regime!r}")
    return g - g.mean()


# ---------------------------------------------------------------------------
# reweighted prior (critical scaling)


@dataclass(frozen=True)
class LimitDensity:
    """``exp(-<phi, q>) * prod_l Dir(alpha^l)(q^l) / Z`` on a product of simplices.

    For one locus with ``K = 2`` the normaliser is computed by adaptive
    quadrature; otherwise by importance sampling from the prior, with the
    effective sample size kept in ``ess``.
    """

    alpha: tuple
    phi: np.ndarray
    log_z: float
    mode: str
    ess: float | None = None
    samples: np.ndarray | None = field(default=None, repr=False)  # (S, L, K) when sampled
    weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def space(self) -> AlleleSpace:
        return AlleleSpace(len(self.alpha[0]), len(self.alpha))

    def _product(self, qs) -> np.ndarray:
        sp = self.space
        out = np.ones(qs.shape[:-2] + (sp.size,))
        for l in range(sp.L):
            out = out * qs[..., l, :][..., sp.genomes[:, l]]
        return out

    def log_pdf(self, q) -> np.ndarray:
        """Log density at ``q``; shape ``(..., L, K)`` or, for ``K = 2, L = 1``, the type-1 frequency."""
        q = np.asarray(q, dtype=float)
        if self.space.L == 1 and self.space.K == 2 and (q.ndim == 0 or q.shape[-1] != 2):
            q = np.stack([q, 1.0 - q], axis=-1)
        if self.space.L == 1:
            q = q[..., None, :]
        if q.ndim < 2 or q.shape[-2:] != (self.space.L, self.space.K):
            raise InvalidArgument(f"points must have trailing shape ({self.space.L}, {self.space.K})")
        val = -self._product(q) @ self.phi - self.log_z
        for l, a in enumerate(self.alpha):
            ql = q[..., l, :]
            val = val + np.sum((a - 1.0) * np.log(ql), axis=-1) + gammaln(a.sum()) - gammaln(a).sum()
        return val

    def __call__(self, q):
        return np.exp(self.log_pdf(q))

    def bin_masses(self, edges, allele: int = 0, locus: int = 0) -> np.ndarray:
        """Mass of each bin ``[edges[i], edges[i+1])`` for the frequency of one allele."""
        edges = np.asarray(edges, dtype=float)
        if edges[0] != 0.0 or edges[-1] != 1.0 or np.any(np.diff(edges) <= 0):
            raise InvalidArgument("edges must increase from 0 to 1")
        if self.mode == "quadrature":
            return self._bins_quad(edges, allele)
        x = self.samples[:, locus, allele]
        idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, edges.size - 2)
        return np.bincount(idx, weights=self.weights, minlength=edges.size - 1)

    def _bins_quad(self, edges, allele):
        a1, a2 = self.alpha[0]
        f1, f2 = self.phi
        if allele == 1:
            a1, a2, f1, f2 = a2, a1, f2, f1
        # x is the frequency of ``allele``; smooth part carries everything except the endpoint powers
        c = -betaln(a1, a2) - self.log_z

        def smooth(x, pa, pb):
            return np.exp(c - f1 * x - f2 * (1 - x) + xlogy(pa, x) + xlog1py(pb, -x))

        out = np.empty(edges.size - 1)
        for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
            if lo == 0.0 and hi == 1.0:
                v, _ = integrate.quad(smooth, 0, 1, args=(0.0, 0.0), weight="alg",
                                      wvar=(a1 - 1, a2 - 1), epsabs=0, epsrel=1e-11, limit=200)
            elif lo == 0.0:
                v, _ = integrate.quad(smooth, 0, hi, args=(0.0, a2 - 1), weight="alg",
                                      wvar=(a1 - 1, 0.0), epsabs=0, epsrel=1e-11, limit=200)
            elif hi == 1.0:
                v, _ = integrate.quad(smooth, lo, 1, args=(a1 - 1, 0.0), weight="alg",
                                      wvar=(0.0, a2 - 1), epsabs=0, epsrel=1e-11, limit=200)
            else:
                v, _ = integrate.quad(smooth, lo, hi, args=(a1 - 1, a2 - 1),
                                      epsabs=0, epsrel=1e-11, limit=200)
            out[i] = v
        return out

    def mean(self, allele: int = 0, locus: int = 0) -> float:
        if self.mode == "quadrature":
            a1, a2 = self.alpha[0]
            f1, f2 = self.phi
            c = -betaln(a1, a2) - self.log_z - f2
            v, _ = integrate.quad(lambda x: np.exp(c - (f1 - f2) * x), 0, 1, weight="alg",
                                  wvar=(a1, a2 - 1), epsabs=0, epsrel=1e-11)
            return v if allele == 0 else 1.0 - v
        return float(self.weights @ self.samples[:, locus, allele])

    @property
    def z(self) -> float:
        return float(np.exp(self.log_z))


def limit_density_lambda1(alpha, phi, *, space: AlleleSpace | None = None, rng=None,
                          samples: int = 200_000) -> LimitDensity:
    """Reweighted prior ``exp(-<phi, q>) pi(dq) / Z`` for critical scaling.

    Parameters
    ----------
    alpha : array_like
        Dirichlet parameters, one vector (single locus) or one per locus.
    phi : array_like
        Penalty table over genomes.
    rng : numpy.random.Generator, optional
        Needed only for the importance-sampling path (``K > 2`` or ``L > 1``).

    Raises
    ------
    ConvergenceError
        If quadrature misses its relative tolerance or the importance
        sample's effective size falls below 1000.
    """
    if space is None:
        L = 1 if np.ndim(alpha) == 1 else len(alpha)
        space = AlleleSpace(len(as_alpha_per_locus(alpha, L)[0]), L)
    alphas = tuple(_positive(a) for a in as_alpha_per_locus(alpha, space.L))
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.size != space.size or not np.all(np.isfinite(phi)):
        raise InvalidArgument(f"phi must hold {space.size} finite entries")
    phi.setflags(write=False)
    if space.L == 1 and space.K == 2:
        a1, a2 = alphas[0]
        # Z = E[exp(-phi1 x - phi2 (1 - x))] under Beta(a1, a2)
        v, err = integrate.quad(lambda x: np.exp(-phi[0] * x - phi[1] * (1 - x)), 0, 1,
                                weight="alg", wvar=(a1 - 1, a2 - 1), epsabs=0, epsrel=1e-12,
                                limit=200)
        z = v * np.exp(-betaln(a1, a2))
        if not v > 0 or err > QUAD_RTOL * v:
            raise ConvergenceError(f"quadrature relative error {err / v:.3g} above {QUAD_RTOL}")
        return LimitDensity(alphas, phi, float(np.log(z)), "quadrature")
    if rng is None:
        rng = np.random.default_rng(0)
    qs = np.stack([rng.dirichlet(a, size=samples) for a in alphas], axis=1)
    dens = LimitDensity(alphas, phi, 0.0, "importance")
    logw = -dens._product(qs) @ phi
    lz = logsumexp(logw) - np.log(samples)
    wts = np.exp(logw - logsumexp(logw))
    ess = 1.0 / np.sum(wts ** 2)
    if ess < MIN_ESS:
        raise ConvergenceError(f"importance sample ESS {ess:.0f} below {MIN_ESS}")
    return LimitDensity(alphas, phi, float(lz), "importance", float(ess), qs, wts)


# ---------------------------------------------------------------------------
# two loci, two alleles


@dataclass(frozen=True)
class HessianReport:
    minima: list
    hessians: list
    dets: list
    weights: list | None
    convexity_certified: bool
    certificate_lhs: float
    certificate_rhs: float
    boundary_hits: int = 0
    saddles: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "minima": [list(map(float, m)) for m in self.minima],
            "hessians": [np.asarray(h).tolist() for h in self.hessians],
            "dets": [float(d) for d in self.dets],
            "weights": None if self.weights is None else [float(p) for p in self.weights],
            "convexity_certified": bool(self.convexity_certified),
            "certificate": [float(self.certificate_lhs), float(self.certificate_rhs)],
            "boundary_hits": int(self.boundary_hits),
        }


def _cube_bound(a) -> float:
    """Lower bound of ``a1 / z**2 + a2 / (1 - z)**2`` over ``(0, 1)``."""
    return float((a[0] ** (1 / 3) + a[1] ** (1 / 3)) ** 3)


def interaction(table) -> float:
    """``t(1,1) - t(1,2) - t(2,1) + t(2,2)`` for a 2x2 table (row-major)."""
    t = np.asarray(table, dtype=float).ravel()
    return float(t[0] - t[1] - t[2] + t[3])


def convexity_certificate_lambda0(alpha, beta, w) -> tuple[bool, float, float]:
    """Global convexity test for the constant-mutation landscape with weight table ``w``."""
    lhs = _cube_bound(alpha) * _cube_bound(beta)
    rhs = (interaction(w) / np.min(w)) ** 2
    return lhs > rhs, lhs, float(rhs)


def convexity_certificate_mid(alpha, beta, phi) -> tuple[bool, float, float]:
    """Global convexity test for the intermediate landscape with penalty table ``phi``."""
    lhs = _cube_bound(alpha) * _cube_bound(beta)
    rhs = interaction(phi) ** 2
    return lhs > rhs, lhs, float(rhs)


class Landscape2x2:
    """The function ``g(z1, z2)`` minimised by the two-locus limit, with derivatives.

    ``regime="lambda0"``: ``-ln <w, z> - sum alpha ln``; ``regime="lambda_mid"``:
    ``<phi, z> - sum alpha ln``.  ``z1, z2`` are the type-1 frequencies
    at each locus.
    """

    def __init__(self, alpha, beta, table, regime: str):
        self.a = _positive(alpha)
        self.b = _positive(beta)
        if self.a.size != 2 or self.b.size != 2:
            raise InvalidArgument("two alleles per locus required")
        self.t = np.asarray(table, dtype=float).reshape(2, 2)
        if regime not in ("lambda0", "lambda_mid"):
            raise InvalidArgument(f"unknown regime {regime!r}")
        if regime == "lambda0" and np.any(self.t <= 0):
            raise InvalidArgument("weights must be positive")
        self.regime = regime
        self.star = interaction(self.t)

    def _parts(self, z):
        z1, z2 = z
        t = self.t
        th11 = t[0, 0] * z2 + t[0, 1] * (1 - z2)
        th12 = t[1, 0] * z2 + t[1, 1] * (1 - z2)
        th21 = t[0, 0] * z1 + t[1, 0] * (1 - z1)
        th22 = t[0, 1] * z1 + t[1, 1] * (1 - z1)
        s = z1 * th11 + (1 - z1) * th12
        return th11 - th12, th21 - th22, s

    def value(self, z) -> float:
        z1, z2 = z
        if not (0 < z1 < 1 and 0 < z2 < 1):
            return np.inf
        _, _, s = self._parts(z)
        head = -np.log(s) if self.regime == "lambda0" else s
        return float(head - self.a[0] * np.log(z1) - self.a[1] * np.log1p(-z1)
                     - self.b[0] * np.log(z2) - self.b[1] * np.log1p(-z2))

    def gradient(self, z) -> np.ndarray:
        z1, z2 = z
        d1, d2, s = self._parts(z)
        if self.regime == "lambda0":
            g = np.array([-d1 / s, -d2 / s])
        else:
            g = np.array([d1, d2])
        g[0] += -self.a[0] / z1 + self.a[1] / (1 - z1)
        g[1] += -self.b[0] / z2 + self.b[1] / (1 - z2)
        return g

    def hessian(self, z) -> np.ndarray:
        z1, z2 = z
        d1, d2, s = self._parts(z)
        h11 = self.a[0] / z1 ** 2 + self.a[1] / (1 - z1) ** 2
        h22 = self.b[0] / z2 ** 2 + self.b[1] / (1 - z2) ** 2
        if self.regime == "lambda0":
            h11 += d1 ** 2 / s ** 2
            h22 += d2 ** 2 / s ** 2
            h12 = (d1 * d2 - self.star * s) / s ** 2
        else:
            h12 = self.star
        return np.array([[h11, h12], [h12, h22]])

    def certificate(self) -> tuple[bool, float, float]:
        if self.regime == "lambda0":
            return convexity_certificate_lambda0(self.a, self.b, self.t)
        return convexity_certificate_mid(self.a, self.b, self.t)


def _newton(land: Landscape2x2, z0, max_iter: int = 200):
    """Damped Newton from ``z0``; returns ``(z, status)`` with status in {min, saddle, boundary, stall}."""
    z = np.array(z0, dtype=float)
    f = land.value(z)
    for _ in range(max_iter):
        g = land.gradient(z)
        H = land.hessian(z)
        ev, V = np.linalg.eigh(H)
        if np.max(np.abs(g)) < 1e-13:
            if ev[0] > 0:
                return z, "min"
            direction = V[:, 0] * (1.0 if V[0, 0] + V[1, 0] >= 0 else -1.0)
            step = 0.1 * direction
        elif ev[0] > 1e-12 * max(1.0, ev[1]):
            step = -np.linalg.solve(H, g)
        else:
            shift = -ev[0] + 1e-6 * max(1.0, abs(ev[1]))
            step = -np.linalg.solve(H + shift * np.eye(2), g)
        for _ in range(30):
            cand = z + step
            fc = land.value(cand)
            if fc < f:
                break
            step = 0.5 * step
        else:
            # No decrease: either converged to rounding or stuck near a saddle.
            if np.max(np.abs(g)) < 1e-8:
                return z, ("min" if ev[0] > 0 else "saddle")
            return z, "stall"
        z, f = cand, fc
        if min(z.min(), 1 - z.max()) < 1e-10:
            return z, "boundary"
        if np.max(np.abs(step)) < 1e-15:
            break
    g = land.gradient(z)
    if np.max(np.abs(g)) < 1e-8:
        return z, "min" if np.linalg.eigvalsh(land.hessian(z))[0] > 0 else "saddle"
    return z, "stall"


def _polish(land: Landscape2x2, z):
    """Undamped Newton steps while the gradient keeps shrinking."""
    gn = np.max(np.abs(land.gradient(z)))
    for _ in range(20):
        cand = z - np.linalg.solve(land.hessian(z), land.gradient(z))
        if not (0 < cand.min() and cand.max() < 1):
            break
        cn = np.max(np.abs(land.gradient(cand)))
        if cn >= gn:
            break
        z, gn = cand, cn
    return z


def find_minima(land: Landscape2x2):
    """Multistart Newton over a 21x21 interior grid; returns sorted, deduplicated minima."""
    grid = np.linspace(NEWTON_MARGIN, 1 - NEWTON_MARGIN, NEWTON_GRID)
    found, boundary, saddles = [], 0, []
    for z1 in grid:
        for z2 in grid:
            z, status = _newton(land, (z1, z2))
            if status == "min":
                found.append(_polish(land, z))
            elif status == "boundary":
                boundary += 1
            elif status == "saddle":
                saddles.append(z)
    found.sort(key=lambda p: (p[0], p[1]))
    minima = []
    for z in found:
        if not any(np.max(np.abs(z - m)) < DEDUP_RADIUS for m in minima):
            minima.append(z)
    if boundary:
        warnings.warn(f"{boundary} Newton starts ran to the boundary and were excluded",
                      RuntimeWarning, stacklevel=2)
    return minima, boundary, saddles


def _product_point(z1, z2) -> SimplexPoint:
    q1, q2 = np.array([z1, 1 - z1]), np.array([z2, 1 - z2])
    return SimplexPoint(np.outer(q1, q2).ravel())


def product_limit_k2l2(alpha_pair, beta_pair, table, regime: str = "lambda_mid"):
    """Limit analysis for two loci with two alleles each.

    Parameters
    ----------
    alpha_pair, beta_pair : array_like
        Dirichlet parameters at locus 1 and locus 2.
    table : array_like
        Row-major 2x2 table: penalties ``phi`` for ``"lambda_mid"``
        (also accepted as ``"mid"``) or weights ``w`` for ``"lambda0"``
        (also ``"0"``).

    Returns
    -------
    (HessianReport, LimitPrediction)
    """
    regime = {"0": "lambda0", "mid": "lambda_mid"}.get(regime, regime)
    land = Landscape2x2(alpha_pair, beta_pair, table, regime)
    ok, lhs, rhs = land.certificate()
    minima, boundary, saddles = find_minima(land)
    if not minima:
        raise ConvergenceError("no interior minimum found")
    hess = [land.hessian(m) for m in minima]
    dets = [float(np.linalg.det(h)) for h in hess]
    pd = all(h[0, 0] > 0 and d > 0 for h, d in zip(hess, dets))
    if pd:
        raw = np.array([1.0 / np.sqrt(d) for d in dets])
        weights = list(raw / raw.sum())
    else:
        warnings.warn("Hessian not positive definite at a minimum; weights withheld",
                      RuntimeWarning, stacklevel=2)
        weights = None
    report = HessianReport(minima, hess, dets, weights, ok, lhs, rhs, boundary, saddles)

    w = land.t.ravel() if regime == "lambda0" else None
    atoms = [_product_point(*m) for m in minima]
    if regime == "lambda0":
        targets = [r_map(q, w) for q in atoms]
        thetas = [float(q.q @ w) for q in atoms]
    else:
        targets = atoms
        thetas = [float(q.q @ land.t.ravel()) for q in atoms]
    space = AlleleSpace(2, 2)
    if len(minima) == 1:
        pred = LimitPrediction(regime, "scaled", space, q_star=atoms[0],
                               r_star=targets[0] if regime == "lambda0" else None,
                               theta=thetas[0])
    else:
        pred = LimitPrediction(regime, "scaled", space,
                               mixture=None if weights is None else list(zip(weights, targets)),
                               conjectural=True)
    return report, pred


# ---------------------------------------------------------------------------
# predictions


REGIMES = ("lambda0", "lambda_mid", "lambda1", "lambda_gt1")


@dataclass(frozen=True)
class LimitPrediction:
    """Predicted weak limit of the stationary frequency law.

    ``q_star``/``r_star``/``theta`` describe point masses; the observable
    frequency vector concentrates at ``r_star`` when present and at
    ``q_star`` otherwise.  ``density`` is set for the critical and
    super-critical regimes.  ``mixture`` lists ``(weight, atom)`` pairs of
    the frequency-vector limit when the landscape has several minima.
    """

    regime: str
    prior_scaling: str
    space: AlleleSpace
    q_star: SimplexPoint | None = None
    r_star: SimplexPoint | None = None
    theta: float | None = None
    density: LimitDensity | None = None
    mixture: list | None = None
    conjectural: bool = False
    report: HessianReport | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InvalidArgument(f"unknown regime {self.regime!r}")
        if self.density is None and self.q_star is None and self.mixture is None and not self.conjectural:
            raise InvalidArgument("prediction carries no limit object")

    @property
    def kind(self) -> str:
        if self.density is not None:
            return "density"
        if self.mixture is not None or (self.q_star is None and self.conjectural):
            return "mixture"
        return "point"

    def frequency_point(self) -> np.ndarray:
        """Genome-frequency vector of a point-mass limit."""
        target = self.r_star if self.r_star is not None else self.q_star
        if target is None:
            raise InvalidArgument("not a point-mass prediction")
        return target.q

    def frequency_limit(self, allele: int = 0, locus: int = 0) -> float:
        """Limit of the recorded type frequency at one locus (point masses only)."""
        P = self.space.locus_projection(locus)
        return float(self.frequency_point() @ P[:, allele])

    def to_json(self) -> dict:
        out = {"regime": self.regime, "prior_scaling": self.prior_scaling,
               "K": self.space.K, "L": self.space.L, "kind": self.kind}
        if self.q_star is not None:
            out["q_star"] = self.q_star.q.tolist()
        if self.r_star is not None:
            out["r_star"] = self.r_star.q.tolist()
        if self.theta is not None:
            out["theta"] = self.theta
        if self.density is not None:
            out["density"] = {"alpha": [a.tolist() for a in self.density.alpha],
                              "phi": self.density.phi.tolist(), "Z": self.density.z,
                              "mode": self.density.mode, "ess": self.density.ess}
        if self.mixture is not None:
            out["mixture"] = [{"weight": float(p), "atom": a.q.tolist()} for p, a in self.mixture]
        if self.conjectural:
            out["conjectural"] = True
        if self.report is not None:
            out["hessian_report"] = self.report.to_dict()
        return out


def _cfg(config, *names, default=None):
    for n in names:
        if isinstance(config, dict) and n in config:
            return config[n]
        if hasattr(config, n):
            return getattr(config, n)
    return default


def predict_limit(config, rng=None) -> LimitPrediction:
    """Dispatch to the limit object appropriate for the configuration.

    ``config`` needs ``K``, ``L`` (or ``space``), ``alpha`` (base prior),
    ``phi``, ``lam`` (or ``lambda``) and ``prior_scaling`` in
    ``{"fixed", "scaled"}``; attributes or mapping keys both work.
    """
    space = _cfg(config, "space")
    if space is None:
        space = AlleleSpace(int(_cfg(config, "K")), int(_cfg(config, "L", default=1)))
    alphas = [_positive(a) for a in as_alpha_per_locus(_cfg(config, "base_alpha", "alpha"), space.L)]
    phi = np.asarray(_cfg(config, "phi"), dtype=float).ravel()
    if phi.size != space.size or np.any(phi < 0) or not np.all(np.isfinite(phi)):
        raise InvalidArgument(f"phi must hold {space.size} finite nonnegative entries")
    lam = float(_cfg(config, "lam", "lambda"))
    scaling = _cfg(config, "prior_scaling", default="scaled")
    if lam < 0 or not np.isfinite(lam):
        raise InvalidArgument("lambda must be >= 0")
    if scaling not in ("fixed", "scaled"):
        raise InvalidArgument(f"prior_scaling must be 'fixed' or 'scaled', got {scaling!r}")
    alpha_arg = alphas[0] if space.L == 1 else alphas

    if lam == 1.0:
        return LimitPrediction("lambda1", scaling, space,
                               density=limit_density_lambda1(alpha_arg, phi, space=space, rng=rng))
    if lam > 1.0:
        if scaling == "scaled":
            raise InvalidArgument("a scaled prior is defined only for lambda in [0, 1]")
        return LimitPrediction("lambda_gt1", scaling, space,
                               density=limit_density_lambda1(alpha_arg, np.zeros_like(phi),
                                                             space=space, rng=rng))
    regime = "lambda0" if lam == 0.0 else "lambda_mid"
    if scaling == "fixed":
        best = np.flatnonzero(phi == phi.min())
        if best.size != 1:
            raise NonUniqueMinimizer(f"penalty minimum shared by genomes {best.tolist()}")
        q = np.zeros(space.size)
        q[best[0]] = 1.0
        q = SimplexPoint(q)
        if regime == "lambda0":
            return LimitPrediction(regime, scaling, space, q_star=q, r_star=q,
                                   theta=float(np.exp(-phi[best[0]])))
        return LimitPrediction(regime, scaling, space, q_star=q, theta=float(phi[best[0]]))
    if space.L == 1:
        if regime == "lambda0":
            fp = solve_qstar_lambda0(alphas[0], np.exp(-phi))
            return LimitPrediction(regime, scaling, space, q_star=fp.q, r_star=fp.r, theta=fp.theta)
        fp = solve_qstar_lambda_mid(alphas[0], phi)
        return LimitPrediction(regime, scaling, space, q_star=fp.q, theta=fp.theta)
    if space.K == 2 and space.L == 2:
        table = np.exp(-phi) if regime == "lambda0" else phi
        report, pred = product_limit_k2l2(alphas[0], alphas[1], table, regime)
        return LimitPrediction(pred.regime, pred.prior_scaling, pred.space, pred.q_star,
                               pred.r_star, pred.theta, None, pred.mixture, pred.conjectural, report)
    raise InvalidArgument(f"no limit analysis for K={space.K}, L={space.L} with a scaled prior")
