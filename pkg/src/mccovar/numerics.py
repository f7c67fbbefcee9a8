"""Random streams, normal inversion, and the small symmetric linear-algebra kernel.

Every random draw in the package comes out of an :class:`RngStream`, a
Philox counter-based generator keyed by ``(seed, stream_id, *path)``.  Replications
get distinct ``stream_id`` values; sub-tasks inside one replication get distinct
``path`` suffixes via :meth:`RngStream.substream`, so results never depend on
execution order or worker count.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import optimize, special

from .errors import ConvergenceError, InvalidParameterError, NotPositiveDefiniteError

_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0 ** -53


class RngStream:
    """Seeded, splittable source of uniforms, normals and chi-squared variates.

    Same ``(seed, stream_id, path)`` always produces the same sequence.  The
    stream is single-owner: do not share one instance between threads.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: tuple[int, ...] = ()):
        if seed < 0 or stream_id < 0:
            raise InvalidParameterError("seed and stream_id must be unsigned")
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.path = tuple(int(p) for p in path)
        entropy = [self.seed, self.stream_id, len(self.path), *self.path]
        key = np.random.SeedSequence(entropy).generate_state(2, np.uint64)
        self._bitgen = np.random.Philox(key=key)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"

    @property
    def counter(self) -> np.ndarray:
        return self._bitgen.state["state"]["counter"].copy()

    def substream(self, *ids: int) -> "RngStream":
        """Independent child stream; does not advance this stream."""
        return RngStream(self.seed, self.stream_id, self.path + tuple(ids))

    def raw(self, size: int) -> np.ndarray:
        return self._bitgen.random_raw(size)

    def uniform(self, size=None):
        """Uniforms on the open interval (0, 1), 53-bit resolution, one word each."""
        n = 1 if size is None else int(np.prod(size))
        bits = self._bitgen.random_raw(n) >> np.uint64(11)
        u = (bits.astype(np.float64) + 0.5) * _TWO_M53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None):
        """Standard normals by inversion, exactly one uniform per variate."""
        u = self.uniform(1 if size is None else size)
        z = inv_norm_cdf(u)
        return float(z[0]) if size is None else z

    def chi_squared(self, nu: int, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = 2.0 * _gamma_marsaglia_tsang(self, 0.5 * _check_nu(nu), n)
        return float(out[0]) if size is None else out.reshape(size)


def _check_nu(nu) -> int:
    if int(nu) != nu or nu < 1:
        raise InvalidParameterError(f"degrees of freedom must be a positive integer, got {nu}")
    return int(nu)


def _gamma_marsaglia_tsang(stream: RngStream, shape: float, n: int) -> np.ndarray:
    # Each round consumes len(pending) normals then len(pending) uniforms.
    boost = shape < 1.0
    k = shape + 1.0 if boost else shape
    d = k - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(n)
    pending = np.arange(n)
    while pending.size:
        x = stream.normal(pending.size)
        u = stream.uniform(pending.size)
        v = (1.0 + c * x) ** 3
        ok = v > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            ok &= np.log(u) < 0.5 * x * x + d - d * v + d * np.log(np.where(ok, v, 1.0))
        out[pending[ok]] = d * v[ok]
        pending = pending[~ok]
    if boost:
        out *= stream.uniform(n) ** (1.0 / shape)
    return out


def uniform01(stream: RngStream, size=None):
    return stream.uniform(size)


def std_normal(stream: RngStream, size=None):
    return stream.normal(size)


def chi_squared(stream: RngStream, nu: int, size=None):
    """Chi-squared(nu) variates via the Marsaglia-Tsang gamma sampler."""
    return stream.chi_squared(nu, size)


# AS241 (PPND16) coefficients.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _ratio(num, den, x):
    top = np.full_like(x, num[-1])
    bot = np.full_like(x, den[-1])
    for a, b in zip(num[-2::-1], den[-2::-1]):
        top *= x
        top += a
        bot *= x
        bot += b
    return top / bot


def inv_norm_cdf(p):
    """Standard normal quantile function (Wichura's AS241, ~1e-16 relative error).

    Accepts a scalar or an array; raises for any p outside (0, 1).
    """
    shape = np.shape(p)
    p = np.asarray(p, dtype=np.float64).ravel()
    if not np.all((p > 0.0) & (p < 1.0)):
        raise InvalidParameterError("inv_norm_cdf requires 0 < p < 1")
    q = p - 0.5
    r = 0.180625 - q * q
    z = q * _ratio(_A, _B, r)
    tail = np.flatnonzero(np.abs(q) > 0.425)
    if tail.size:
        qt = q[tail]
        pt = p[tail]
        rt = np.sqrt(-np.log(np.where(qt < 0, pt, 1.0 - pt)))
        near = rt <= 5.0
        zt = np.where(near, _ratio(_C, _D, rt - 1.6), 0.0)
        if not near.all():
            far = ~near
            zt[far] = _ratio(_E, _F, rt[far] - 5.0)
        z[tail] = np.where(qt < 0, -zt, zt)
    return float(z[0]) if shape == () else z.reshape(shape)


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(z))


def t_cdf(t: float, df: int) -> float:
    x = df / (df + t * t)
    tail = 0.5 * special.betainc(0.5 * df, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def t_quantile(p: float, df: int) -> float:
    """Student-t quantile by bracketing and inverting the incomplete-beta CDF."""
    if not 0.0 < p < 1.0:
        raise InvalidParameterError("t_quantile requires 0 < p < 1")
    if df < 1:
        raise InvalidParameterError("t_quantile requires df >= 1")
    if p == 0.5:
        return 0.0
    hi = 1.0
    while (t_cdf(hi, df) - p) * (t_cdf(-hi, df) - p) > 0:
        hi *= 2.0
    return optimize.brentq(lambda t: t_cdf(t, df) - p, -hi, hi, xtol=1e-14, rtol=1e-15)


def as_sym_matrix(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise InvalidParameterError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise InvalidParameterError("matrix is not exactly symmetric")
    return a


def cholesky(sigma) -> np.ndarray:
    """Lower-triangular L with L @ L.T == sigma."""
    a = as_sym_matrix(sigma)
    d = a.shape[0]
    tol = 1e-12 * np.max(np.abs(np.diag(a)))
    L = np.zeros_like(a)
    for j in range(d):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > tol:
            raise NotPositiveDefiniteError(f"non-positive pivot {pivot:.3e} at column {j}")
        L[j, j] = math.sqrt(pivot)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def sym_eigen(a, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(U, eigenvalues)`` with eigenvalues ascending and ``U[:, i]`` the
    matching unit eigenvector, so ``U @ diag(w) @ U.T`` reconstructs ``a``.
    """
    a = as_sym_matrix(a).copy()
    d = a.shape[0]
    v = np.eye(d)
    scale = np.max(np.sum(np.abs(a), axis=1))
    tol = 1e-12 * scale
    for _ in range(max_sweeps):
        off = np.abs(a - np.diag(np.diag(a))).max() if d > 1 else 0.0
        if off <= tol:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", last=(v, np.diag(a)))
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return v[:, order], w[order]
