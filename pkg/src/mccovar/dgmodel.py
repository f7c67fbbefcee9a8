"""Two-portfolio delta-gamma loss model: build, simplify, sample, serialize.

The simplified model writes both losses as diagonal quadratics in d independent
standard normal drivers ``Z``::

    X = c1 + sum_j (delta1[j] * Z_j / W + gamma1[j] * Z_j**2 / W**2)
    Y = c2 + sum_j (delta2[j] * Z_j / W + gamma2[j] * Z_j**2 / W**2)

with ``W = 1`` for normal risk factors and ``W = sqrt(chi2_nu / nu)`` (one draw
per scenario) for multivariate-t risk factors.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import InvalidParameterError, NotPositiveDefiniteError
from .numerics import RngStream, as_sym_matrix, cholesky, sym_eigen

log = logging.getLogger(__name__)

# Rows of Z generated per block when sampling; bounds memory, not results.
CHUNK_ROWS = 1 << 15


@dataclass(frozen=True)
class RawDeltaGamma:
    """Delta-gamma approximation in the original (correlated) risk-factor space."""

    d: int
    delta_t: float
    theta1: float
    theta2: float
    delta1_bar: np.ndarray
    delta2_bar: np.ndarray
    gamma1_bar: np.ndarray
    gamma2_bar: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("gamma1_bar", "gamma2_bar", "sigma"):
            m = as_sym_matrix(getattr(self, name))
            if m.shape != (self.d, self.d):
                raise InvalidParameterError(f"{name} must be {self.d}x{self.d}")
        if self.delta_t <= 0:
            raise InvalidParameterError("delta_t must be positive")

    def losses(self, ds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Losses at risk-factor changes ``ds`` (rows are scenarios)."""
        ds = np.atleast_2d(ds)
        x = (-self.theta1 * self.delta_t - ds @ self.delta1_bar
             - 0.5 * np.einsum("ni,ij,nj->n", ds, self.gamma1_bar, ds))
        y = (-self.theta2 * self.delta_t - ds @ self.delta2_bar
             - 0.5 * np.einsum("ni,ij,nj->n", ds, self.gamma2_bar, ds))
        return x, y


@dataclass(frozen=True)
class SimplifiedDeltaGamma:
    d: int
    c1: float
    c2: float
    delta1: np.ndarray
    gamma1: np.ndarray
    delta2: np.ndarray
    gamma2: np.ndarray
    # Frobenius norm of the off-diagonal part of Y's transformed curvature
    # that the diagonal form drops; zero for models built directly.
    gamma2_residual: float = 0.0

    def __post_init__(self):
        for name in ("delta1", "gamma1", "delta2", "gamma2"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (self.d,):
                raise InvalidParameterError(f"{name} must have length d={self.d}, got {v.shape}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def is_ready(self) -> bool:
        """True when the last driver carries a positive, maximal X-curvature."""
        return bool(self.gamma1[-1] > 0 and self.gamma1[-1] == self.gamma1.max())

    def scale_y(self, a: float) -> "SimplifiedDeltaGamma":
        return SimplifiedDeltaGamma(self.d, self.c1, a * self.c2, self.delta1, self.gamma1,
                                    a * self.delta2, a * self.gamma2, abs(a) * self.gamma2_residual)

    def to_dict(self) -> dict:
        return {
            "d": self.d, "c1": float(self.c1), "c2": float(self.c2),
            "delta1": self.delta1.tolist(), "gamma1": self.gamma1.tolist(),
            "delta2": self.delta2.tolist(), "gamma2": self.gamma2.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SimplifiedDeltaGamma":
        try:
            return cls(int(doc["d"]), float(doc["c1"]), float(doc["c2"]),
                       np.asarray(doc["delta1"], float), np.asarray(doc["gamma1"], float),
                       np.asarray(doc["delta2"], float), np.asarray(doc["gamma2"], float))
        except KeyError as exc:
            raise InvalidParameterError(f"model document is missing field {exc}") from None

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


class TailKind(str, Enum):
    NORMAL = "normal"
    STUDENT_T = "t"


@dataclass(frozen=True)
class TailSpec:
    kind: TailKind = TailKind.NORMAL
    nu: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TailKind(self.kind))
        if self.kind is TailKind.STUDENT_T and (self.nu is None or self.nu < 1):
            raise InvalidParameterError("Student-t tail needs an integer nu >= 1")

    @classmethod
    def normal(cls) -> "TailSpec":
        return cls(TailKind.NORMAL)

    @classmethod
    def student_t(cls, nu: int) -> "TailSpec":
        return cls(TailKind.STUDENT_T, int(nu))

    def label(self) -> str:
        return "normal" if self.kind is TailKind.NORMAL else f"t{self.nu}"


NORMAL = TailSpec.normal()


@dataclass
class LossSample:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise InvalidParameterError(
                f"x and y must be equal-length vectors, got {self.x.shape} and {self.y.shape}")

    def __len__(self):
        return self.x.size


def _transform(raw: RawDeltaGamma):
    c_tilde = cholesky(raw.sigma)
    a = -0.5 * c_tilde.T @ raw.gamma1_bar @ c_tilde
    a = 0.5 * (a + a.T)  # exact symmetry for the Jacobi input
    u, gamma1 = sym_eigen(a)
    c = c_tilde @ u
    y_curv = -0.5 * c.T @ raw.gamma2_bar @ c
    return c, gamma1, 0.5 * (y_curv + y_curv.T)


def simplify_with_basis(raw: RawDeltaGamma):
    """Simplify and also return the driver basis ``C`` and Y's full curvature matrix.

    ``delta_S = C @ Z`` maps drivers back to risk factors.
    """
    c, gamma1, y_curv = _transform(raw)
    order = np.argsort(gamma1, kind="stable")
    c, gamma1 = c[:, order], gamma1[order]
    y_curv = y_curv[np.ix_(order, order)]
    gamma2 = np.diag(y_curv).copy()
    residual = float(np.linalg.norm(y_curv - np.diag(gamma2)))
    model = SimplifiedDeltaGamma(
        d=raw.d,
        c1=-raw.theta1 * raw.delta_t,
        c2=-raw.theta2 * raw.delta_t,
        delta1=-c.T @ raw.delta1_bar,
        gamma1=gamma1,
        delta2=-c.T @ raw.delta2_bar,
        gamma2=gamma2,
        gamma2_residual=residual,
    )
    if gamma1[-1] <= 0:
        log.warning("all X-curvatures are non-positive; IS estimation is unavailable")
    return model, c, y_curv


def simplify(raw: RawDeltaGamma) -> SimplifiedDeltaGamma:
    return simplify_with_basis(raw)[0]


def loss_from_z(model: SimplifiedDeltaGamma, z, w: float = 1.0):
    """Losses (x, y) at driver values ``z`` (vector or rows) and common shock ``w``."""
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise InvalidParameterError("common shock w must be positive")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 2 and w.ndim == 1:
        w = w[:, None]
    zs = z / w
    zs2 = zs * zs
    x = model.c1 + zs @ model.delta1 + zs2 @ model.gamma1
    y = model.c2 + zs @ model.delta2 + zs2 @ model.gamma2
    if z.ndim == 1:
        return float(x), float(y)
    return x, y


def sample_shock(tail: TailSpec, stream: RngStream, n: int) -> np.ndarray | None:
    """Per-scenario common shock W, or None for normal risk factors."""
    if tail.kind is TailKind.NORMAL:
        return None
    return np.sqrt(stream.chi_squared(tail.nu, n) / tail.nu)


def sample_losses(model: SimplifiedDeltaGamma, tail: TailSpec, stream: RngStream, n: int) -> LossSample:
    """n i.i.d. loss pairs.  Z is drawn row-major from ``stream``; W from a substream."""
    if n < 1:
        raise InvalidParameterError("n must be positive")
    w = sample_shock(tail, stream.substream(0), n)
    x = np.empty(n)
    y = np.empty(n)
    for lo in range(0, n, CHUNK_ROWS):
        hi = min(n, lo + CHUNK_ROWS)
        z = stream.normal((hi - lo, model.d))
        x[lo:hi], y[lo:hi] = loss_from_z(model, z, 1.0 if w is None else w[lo:hi])
    return LossSample(x, y)


def generate_raw_params(seed: int, max_retries: int = 20) -> RawDeltaGamma:
    """Random 50-factor delta-gamma pair following the published generation recipe."""
    d = 50
    root = RngStream(seed, 0)
    sd = np.sort(root.substream(1).uniform(d))
    for attempt in range(max_retries):
        eig_stream = root.substream(2, attempt)
        half = 2.0 * eig_stream.uniform(d // 2)
        eig = np.concatenate([half, (2.0 - half)[::-1]])
        gen = np.random.Generator(np.random.Philox(key=eig_stream.raw(2)))
        corr = stats.random_correlation.rvs(eig, random_state=gen)
        corr = 0.5 * (corr + corr.T)
        np.fill_diagonal(corr, 1.0)
        sigma = np.outer(sd, sd) * corr
        try:
            cholesky(sigma)
            break
        except NotPositiveDefiniteError:
            log.info("generated covariance not positive definite; retrying eigenvalues (attempt %d)", attempt + 1)
    else:
        raise NotPositiveDefiniteError(f"no positive-definite covariance after {max_retries} attempts")

    s = root.substream(3)
    delta1_bar = s.uniform(d) * 0.01 - 0.005
    g1 = s.uniform((d, d)) * 0.04 - 0.02
    g1[49, 49] = 0.8
    delta2_bar = s.uniform(d) * 0.01 - 0.005
    g2 = s.uniform((d, d)) * 0.08 - 0.04
    g2[48, 48] = 0.1
    g2[49, 49] = 0.05
    return RawDeltaGamma(
        d=d, delta_t=1.0, theta1=0.0, theta2=0.0,
        delta1_bar=delta1_bar, delta2_bar=delta2_bar,
        gamma1_bar=0.5 * (g1 + g1.T), gamma2_bar=0.5 * (g2 + g2.T),
        sigma=sigma,
    )


_FIXTURE_DELTA1 = [
    -2.04e-03, -5.56e-04, -3.06e-04, 1.94e-03, 7.03e-04, 1.32e-04, -1.75e-03,
    -6.79e-04, 9.27e-04, 2.14e-03, 8.05e-04, -1.58e-03, 4.74e-04, -2.06e-04,
    -1.67e-03, -4.66e-04, 6.03e-05, 1.46e-03, 3.17e-04, 1.32e-03, 1.96e-03,
    -2.95e-03, -1.13e-03, -7.05e-04, -1.14e-03, -2.91e-03, -9.88e-04, 5.80e-04,
    2.81e-04, 2.67e-03, 2.86e-03, 3.13e-03, -1.04e-04, 1.03e-03, 5.53e-04,
    -1.01e-03, -3.17e-03, 1.16e-03, -2.26e-04, 1.87e-03, 6.50e-04, 3.38e-03,
    1.88e-03, -3.42e-04, -3.97e-03, 1.94e-03, -1.61e-03, -6.50e-04, -3.70e-04,
    1.15e-03,
]
_FIXTURE_GAMMA1 = [
    -2.70e-02, -1.84e-02, -1.68e-02, -1.25e-02, -1.15e-02, -7.74e-03, -6.71e-03,
    -5.80e-03, -5.08e-03, -4.45e-03, -3.77e-03, -3.18e-03, -2.35e-03, -1.98e-03,
    -1.81e-03, -1.17e-03, -1.02e-03, -5.46e-04, -2.82e-04, -2.56e-04, -1.18e-04,
    -6.98e-05, -3.71e-05, -2.54e-05, -8.86e-07, 8.07e-06, 2.65e-05, 8.39e-05,
    1.21e-04, 1.25e-04, 3.03e-04, 5.26e-04, 7.85e-04, 9.46e-04, 1.51e-03,
    1.60e-03, 2.02e-03, 3.13e-03, 3.58e-03, 4.21e-03, 5.03e-03, 6.53e-03,
    7.33e-03, 7.93e-03, 1.18e-02, 1.43e-02, 1.70e-02, 2.20e-02, 3.28e-02,
    3.96e-01,
]
_FIXTURE_DELTA2 = [
    -4.27e-04, 7.47e-05, -2.28e-03, -6.62e-04, -1.85e-03, -2.44e-03, -3.18e-03,
    1.04e-03, 1.55e-03, -1.54e-03, 1.09e-03, -1.18e-03, -1.03e-03, 2.03e-04,
    -3.03e-03, 6.99e-04, -2.17e-03, -1.46e-03, 1.47e-03, -6.34e-04, 7.60e-04,
    3.49e-05, -3.45e-04, -4.75e-04, -6.02e-04, -3.13e-04, -9.54e-04, 1.49e-03,
    -1.65e-03, 1.90e-03, 1.01e-03, -5.71e-05, 3.75e-04, 1.63e-03, -9.59e-04,
    1.67e-03, 3.34e-03, 3.69e-03, -2.46e-04, 4.85e-03, 9.56e-04, 1.43e-03,
    4.48e-03, 3.79e-03, 2.61e-04, 4.53e-04, 3.03e-03, 3.88e-03, 2.92e-03,
    2.96e-03,
]
_FIXTURE_GAMMA2 = [
    -5.50e-02, -3.85e-02, -2.79e-02, -2.47e-02, -2.31e-02, -1.59e-02, -1.42e-02,
    -1.22e-02, -1.01e-02, -8.10e-03, -6.67e-03, -4.35e-03, -3.85e-03, -3.40e-03,
    -2.78e-03, -1.91e-03, -1.67e-03, -1.02e-03, -8.50e-04, -4.63e-04, -2.59e-04,
    -2.42e-04, -3.56e-05, -1.69e-05, -9.58e-06, 1.94e-06, 3.31e-05, 4.87e-05,
    2.78e-04, 5.07e-04, 1.02e-03, 1.33e-03, 1.65e-03, 2.21e-03, 3.32e-03,
    4.18e-03, 5.12e-03, 6.50e-03, 8.09e-03, 8.95e-03, 1.05e-02, 1.33e-02,
    1.45e-02, 1.94e-02, 2.87e-02, 3.32e-02, 3.61e-02, 3.93e-02, 5.78e-02,
    6.84e-02,
]


def published_fixture() -> SimplifiedDeltaGamma:
    """The published 50-driver simplified model (c1 = c2 = 0)."""
    return SimplifiedDeltaGamma(
        d=50, c1=0.0, c2=0.0,
        delta1=np.array(_FIXTURE_DELTA1), gamma1=np.array(_FIXTURE_GAMMA1),
        delta2=np.array(_FIXTURE_DELTA2), gamma2=np.array(_FIXTURE_GAMMA2),
    )


def save_model(model: SimplifiedDeltaGamma, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path) -> SimplifiedDeltaGamma:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidParameterError(f"{path}: not a valid model document ({exc})") from None
    return SimplifiedDeltaGamma.from_dict(doc)
