"""Linear plant / sensor model, steady-state Kalman quantities and noise sampling.

    x[t+1] = A x[t] + B u[t] + w[t],   w ~ (0, Q)
    y[t]   = C x[t] + v[t],            v ~ (0, R)

All step functions broadcast over leading batch dimensions: a state may be an
``(n,)`` vector or an ``(runs, n)`` array.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PSD_TOL = 1e-10


class ModelError(ValueError):
    """Raised for malformed or invalid system models."""


class DimensionError(ModelError):
    pass


class RiccatiConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"Riccati iteration did not converge after {iterations} iterations "
            f"(last residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SystemModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    X0: np.ndarray | None = None

    def __post_init__(self):
        for name in ("A", "B", "C", "Q", "R"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        if self.X0 is not None:
            object.__setattr__(self, "X0", _as_matrix(self.X0, "X0"))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @classmethod
    def scalar(cls, a=1.0, b=1.0, c=1.0, q=1.0, r=10.0, x0=None) -> "SystemModel":
        return cls(a, b, c, q, r, None if x0 is None else x0)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in ("A", "B", "C", "Q", "R")}
        if self.X0 is not None:
            out["X0"] = self.X0.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SystemModel":
        unknown = set(data) - {"A", "B", "C", "Q", "R", "X0", "noise"}
        if unknown:
            raise ModelError(f"unknown model keys: {sorted(unknown)}")
        return cls(data["A"], data["B"], data["C"], data["Q"], data["R"], data.get("X0"))


def load_model(path) -> tuple[SystemModel, "NoiseSpec | None"]:
    """Read a model JSON file; the optional ``noise`` block applies to both channels."""
    data = json.loads(Path(path).read_text())
    model = SystemModel.from_dict(data)
    noise = None
    if "noise" in data:
        spec = data["noise"]
        noise = NoiseSpec(spec["kind"], model.R, float(spec.get("dof", 4.0)))
    return model, noise


def save_model(model: SystemModel, path, noise: "NoiseSpec | None" = None) -> None:
    data = model.to_dict()
    if noise is not None:
        data["noise"] = {"kind": noise.kind, "dof": noise.dof}
    Path(path).write_text(json.dumps(data, indent=2))


# -- validation ---------------------------------------------------------------


@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks[name] = (bool(ok), detail)

    @property
    def ok(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def failures(self) -> dict:
        return {k: d for k, (ok, d) in self.checks.items() if not ok}

    def raise_for_failures(self) -> None:
        if not self.ok:
            msg = "; ".join(f"{k}: {d}" for k, d in self.failures().items())
            raise ModelError(f"invalid system model ({msg})")


def _is_symmetric(M: np.ndarray) -> bool:
    return np.allclose(M, M.T, atol=PSD_TOL, rtol=0.0)


def _min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    return controllability_matrix(A.T, C.T).T


def validate_model(model: SystemModel) -> ValidationReport:
    """Check dimensions, noise covariances, controllability and observability.

    Dimension problems raise ``DimensionError`` naming the offending pair, since
    nothing else can be checked on a mis-shaped model. Everything else is
    reported per check.
    """
    A, B, C, Q, R = model.A, model.B, model.C, model.Q, model.R
    for name in ("A", "B", "C", "Q", "R"):
        M = getattr(model, name)
        if M.size == 0:
            raise DimensionError(f"{name} is empty")
        if not np.all(np.isfinite(M)):
            raise ModelError(f"{name} has non-finite entries")
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionError(f"A must be square, got {A.shape}")
    if B.shape[0] != n:
        raise DimensionError(f"(A, B) mismatch: A is {A.shape}, B is {B.shape}")
    if C.shape[1] != n:
        raise DimensionError(f"(A, C) mismatch: A is {A.shape}, C is {C.shape}")
    if Q.shape != (n, n):
        raise DimensionError(f"(A, Q) mismatch: A is {A.shape}, Q is {Q.shape}")
    m = C.shape[0]
    if R.shape != (m, m):
        raise DimensionError(f"(C, R) mismatch: C is {C.shape}, R is {R.shape}")
    if model.X0 is not None and model.X0.shape != (n, n):
        raise DimensionError(f"(A, X0) mismatch: A is {A.shape}, X0 is {model.X0.shape}")

    report = ValidationReport()
    for name, M in (("Q", Q), ("X0", model.X0)):
        if M is None:
            continue
        sym = _is_symmetric(M)
        lam = _min_eig(M)
        report.add(f"{name}_psd", sym and lam >= -PSD_TOL, f"symmetric={sym}, min eigenvalue {lam:.3e}")
    sym = _is_symmetric(R)
    lam = _min_eig(R)
    report.add("R_pd", sym and lam > PSD_TOL, f"symmetric={sym}, min eigenvalue {lam:.3e}")

    rank_c = int(np.linalg.matrix_rank(controllability_matrix(A, B)))
    report.add("controllable", rank_c == n, f"controllability rank {rank_c} of {n}")
    rank_o = int(np.linalg.matrix_rank(observability_matrix(A, C)))
    report.add("observable", rank_o == n, f"observability rank {rank_o} of {n}")
    return report


# -- steady-state Kalman filter -------------------------------------------------


@dataclass(frozen=True)
class SteadyStateKalman:
    P_inf: np.ndarray
    K: np.ndarray
    P_e: np.ndarray
    A_K: np.ndarray
    W_K: np.ndarray
    P_r: np.ndarray
    iterations: int = 0

    @property
    def P_r_inv(self) -> np.ndarray:
        return np.linalg.inv(self.P_r)


def riccati_map(model: SystemModel, P: np.ndarray) -> np.ndarray:
    A, C, Q, R = model.A, model.C, model.Q, model.R
    S = C @ P @ C.T + R
    G = A @ P @ C.T
    out = A @ P @ A.T + Q - G @ np.linalg.solve(S, G.T)
    return 0.5 * (out + out.T)


def kalman_quantities(model: SystemModel, P: np.ndarray, iterations: int = 0) -> SteadyStateKalman:
    C, R, A = model.C, model.R, model.A
    S = C @ P @ C.T + R
    K = np.linalg.solve(S.T, (P @ C.T).T).T
    W_K = np.eye(model.n) - K @ C
    P_e = W_K @ P
    P_e = 0.5 * (P_e + P_e.T)
    return SteadyStateKalman(
        P_inf=P,
        K=K,
        P_e=P_e,
        A_K=A - K @ C @ A,
        W_K=W_K,
        P_r=0.5 * (S + S.T),
        iterations=iterations,
    )


def solve_riccati(model: SystemModel, tol: float = 1e-10, max_iter: int = 100_000) -> SteadyStateKalman:
    """Fixed-point iteration of the filter Riccati map, started from X0 (or Q)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    P = np.array(model.X0 if model.X0 is not None else model.Q, dtype=float)
    residual = np.inf
    for k in range(1, max_iter + 1):
        P_next = riccati_map(model, P)
        residual = float(np.linalg.norm(P_next - P, "fro"))
        P = P_next
        if residual < tol:
            return kalman_quantities(model, P, iterations=k)
    raise RiccatiConvergenceError(residual, max_iter)


# -- plant and sensor ------------------------------------------------------------


def _check_last(x: np.ndarray, size: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (size,):
        raise DimensionError(f"{name} has trailing dimension {x.shape[-1:] or ()}, expected {size}")
    return x


def step_plant(model: SystemModel, x, u, w) -> np.ndarray:
    x = _check_last(x, model.n, "x")
    u = _check_last(u, model.p, "u")
    w = _check_last(w, model.n, "w")
    return x @ model.A.T + u @ model.B.T + w


def observe(model: SystemModel, x, v) -> np.ndarray:
    x = _check_last(x, model.n, "x")
    v = _check_last(v, model.m, "v")
    return x @ model.C.T + v


# -- noise --------------------------------------------------------------------------

NOISE_KINDS = ("gaussian", "logistic", "student_t")


def _cov_factor(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root that tolerates singular PSD matrices."""
    lam, V = np.linalg.eigh(0.5 * (cov + cov.T))
    lam = np.clip(lam, 0.0, None)
    return (V * np.sqrt(lam)) @ V.T


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean noise with a prescribed covariance.

    Non-Gaussian kinds draw i.i.d. unit-variance coordinates (logistic with
    scale sqrt(3)/pi; Student-t rescaled by sqrt((dof-2)/dof)) and colour them
    with the covariance square root, so the second moment is matched exactly.
    """

    kind: str
    covariance: np.ndarray
    dof: float = 4.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "covariance", _as_matrix(self.covariance, "covariance"))
        if self.kind == "student_t" and not self.dof > 2:
            raise ValueError(f"student_t noise needs dof > 2 for finite variance, got {self.dof}")
        object.__setattr__(self, "_factor", _cov_factor(self.covariance))

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    @property
    def factor(self) -> np.ndarray:
        return self._factor

    @property
    def scale(self) -> np.ndarray:
        """Per-coordinate distribution scale for diagonal covariances."""
        sd = np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))
        if self.kind == "logistic":
            return sd * np.sqrt(3.0) / np.pi
        if self.kind == "student_t":
            return sd * np.sqrt((self.dof - 2.0) / self.dof)
        return sd


def standard_draws(kind: str, rng: np.random.Generator, shape, dof: float = 4.0) -> np.ndarray:
    """Zero-mean, unit-variance i.i.d. draws of the given family."""
    if kind == "gaussian":
        return rng.standard_normal(shape)
    if kind == "logistic":
        return rng.logistic(0.0, np.sqrt(3.0) / np.pi, shape)
    if kind == "student_t":
        return rng.standard_t(dof, shape) * np.sqrt((dof - 2.0) / dof)
    raise ValueError(f"unknown noise kind {kind!r}")


def sample_noise(spec: NoiseSpec, rng: np.random.Generator, size: int | tuple | None = None) -> np.ndarray:
    """Draw one noise vector (``size=None``) or a batch of shape ``(*size, dim)``."""
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    z = standard_draws(spec.kind, rng, shape + (spec.dim,), spec.dof)
    return z @ spec.factor.T


def gaussian(cov) -> NoiseSpec:
    return NoiseSpec("gaussian", cov)


def initial_state(model: SystemModel, rng: np.random.Generator, size=None) -> np.ndarray:
    """x[0] ~ N(0, X0); zero when X0 is absent."""
    if model.X0 is None:
        shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
        return np.zeros(shape + (model.n,))
    return sample_noise(gaussian(model.X0), rng, size)
