"""Small dense linear-algebra and statistics kit for the analysis suite."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

_MASK64 = (1 << 64) - 1


class ConvergenceError(RuntimeError):
    pass


class SingularityError(np.linalg.LinAlgError):
    pass


class DegenerateTargetError(ValueError):
    pass


# --- PRNG -------------------------------------------------------------------

def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Prng:
    """xoshiro256++ stream seeded through splitmix64.

    Identical seeds give identical streams. Normal deviates use Box-Muller
    on consecutive uniforms.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        sm = self.seed
        s = []
        for _ in range(4):
            sm, z = _splitmix64(sm)
            s.append(z)
        self._s = s
        self._spare: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s0 + s3) & _MASK64, 23) + s0) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high) by rejection (no modulo bias)."""
        span = high - low
        if span <= 0:
            raise ValueError(f"empty range [{low}, {high})")
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            x = self.next_u64()
            if x < limit:
                return low + x % span

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = self.random()
        while u1 <= 0.0:
            u1 = self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normal_array(self, shape, scale: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        return (np.fromiter((self.normal() for _ in range(n)), dtype=np.float64, count=n)
                * scale).reshape(shape)

    def random_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        return np.fromiter((self.random() for _ in range(n)), dtype=np.float64, count=n).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        a = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            a[i], a[j] = a[j], a[i]
        return np.asarray(a, dtype=np.int64)

    def spawn(self) -> "Prng":
        """Independent child stream seeded from this stream."""
        return Prng(self.next_u64())

    def numpy_generator(self) -> np.random.Generator:
        """numpy Generator seeded from this stream, for bulk draws (dropout masks)."""
        return np.random.default_rng(self.next_u64())


# --- symmetric eigendecomposition -------------------------------------------

@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings of 0..n-1 such that each round holds disjoint pairs and every pair appears once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def eigh_symmetric(a, tol: float = 1e-12, max_sweeps: int = 100) -> EigenResult:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Rotations inside a round act on disjoint index pairs, so each round is
    applied as one vectorised row/column update. Eigenvalues are returned
    ascending; column i of the eigenvector matrix pairs with eigenvalue i.
    """
    A = np.array(a, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"eigh_symmetric needs a square matrix, got shape {A.shape}")
    n = A.shape[0]
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    norm = np.linalg.norm(A)
    if n == 1:
        return EigenResult(A.diagonal().copy(), V, 0)
    rounds = _round_robin(n)

    offdiag = ~np.eye(n, dtype=bool)

    def off(M):
        # direct sum over off-diagonal entries; subtracting the diagonal from the
        # full norm would cancel catastrophically near convergence
        return float(np.linalg.norm(M[offdiag]))

    sweeps = 0
    while off(A) > tol * norm:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps; "
                                   f"off-diagonal norm {off(A):.3e}")
        for P, Q in rounds:
            apq = A[P, Q]
            app = A[P, P]
            aqq = A[Q, Q]
            nz = apq != 0.0
            c = np.ones_like(apq)
            s = np.zeros_like(apq)
            if nz.any():
                with np.errstate(over="ignore"):
                    tau = (aqq[nz] - app[nz]) / (2.0 * apq[nz])
                sgn = np.where(tau >= 0.0, 1.0, -1.0)
                # for huge |tau| use t ~ 1/(2 tau); avoids overflow in tau^2
                big = np.abs(tau) > 1e150
                tau_s = np.where(big, 1.0, tau)
                t = np.where(big, 0.5 / np.where(big, tau, 1.0),
                             sgn / (np.abs(tau_s) + np.sqrt(1.0 + tau_s * tau_s)))
                c[nz] = 1.0 / np.sqrt(1.0 + t * t)
                s[nz] = t * c[nz]
            rp, rq = A[P, :].copy(), A[Q, :].copy()
            A[P, :] = c[:, None] * rp - s[:, None] * rq
            A[Q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = A[:, P].copy(), A[:, Q].copy()
            A[:, P] = cp * c - cq * s
            A[:, Q] = cp * s + cq * c
            vp, vq = V[:, P].copy(), V[:, Q].copy()
            V[:, P] = vp * c - vq * s
            V[:, Q] = vp * s + vq * c
        sweeps += 1
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    w, V = w[order], V[:, order]
    # deterministic sign: largest-magnitude component of each vector positive
    flip = V[np.argmax(np.abs(V), axis=0), np.arange(n)] < 0
    V[:, flip] *= -1.0
    return EigenResult(w, V, sweeps)


# --- Cholesky solves ----------------------------------------------------------

def cholesky_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b for symmetric positive definite a."""
    L = np.linalg.cholesky(a)
    y = solve_triangular(L, b, lower=True)
    return solve_triangular(L.T, y, lower=False)


# --- PCA ------------------------------------------------------------------------

@dataclass
class PcaProjection:
    mean: np.ndarray
    components: np.ndarray  # (p, dim), rows orthonormal
    explained_variance: np.ndarray

    def transform(self, data) -> np.ndarray:
        return (np.asarray(data, dtype=np.float64) - self.mean) @ self.components.T


def pca_fit(data, p: int | None = None) -> PcaProjection:
    X = np.asarray(data, dtype=np.float64)
    n, dim = X.shape
    if n < 2:
        raise ValueError("PCA needs at least two samples")
    p = dim if p is None else min(p, dim)
    mu = X.mean(axis=0)
    Z = X - mu
    cov = Z.T @ Z / (n - 1)
    eig = eigh_symmetric(cov)
    order = np.argsort(-eig.eigenvalues, kind="stable")[:p]
    var = np.clip(eig.eigenvalues[order], 0.0, None)
    return PcaProjection(mu, eig.eigenvectors[:, order].T.copy(), var)


# --- ridge regression -------------------------------------------------------------

def default_ridge_penalty(features) -> float:
    X = np.asarray(features, dtype=np.float64)
    Z = X - X.mean(axis=0)
    return 1e-3 * float(np.trace(Z.T @ Z)) / X.shape[1]


def ridge_r2(features, target, penalty: float | None = None) -> float:
    """In-sample squared multiple correlation of ``target`` on ``features`` under a ridge fit.

    Features and target are centred (free intercept). The result is
    clamped to [0, 1 - 1e-12].
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64).ravel()
    if X.ndim == 1:
        X = X[:, None]
    n, q = X.shape
    if n <= q:
        raise ValueError(f"ridge_r2 needs more samples than features (n={n}, q={q})")
    yc = y - y.mean()
    sst = float(yc @ yc)
    if sst <= 0.0:
        raise DegenerateTargetError("target has zero variance")
    Z = X - X.mean(axis=0)
    lam = default_ridge_penalty(X) if penalty is None else float(penalty)
    if lam <= 0.0:
        raise ValueError("ridge penalty must be positive")
    beta = cholesky_solve(Z.T @ Z + lam * np.eye(q), Z.T @ yc)
    resid = yc - Z @ beta
    r2 = 1.0 - float(resid @ resid) / sst
    return min(max(r2, 0.0), 1.0 - 1e-12)


# --- Mahalanobis / Mardia ---------------------------------------------------------

def _whitened(data) -> np.ndarray:
    """Centred data mapped through the inverse Cholesky factor of the MLE covariance.

    Rows w_i satisfy w_i . w_j = (x_i - mean)^T S^-1 (x_j - mean).
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need n > p for a sample covariance (n={n}, p={p})")
    Z = X - X.mean(axis=0)
    S = Z.T @ Z / n
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * float(np.trace(S)) / p
        try:
            if ridge <= 0.0:
                raise np.linalg.LinAlgError
            L = np.linalg.cholesky(S + ridge * np.eye(p))
        except np.linalg.LinAlgError as exc:
            raise SingularityError("sample covariance is singular even after ridge") from exc
    return solve_triangular(L, Z.T, lower=True).T


def mahalanobis_sq(data) -> np.ndarray:
    """n x n matrix with entries (x_i - mean)^T S^-1 (x_j - mean), S the MLE covariance."""
    W = _whitened(data)
    return W @ W.T


def mardia_classical(data) -> float:
    """Mardia's b_{2,p}: mean of squared diagonal Mahalanobis forms."""
    W = _whitened(data)
    dii = np.einsum("ij,ij->i", W, W)
    return float(np.mean(dii * dii))


def mardia_pairwise(data) -> float:
    """N^-1 * sum over all ordered pairs of the squared cross forms.

    With the MLE covariance this equals N * p for any data of full rank.
    """
    W = _whitened(data)
    G = W @ W.T
    return float(np.sum(G * G)) / W.shape[0]


def normalised_kurtosis(b2p: float, p: int) -> float:
    return b2p / (p * (p + 2))
