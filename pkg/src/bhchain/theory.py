"""Closed-form predictions for the chain and Monte Carlo oracles for them.

Sites are numbered 1..L.  Reduced matrices act on the first L-1 actions
(the last one is eliminated through the constraint) and are indexed
0..L-2 as numpy arrays.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .model import ChainParams, NegativeAction

RESONANCE_EPS = 1e-6
NORM_RAW = "raw: <<dI_i/dt dI_j/dt>> over uniform angles"
NORM_A = ("a-variables: <<da_i/dt da_j/dt>> / J^2 with a = sqrt(I), "
          "equal to the raw average divided by 4 J^2 sqrt(I_i I_j)")
NORM_LANGEVIN = "a-variables: g sigma^2 g^T with g from the reduced Langevin matrix (includes J^2)"


class ResonanceDivergence(ArithmeticError):
    pass


class BranchCrossing(ArithmeticError):
    pass


def _actions(I) -> np.ndarray:
    I = np.asarray(I, dtype=float)
    if I.ndim != 1:
        raise ValueError("actions must be a 1-d sequence")
    if np.any(I < 0):
        raise NegativeAction(f"actions must be >= 0, got min {I.min()}")
    return I


def _neighbour(I, j, params, step):
    """Action of site ``j + step`` (1-based) or None past a hard wall."""
    k = j + step
    if 1 <= k <= params.L:
        return I[k - 1]
    if params.periodic:
        return I[(k - 1) % params.L]
    return None


def _gap(x, y, params, j):
    d = x - y
    if abs(d) < RESONANCE_EPS * params.norm:
        raise ResonanceDivergence(f"1:1 resonance at site {j}: |{x} - {y}| < {RESONANCE_EPS * params.norm}")
    return d


def perturb_coeff_h2(I, j: int, params: ChainParams) -> float:
    """Second-order coefficient of ``cos(phi_j - phi_{j+1})``.

    ``h2_j = -(2 J^2 / U) I_j I_{j+1} / (I_j - I_{j+1})^2``; zero past a hard wall.

    >>> perturb_coeff_h2([0.5, 0.25], 1, ChainParams(L=2, U=2.0))
    -2.0
    """
    I = _actions(I)
    if params.U == 0:
        raise ValueError("the expansion is in J/U and needs U != 0")
    b = _neighbour(I, j, params, +1)
    a = I[j - 1]
    if b is None:
        return 0.0
    d = _gap(a, b, params, j)
    return float(-2.0 * params.J ** 2 / params.U * a * b / d ** 2)


def perturb_coeff_h2tilde(I, j: int, params: ChainParams) -> float:
    """Second-order coefficient of ``cos(phi_{j-1} - 2 phi_j + phi_{j+1})``."""
    I = _actions(I)
    if params.U == 0:
        raise ValueError("the expansion is in J/U and needs U != 0")
    lo = _neighbour(I, j, params, -1)
    hi = _neighbour(I, j, params, +1)
    if lo is None or hi is None:
        return 0.0
    c = I[j - 1]
    d1 = _gap(c, lo, params, j)
    d2 = _gap(c, hi, params, j)
    bracket = lo ** 2 + 2 * c ** 2 + hi ** 2 - 2 * (lo + hi) * c
    return float(-2.0 * params.J ** 2 / params.U * c * np.sqrt(lo * hi) / (d1 ** 2 * d2 ** 2) * bracket)


@dataclass(frozen=True)
class ResonantPoint:
    I_r: float
    I_0: float
    Phi: float
    U: float
    J: float = 1.0

    def __post_init__(self):
        if not 0 <= self.I_r <= self.I_0:
            raise ValueError(f"need 0 <= I_r <= I_0, got I_r={self.I_r}, I_0={self.I_0}")


def resonant_hamiltonian(p: ResonantPoint) -> float:
    """Pendulum-like normal form near a 1:1 resonance.

    >>> resonant_hamiltonian(ResonantPoint(1.0, 1.0, 0.3, U=2.0))
    4.0
    """
    return float(p.U * p.I_r ** 2 + p.U * p.I_0 * p.I_r
                 - 2.0 * p.J * np.sqrt(p.I_r * (p.I_0 - p.I_r)) * np.cos(p.Phi))


def pendulum_timescale(I_j: float, J: float) -> float:
    """``T = sqrt(I_j) / J``; the proportionality constant is taken as 1."""
    if not (I_j > 0 and J > 0):
        raise ValueError("need I_j > 0 and J > 0")
    return float(np.sqrt(I_j) / J)


@dataclass
class DiffusionMatrix:
    """Reduced (L-1) x (L-1) diffusion matrix with its normalization tag."""

    entries: np.ndarray
    normalization: str

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def main(self) -> np.ndarray:
        return np.diagonal(self.entries).copy()

    @property
    def upper(self) -> np.ndarray:
        return np.diagonal(self.entries, 1).copy()

    @property
    def lower(self) -> np.ndarray:
        return np.diagonal(self.entries, -1).copy()

    def to_dict(self) -> dict:
        return dict(dim=self.dim, normalization=self.normalization,
                    entries=self.entries.tolist())


def diffusion_matrix_leading(I, params: ChainParams) -> DiffusionMatrix:
    """Leading-order angle-averaged diffusion matrix.

    ``D_nn = (I_{n-1} + I_{n+1}) / 2`` and ``D_{n,n+1} = -sqrt(I_n I_{n+1}) / 2``
    for ``n = 1..L-1``; a missing neighbour contributes nothing (a ring
    supplies ``I_L`` as the left neighbour of site 1).  The values are the
    a-variable averages, see ``NORM_A``.
    """
    I = _actions(I)
    L = params.L
    if I.size != L:
        raise ValueError(f"{I.size} actions for L = {L}")
    D = np.zeros((L - 1, L - 1))
    for n in range(1, L):
        left = _neighbour(I, n, params, -1)
        right = _neighbour(I, n, params, +1)
        D[n - 1, n - 1] = 0.5 * ((left or 0.0) + (right or 0.0))
        if n < L - 1:
            D[n - 1, n] = D[n, n - 1] = -0.5 * np.sqrt(I[n - 1] * I[n])
    return DiffusionMatrix(D, NORM_A)


# --- Monte Carlo angle averages -------------------------------------------

@dataclass
class AngleAverage:
    """Monte Carlo estimate of the angle-averaged products of velocities.

    ``raw`` is ``<<dI_i/dt dI_j/dt>>`` and ``normalized`` the a-variable
    average ``<<da_i/dt da_j/dt>> / J^2`` on the reduced indices; ``*_se``
    are standard errors.
    """

    raw: np.ndarray
    raw_se: np.ndarray
    normalized: np.ndarray
    normalized_se: np.ndarray
    samples: int
    method: str

    def matrix(self) -> DiffusionMatrix:
        return DiffusionMatrix(self.normalized, NORM_A)


CHUNK = 1 << 16
SOBOL_BLOCK = 1 << 18


def _velocities(phi, a, J, periodic):
    """``(dI/dt, da/dt / J)`` for angle samples ``phi`` of shape (n, L)."""
    n, L = phi.shape
    adot = np.zeros((n, L))
    # bond (k, k+1): a_j' gets a_{other} sin(phi_other - phi_j)
    bonds = [(k, k + 1) for k in range(L - 1)]
    if periodic:
        bonds.append((L - 1, 0))
    for i, k in bonds:
        s = np.sin(phi[:, k] - phi[:, i])
        adot[:, i] += a[k] * s
        adot[:, k] -= a[i] * s
    Idot = 2.0 * J * a[None, :] * adot
    return Idot, adot


def _chunk_sums(args):
    """First and second moments of the velocity products over one chunk."""
    I, J, periodic, method, seed, index, n = args
    L = I.size
    a = np.sqrt(I)
    if method == "sobol":
        # velocities depend only on bond angles; on an open chain these are
        # L-1 independent uniform variables, a better fit for low-discrepancy points
        d = L if periodic else L - 1
        eng = qmc.Sobol(d=d, scramble=True, seed=np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,))))
        u = 2 * np.pi * eng.random_base2(int(np.log2(n)))
        if periodic:
            phi = u
        else:
            phi = np.concatenate([np.zeros((n, 1)), np.cumsum(u, axis=1)], axis=1)
    else:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))
        phi = 2 * np.pi * rng.random((n, L))
    Idot, adot = _velocities(phi, a, J, periodic)
    x, y = Idot[:, : L - 1], adot[:, : L - 1]
    return (np.einsum("ni,nj->ij", x, x), np.einsum("ni,nj->ij", x * x, x * x),
            np.einsum("ni,nj->ij", y, y), np.einsum("ni,nj->ij", y * y, y * y), n)


def angle_average_mc(I, params: ChainParams, samples: int = 10 ** 6, seed: int = 0,
                     method: str = "iid", workers: int = 1) -> AngleAverage:
    """Angle average of velocity products by Monte Carlo.

    ``method="iid"`` draws independent uniform angles; the standard error is
    the sample standard deviation over ``sqrt(samples)``.  ``method="sobol"``
    uses independently scrambled Sobol blocks of ``2^18`` points (randomized
    quasi Monte Carlo, still unbiased) and takes the error from the spread
    between blocks; on an open chain the points are placed on the L-1 bond
    angles ``phi_{k+1} - phi_k``, which are independent and uniform.  Samples are drawn in fixed-size chunks seeded by
    ``(seed, chunk)`` and reduced in chunk order, so the result does not
    depend on ``workers``.
    """
    I = _actions(I)
    if I.size != params.L:
        raise ValueError(f"{I.size} actions for L = {params.L}")
    if samples < 10 ** 4:
        raise ValueError("need at least 1e4 samples")
    if method not in ("iid", "sobol"):
        raise ValueError(f"unknown method {method!r}")
    size = CHUNK if method == "iid" else SOBOL_BLOCK
    n_chunks = max(1, int(np.ceil(samples / size)))
    sizes = [size] * n_chunks
    if method == "iid":
        sizes[-1] = samples - size * (n_chunks - 1)
    if method == "sobol" and n_chunks < 2:
        raise ValueError(f"sobol needs at least two blocks (samples > {SOBOL_BLOCK})")
    jobs = [(I, params.J, params.periodic, method, seed, k, sizes[k]) for k in range(n_chunks)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_sums, jobs))
    else:
        parts = [_chunk_sums(j) for j in jobs]
    total = sum(p[4] for p in parts)
    if method == "iid":
        sx = np.zeros_like(parts[0][0])
        sxx, sy, syy = sx.copy(), sx.copy(), sx.copy()
        for p in parts:
            sx += p[0]
            sxx += p[1]
            sy += p[2]
            syy += p[3]
        mx, my = sx / total, sy / total
        se_x = np.sqrt(np.maximum(sxx / total - mx ** 2, 0.0) / (total - 1))
        se_y = np.sqrt(np.maximum(syy / total - my ** 2, 0.0) / (total - 1))
    else:
        bx = np.array([p[0] / p[4] for p in parts])
        by = np.array([p[2] / p[4] for p in parts])
        mx, my = bx.mean(axis=0), by.mean(axis=0)
        se_x = bx.std(axis=0, ddof=1) / np.sqrt(len(parts))
        se_y = by.std(axis=0, ddof=1) / np.sqrt(len(parts))
    return AngleAverage(mx, se_x, my, se_y, int(total), method)


# --- Langevin construction --------------------------------------------------

def langevin_sigma(I, params: ChainParams):
    """Normalized noise correlations of the angle velocities.

    Returns ``(diag, off)`` where ``diag`` is all ones and ``off[i]`` is the
    row-``i`` neighbour correlation
    ``U I_i (2 mu - U I_i) / (J^2 + (mu - U I_i)^2)``.
    """
    I = _actions(I)
    U, mu, J = params.U, params.mu, params.J
    off = U * I * (2 * mu - U * I) / (J ** 2 + (mu - U * I) ** 2)
    return np.ones_like(I), off


def sigma_matrix(I, params: ChainParams, symmetrize: bool = True) -> np.ndarray:
    """Tridiagonal L x L correlation matrix built from ``langevin_sigma``.

    The closed form depends only on the row action, so the raw matrix is not
    symmetric; ``symmetrize`` averages the two neighbour values of each bond.
    """
    diag, off = langevin_sigma(I, params)
    L = diag.size
    S = np.diag(diag)
    for i in range(L - 1):
        if symmetrize:
            S[i, i + 1] = S[i + 1, i] = 0.5 * (off[i] + off[i + 1])
        else:
            S[i, i + 1] = off[i]
            S[i + 1, i] = off[i + 1]
    return S


def langevin_g(I, params: ChainParams) -> np.ndarray:
    """Reduced (L-1) x (L-1) noise matrix: ``g_{i,i+1} = J a_{i+1}``, ``g_{i,i-1} = -J a_{i-1}``."""
    a = np.sqrt(_actions(I))
    n = a.size - 1
    g = np.zeros((n, n))
    for i in range(n):
        if i + 1 < n:
            g[i, i + 1] = params.J * a[i + 1]
        if i >= 1:
            g[i, i - 1] = -params.J * a[i - 1]
    return g


def diffusion_matrix_langevin(I, params: ChainParams, symmetrize: bool = True,
                              sigma: Optional[np.ndarray] = None) -> DiffusionMatrix:
    """``D = g sigma^2 g^T`` on the reduced a-variables.

    ``sigma`` overrides the (L-1) x (L-1) correlation block, e.g. the
    identity for the purely local contribution.
    """
    I = _actions(I)
    if I.size != params.L:
        raise ValueError(f"{I.size} actions for L = {params.L}")
    g = langevin_g(I, params)
    S = sigma_matrix(I, params, symmetrize)[: params.L - 1, : params.L - 1] if sigma is None else np.asarray(sigma)
    return DiffusionMatrix(g @ S @ g.T, NORM_LANGEVIN)


def action_covariance_rate(D: DiffusionMatrix, I) -> np.ndarray:
    """Predicted ``d Cov(I_n, I_m) / dt`` from an a-variable diffusion matrix.

    ``<da_n da_m> = D_nm t / 2`` and ``dI = 2 a da`` give
    ``d Cov(I_n, I_m)/dt = 2 sqrt(I_n I_m) D_nm``.
    """
    a = np.sqrt(_actions(I))[: D.dim]
    return 2.0 * np.outer(a, a) * D.entries


def phidot_correlation(I, params: ChainParams) -> np.ndarray:
    """Exact angle average ``<<phidot_i phidot_{i+1}>> / <<phidot_i^2>>`` per row.

    Entry ``[i, 0]`` pairs site i with i-1, ``[i, 1]`` with i+1 (NaN where
    absent).  Requires all actions positive.
    """
    I = _actions(I)
    if np.any(I <= 0):
        raise ValueError("angle velocities need all actions > 0")
    L = I.size
    w = params.U * I - params.mu
    out = np.full((L, 2), np.nan)
    for i in range(L):
        nb = [i + s for s in (-1, 1) if 0 <= i + s < L]
        den = w[i] ** 2 + params.J ** 2 * sum(I[k] for k in nb) / (2 * I[i])
        for col, s in enumerate((-1, 1)):
            k = i + s
            if 0 <= k < L:
                out[i, col] = (w[i] * w[k] + params.J ** 2 / 2) / den
    return out


def phidot_correlation_mc(I, params: ChainParams, samples: int = 10 ** 6, seed: int = 0) -> np.ndarray:
    """Monte Carlo counterpart of ``phidot_correlation`` (hard wall)."""
    I = _actions(I)
    if np.any(I <= 0):
        raise ValueError("angle velocities need all actions > 0")
    L = I.size
    a = np.sqrt(I)
    rng = np.random.default_rng(seed)
    num = np.zeros((L, 2))
    den = np.zeros(L)
    done = 0
    while done < samples:
        n = min(CHUNK, samples - done)
        phi = rng.uniform(0, 2 * np.pi, (n, L))
        pd = np.tile(params.U * I - params.mu, (n, 1))
        for k in range(L - 1):
            c = np.cos(phi[:, k] - phi[:, k + 1])
            pd[:, k] -= params.J * a[k + 1] / a[k] * c
            pd[:, k + 1] -= params.J * a[k] / a[k + 1] * c
        den += np.sum(pd ** 2, axis=0)
        num[1:, 0] += np.sum(pd[:, 1:] * pd[:, :-1], axis=0)
        num[:-1, 1] += np.sum(pd[:, :-1] * pd[:, 1:], axis=0)
        done += n
    out = num / den[:, None]
    out[0, 0] = np.nan
    out[-1, 1] = np.nan
    return out


# --- zero-hopping limit -------------------------------------------------------

def dnse_homogeneous(I0: float, params: ChainParams, t) -> np.ndarray:
    """Closed-form zero-hopping amplitude ``f(t)`` for initial action ``I0``.

    ``f = sqrt(mu) / sqrt((mu/I0 - U) exp(2 i mu t) + U)``; the square root
    follows the continuous branch of the denominator's phase across the
    (sorted) sample times, starting from the principal branch.  Raises
    BranchCrossing if the denominator passes through zero within the sampled
    time range (this happens only for ``mu / I0 = 2 U``).
    """
    mu, U = params.mu, params.U
    if not (mu > 0 and U >= 0 and I0 > 0):
        raise ValueError("need mu > 0, U >= 0 and I0 > 0")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    order = np.argsort(t, kind="stable")
    A = mu / I0 - U
    z = A * np.exp(2j * mu * t[order]) + U
    # the circle A e^{2 i mu t} + U only reaches zero when A = U, at 2 mu t = pi (mod 2 pi)
    if abs(A - U) <= 1e-12 * (abs(A) + U):
        k = np.ceil((2 * mu * t[order[0]] - np.pi) / (2 * np.pi))
        if (np.pi + 2 * np.pi * k) / (2 * mu) <= t[order[-1]]:
            raise BranchCrossing("denominator passes through zero")
    arg = np.unwrap(np.angle(z))
    root = np.sqrt(np.abs(z)) * np.exp(0.5j * arg)
    f = np.empty_like(root)
    f[order] = np.sqrt(mu) / root
    return f
