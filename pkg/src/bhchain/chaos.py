"""Tangent-space dynamics and Lyapunov exponents of the chain.

The orbit and its tangent vectors are integrated jointly by the compiled
DOP853 kernel, in segments of ``renorm_interval`` between which the tangent
vectors are renormalized (one vector) or re-orthonormalized by QR (spectrum).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _dop853
from .integrate import Status, _STATUS
from .model import ChainParams, PQState, _check_dims, _neighbour_sum, hamiltonian_pq


class LyapunovMode(str, enum.Enum):
    PER_SITE = "per_site"
    MAX_ONLY = "max_only"
    SPECTRUM = "spectrum"


@dataclass
class LyapunovConfig:
    """Settings for a finite-time Lyapunov computation (times in 1/J).

    ``delta0`` only sets the scale of the tangent vectors, and through it the
    absolute tolerance applied to their components (``abs_tol * delta0``);
    the linearised flow itself is scale free.
    """

    t_total: float
    t_transient: float = 10.0
    delta0: float = 1e-9
    renorm_interval: float = 1.0
    mode: LyapunovMode = LyapunovMode.PER_SITE
    seed: int = 0
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    constraint_tol: float = 0.01
    max_steps: int = 100_000_000

    def __post_init__(self):
        self.mode = LyapunovMode(self.mode)
        if not 1e-14 <= self.delta0 <= 1e-6:
            raise ValueError("delta0 must lie in [1e-14, 1e-6]")
        if not self.t_total > self.t_transient > 0:
            raise ValueError("need t_total > t_transient > 0")
        if self.renorm_interval <= 0:
            raise ValueError("renorm_interval must be > 0")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be > 0")

    def to_dict(self) -> dict:
        return dict(t_total=self.t_total, t_transient=self.t_transient, delta0=self.delta0,
                    renorm_interval=self.renorm_interval, mode=self.mode.value, seed=self.seed,
                    rel_tol=self.rel_tol, abs_tol=self.abs_tol)


@dataclass
class LyapunovResult:
    """Finite-time exponents in units of J.

    ``convergence`` holds ``(t, lambda_max(t))`` pairs after the transient;
    ``converged`` is False when the estimate moved by more than 10% over the
    last decade of that series.
    """

    lambda_per_site: Optional[np.ndarray]
    lambda_max: float
    spectrum: Optional[np.ndarray]
    convergence: np.ndarray
    converged: bool
    status: Status
    t_stop: float
    energy: float
    params: ChainParams = field(repr=False)


def variational_rhs(state: PQState, variation: PQState, params: ChainParams) -> PQState:
    """Jacobian of the equations of motion applied to ``variation``."""
    _check_dims(state.L, params)
    _check_dims(variation.L, params)
    P, Q = state.P, state.Q
    dP, dQ = variation.P, variation.Q
    w = params.U / 2.0 * (P ** 2 + Q ** 2) - params.mu
    g = params.U * (P * dP + Q * dQ)
    rP = -params.J * _neighbour_sum(dQ, params.periodic) + dQ * w + Q * g
    rQ = params.J * _neighbour_sum(dP, params.periodic) - dP * w - P * g
    return PQState(rP, rQ)


def _segment_times(cfg: LyapunovConfig) -> np.ndarray:
    n = int(np.ceil(cfg.t_total / cfg.renorm_interval - 1e-9))
    t = np.minimum(np.arange(1, n + 1) * cfg.renorm_interval, cfg.t_total)
    # make sure the transient ends exactly on a renormalization
    t = np.unique(np.append(t, cfg.t_transient))
    return t[t > 0]


def _converged(conv: np.ndarray) -> bool:
    if conv.shape[0] < 2:
        return False
    t, lam = conv[:, 0], conv[:, 1]
    k = int(np.searchsorted(t, t[-1] / 10.0))
    if k >= t.size - 1 and t[0] > t[-1] / 10.0:
        k = 0
    ref = max(abs(lam[-1]), 1e-3)
    return abs(lam[-1] - lam[k]) / ref <= 0.1


def _run(initial: PQState, params: ChainParams, cfg: LyapunovConfig, V0: np.ndarray,
         on_renorm):
    """Drive the joint integration; ``on_renorm(t, V)`` returns the new tangent block."""
    L = params.L
    n2 = 2 * L
    ntan = V0.shape[0]
    y = np.concatenate([initial.to_vector(), V0.ravel()])
    atol = np.full(y.size, cfg.abs_tol)
    atol[n2:] *= cfg.delta0
    empty = np.empty(0)
    t = 0.0
    h = 0.0
    status = _dop853.COMPLETED
    for t_next in _segment_times(cfg):
        status, t, y, _, _, _, _, h, _ = _dop853.integrate(
            y, t, float(t_next), empty, cfg.rel_tol, atol, h,
            params.J, params.U, params.mu, params.periodic, L, ntan,
            params.norm, cfg.constraint_tol, False, cfg.max_steps)
        if status != _dop853.COMPLETED:
            break
        V = y[n2:].reshape(ntan, n2)
        y[n2:] = on_renorm(t, V).ravel()
    return _STATUS[status], t


def _initial_tangent(L: int, cfg: LyapunovConfig) -> np.ndarray:
    """Random vector with equal norm ``delta0 / sqrt(L)`` on every site block."""
    rng = np.random.default_rng(cfg.seed)
    ang = rng.uniform(0.0, 2 * np.pi, L)
    r = cfg.delta0 / np.sqrt(L)
    return np.concatenate([r * np.sin(ang), r * np.cos(ang)])


def lyapunov_per_site(initial: PQState, params: ChainParams, cfg: LyapunovConfig) -> LyapunovResult:
    """Maximal exponent plus per-site exponents from one tangent vector.

    The tangent vector is renormalized to ``delta0`` as a whole every
    ``renorm_interval``.  After the transient the log-stretch ``S`` is
    accumulated, and the site exponent is the growth rate of the site block
    measured from the equipartitioned share ``delta0 / sqrt(L)``::

        lambda_n = (S + log(sqrt(L) * |V_n(T)| / |V(T)|)) / (T - t_transient)

    so ``lambda_n <= lambda_max + log(sqrt(L)) / (T - t_transient)``.
    """
    _check_dims(initial.L, params)
    L = params.L
    V0 = _initial_tangent(L, cfg)[None, :]
    state = dict(S=0.0, conv=[], frac=None)

    def on_renorm(t, V):
        v = V[0]
        nv = np.sqrt(np.dot(v, v))
        if t > cfg.t_transient * (1 + 1e-12):
            state["S"] += np.log(nv / cfg.delta0)
            state["conv"].append((t, state["S"] / (t - cfg.t_transient)))
        state["frac"] = np.sqrt(v[:L] ** 2 + v[L:] ** 2) / nv
        return V * (cfg.delta0 / nv)

    status, t_stop = _run(initial, params, cfg, V0, on_renorm)
    conv = np.array(state["conv"]).reshape(-1, 2)
    # exponents cover the renormalized segments only
    span = conv[-1, 0] - cfg.t_transient if conv.shape[0] else 0.0
    if span <= 0:
        lam_max, per_site = np.nan, np.full(L, np.nan)
    else:
        lam_max = state["S"] / span
        per_site = None
        if cfg.mode is LyapunovMode.PER_SITE:
            with np.errstate(divide="ignore"):
                per_site = (state["S"] + np.log(np.sqrt(L) * state["frac"])) / span
    return LyapunovResult(per_site, float(lam_max), None, conv, _converged(conv), status,
                          float(t_stop), hamiltonian_pq(initial, params), params)


def lyapunov_spectrum(initial: PQState, params: ChainParams, cfg: LyapunovConfig) -> LyapunovResult:
    """Full spectrum of 2L exponents by repeated QR orthonormalization.

    Returned in descending order; ``lambda_max`` is the first entry and
    ``convergence`` tracks it.
    """
    _check_dims(initial.L, params)
    L = params.L
    n2 = 2 * L
    rng = np.random.default_rng(cfg.seed)
    Q0, _ = np.linalg.qr(rng.standard_normal((n2, n2)))
    V0 = cfg.delta0 * Q0.T
    state = dict(S=np.zeros(n2), conv=[])

    def on_renorm(t, V):
        # columns of V.T are the tangent vectors
        Qm, R = np.linalg.qr(V.T)
        d = np.diag(R)
        sign = np.where(d < 0, -1.0, 1.0)
        Qm = Qm * sign
        if t > cfg.t_transient * (1 + 1e-12):
            state["S"] += np.log(np.abs(d) / cfg.delta0)
            state["conv"].append((t, state["S"].max() / (t - cfg.t_transient)))
        return cfg.delta0 * Qm.T

    status, t_stop = _run(initial, params, cfg, V0, on_renorm)
    conv = np.array(state["conv"]).reshape(-1, 2)
    span = conv[-1, 0] - cfg.t_transient if conv.shape[0] else 0.0
    if span <= 0:
        spec = np.full(n2, np.nan)
    else:
        spec = np.sort(state["S"] / span)[::-1]
    return LyapunovResult(None, float(spec[0]), spec, conv, _converged(conv), status,
                          float(t_stop), hamiltonian_pq(initial, params), params)


def lyapunov(initial: PQState, params: ChainParams, cfg: LyapunovConfig) -> LyapunovResult:
    """Dispatch on ``cfg.mode``."""
    if cfg.mode is LyapunovMode.SPECTRUM:
        return lyapunov_spectrum(initial, params, cfg)
    return lyapunov_per_site(initial, params, cfg)
