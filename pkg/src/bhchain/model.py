"""Classical Bose-Hubbard chain: parameters, phase-space states, Hamiltonian.

Canonical pair per site is ``(P_j, Q_j)`` with the action-angle map

    P_j = sqrt(2 I_j) sin(phi_j),   Q_j = sqrt(2 I_j) cos(phi_j)

and the flow convention ``dP/dt = +dH/dQ``, ``dQ/dt = -dH/dP``.  With this
convention the angles advance at ``U I_j - mu`` in the decoupled limit.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Boundary(str, enum.Enum):
    HARD_WALL = "hardwall"
    PERIODIC = "periodic"


class DimensionMismatch(ValueError):
    pass


class NegativeAction(ValueError):
    pass


class AngleSingularity(ValueError):
    """Angle velocity is undefined because some action is (numerically) zero."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ChainParams:
    """Physical and boundary parameters of one chain.

    ``J`` sets the unit of time, ``U`` is the rescaled on-site repulsion and
    ``norm`` is the conserved total action (1 unless rescaled).
    """

    L: int
    U: float
    mu: float = 0.0
    J: float = 1.0
    boundary: Boundary = Boundary.HARD_WALL
    norm: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L}")
        object.__setattr__(self, "L", int(self.L))
        for name in ("J", "U", "mu", "norm"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.J < 0:
            raise ValueError("J must be >= 0")
        if self.norm <= 0:
            raise ValueError("norm must be > 0")

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    def bonds(self) -> np.ndarray:
        """Nearest-neighbour bonds as an (nb, 2) array of 0-based site pairs."""
        left = np.arange(self.L - 1)
        b = np.stack([left, left + 1], axis=1)
        if self.periodic:
            b = np.vstack([b, [[self.L - 1, 0]]])
        return b

    def replace(self, **changes) -> "ChainParams":
        d = dict(L=self.L, U=self.U, mu=self.mu, J=self.J,
                 boundary=self.boundary, norm=self.norm)
        d.update(changes)
        return ChainParams(**d)

    def to_dict(self) -> dict:
        return dict(L=self.L, U=self.U, mu=self.mu, J=self.J,
                    boundary=self.boundary.value, norm=self.norm)


@dataclass(frozen=True)
class PQState:
    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        P, Q = _frozen(self.P), _frozen(self.Q)
        if P.ndim != 1 or P.shape != Q.shape:
            raise DimensionMismatch(f"P{P.shape} and Q{Q.shape} must be equal 1-d")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise ValueError("non-finite phase-space coordinate")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)

    @property
    def L(self) -> int:
        return self.P.size

    def to_vector(self) -> np.ndarray:
        """Flat ``[P_1..P_L, Q_1..Q_L]`` layout used by the integrators."""
        return np.concatenate([self.P, self.Q])

    @classmethod
    def from_vector(cls, y) -> "PQState":
        y = np.asarray(y, dtype=float)
        L = y.size // 2
        return cls(y[:L], y[L:2 * L])


@dataclass(frozen=True)
class ActionAngleState:
    I: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        I = _frozen(self.I)
        phi = np.mod(np.array(self.phi, dtype=float), 2 * np.pi)
        phi.setflags(write=False)
        if I.ndim != 1 or I.shape != phi.shape:
            raise DimensionMismatch(f"I{I.shape} and phi{phi.shape} must be equal 1-d")
        if np.any(I < 0):
            raise NegativeAction(f"actions must be >= 0, got min {I.min()}")
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "phi", phi)

    @property
    def L(self) -> int:
        return self.I.size


@dataclass(frozen=True)
class Trajectory:
    """Time-sampled orbit with energy and constraint diagnostics.

    ``states`` has shape (n_samples, 2L) in the flat ``[P, Q]`` layout.
    """

    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    constraint: np.ndarray
    params: ChainParams = field(repr=False)

    def __len__(self):
        return self.times.size

    @property
    def P(self) -> np.ndarray:
        return self.states[:, : self.params.L]

    @property
    def Q(self) -> np.ndarray:
        return self.states[:, self.params.L:]

    @property
    def actions(self) -> np.ndarray:
        return 0.5 * (self.P ** 2 + self.Q ** 2)

    @property
    def angles(self) -> np.ndarray:
        return np.mod(np.arctan2(self.P, self.Q), 2 * np.pi)

    def state(self, k: int) -> PQState:
        return PQState.from_vector(self.states[k])


def _check_dims(L: int, params: ChainParams):
    if L != params.L:
        raise DimensionMismatch(f"state has {L} sites, params.L = {params.L}")


def _neighbour_sum(x: np.ndarray, periodic: bool) -> np.ndarray:
    """x_{j-1} + x_{j+1} along the last axis with hard-wall or ring closure."""
    if periodic:
        return np.roll(x, 1, axis=-1) + np.roll(x, -1, axis=-1)
    s = np.zeros_like(x)
    s[..., 1:] += x[..., :-1]
    s[..., :-1] += x[..., 1:]
    return s


def hamiltonian_pq(state: PQState, params: ChainParams) -> float:
    _check_dims(state.L, params)
    P, Q = state.P, state.Q
    b = params.bonds()
    hop = -params.J * np.sum(Q[b[:, 0]] * Q[b[:, 1]] + P[b[:, 0]] * P[b[:, 1]])
    r2 = P ** 2 + Q ** 2
    return float(hop + np.sum(params.U / 8.0 * r2 ** 2 - params.mu / 2.0 * r2))


def energy_series(states: np.ndarray, params: ChainParams) -> np.ndarray:
    """Vectorised Hamiltonian over an (n, 2L) array of flat states."""
    L = params.L
    P, Q = states[:, :L], states[:, L:2 * L]
    b = params.bonds()
    hop = -params.J * np.sum(Q[:, b[:, 0]] * Q[:, b[:, 1]] + P[:, b[:, 0]] * P[:, b[:, 1]], axis=1)
    r2 = P ** 2 + Q ** 2
    return hop + np.sum(params.U / 8.0 * r2 ** 2 - params.mu / 2.0 * r2, axis=1)


def hamiltonian_action_angle(state: ActionAngleState, params: ChainParams) -> float:
    """Integrable part ``H0(I)`` plus ``J H1(I, phi)``."""
    _check_dims(state.L, params)
    I, phi = state.I, state.phi
    b = params.bonds()
    h0 = np.sum(params.U / 2.0 * I ** 2 - params.mu * I)
    h1 = -2.0 * np.sum(np.sqrt(I[b[:, 0]] * I[b[:, 1]]) * np.cos(phi[b[:, 0]] - phi[b[:, 1]]))
    return float(h0 + params.J * h1)


def eom_pq(state: PQState, params: ChainParams) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dP/dt, dQ/dt)``."""
    _check_dims(state.L, params)
    P, Q = state.P, state.Q
    w = params.U / 2.0 * (P ** 2 + Q ** 2) - params.mu
    dP = -params.J * _neighbour_sum(Q, params.periodic) + Q * w
    dQ = params.J * _neighbour_sum(P, params.periodic) - P * w
    return dP, dQ


def eom_action_angle(state: ActionAngleState, params: ChainParams,
                     eps_I: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dI/dt, dphi/dt)``.

    Raises AngleSingularity when any action is at or below ``eps_I``: the
    angle velocity divides by ``sqrt(I_j)``, so such points must be handled
    in (P, Q) coordinates.
    """
    _check_dims(state.L, params)
    I, phi = state.I, state.phi
    if np.any(I <= eps_I):
        raise AngleSingularity(f"action below floor {eps_I}: min I = {I.min()}")
    a = np.sqrt(I)
    dI = np.zeros(params.L)
    dphi = -params.mu + params.U * I
    for i, k in params.bonds():
        # bond (i, k) contributes symmetrically to both endpoints
        s = np.sin(phi[k] - phi[i])
        c = np.cos(phi[i] - phi[k])
        dI[i] += 2.0 * params.J * a[i] * a[k] * s
        dI[k] -= 2.0 * params.J * a[i] * a[k] * s
        dphi[i] -= params.J * a[k] / a[i] * c
        dphi[k] -= params.J * a[i] / a[k] * c
    return dI, dphi


def constraint_value(state: PQState) -> float:
    return float(0.5 * np.sum(state.P ** 2 + state.Q ** 2))


def pq_to_action_angle(state: PQState) -> ActionAngleState:
    """Map to actions and angles; the angle of an empty site is set to 0."""
    I = 0.5 * (state.P ** 2 + state.Q ** 2)
    phi = np.where(I > 0, np.arctan2(state.P, state.Q), 0.0)
    return ActionAngleState(I, phi)


def action_angle_to_pq(state: ActionAngleState) -> PQState:
    r = np.sqrt(2.0 * state.I)
    return PQState(r * np.sin(state.phi), r * np.cos(state.phi))
