"""Populations of nearby orbits and their per-site action statistics."""
from __future__ import annotations

import enum
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .integrate import IntegratorConfig, Status, integrate_orbit
from .model import ActionAngleState, ChainParams, PQState, action_angle_to_pq

EMPTY_FLOOR = 1e-12


class Distribution(str, enum.Enum):
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"


class AngleInit(str, enum.Enum):
    FIXED_BASE = "fixed_base"
    UNIFORM_RANDOM = "uniform_random"


class Spread(str, enum.Enum):
    """How the action perturbation scales: ``I(1 + w xi)`` or ``I + w xi``."""
    RELATIVE = "relative"
    ADDITIVE = "additive"


class InfeasibleBase(ValueError):
    pass


class FewerThanTwoMembers(RuntimeError):
    pass


@dataclass
class EnsembleSpec:
    """Sharply peaked initial distribution around ``base``.

    ``width`` is the spread applied to every action (and, for FIXED_BASE, to
    every angle).  Uniform draws are on ``[-width, width]``; Gaussian draws
    have standard deviation ``width``.

    With ``spread=RELATIVE`` an action ``I`` becomes ``I (1 + width xi)``, so
    empty sites stay at ``empty_floor``; ``ADDITIVE`` gives ``I + width xi``
    and populates empty sites at the ``width`` scale.  ``renormalize`` rescales
    every member back onto the constraint sphere.
    """

    base: ActionAngleState
    dist: Distribution = Distribution.GAUSSIAN
    width: float = 1e-3
    count: int = 100
    seed: int = 0
    angle_init: AngleInit = AngleInit.UNIFORM_RANDOM
    empty_floor: float = EMPTY_FLOOR
    spread: Spread = Spread.RELATIVE
    renormalize: bool = True

    def __post_init__(self):
        self.dist = Distribution(self.dist)
        self.angle_init = AngleInit(self.angle_init)
        self.spread = Spread(self.spread)
        if self.empty_floor < 0:
            raise ValueError("empty_floor must be >= 0")
        if not 0 <= self.width <= 0.1:
            raise ValueError("width must lie in [0, 0.1]")
        if self.count < 2:
            raise ValueError("count must be >= 2")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def member_rng(seed: int, k: int) -> np.random.Generator:
    """Independent stream for member ``k``; depends only on ``(seed, k)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(k,))))


def _draw(rng, dist: Distribution, size: int) -> np.ndarray:
    if dist is Distribution.GAUSSIAN:
        return rng.standard_normal(size)
    return rng.uniform(-1.0, 1.0, size)


def sample_member(spec: EnsembleSpec, params: ChainParams, k: int) -> PQState:
    rng = member_rng(spec.seed, k)
    L = params.L
    I0 = np.maximum(spec.base.I, spec.empty_floor)
    xi = _draw(rng, spec.dist, L)
    if spec.spread is Spread.RELATIVE:
        I = I0 * (1.0 + spec.width * xi)
    else:
        I = I0 + spec.width * xi
    I = np.maximum(I, spec.empty_floor)
    if spec.renormalize:
        I *= params.norm / I.sum()
    if spec.angle_init is AngleInit.UNIFORM_RANDOM:
        phi = rng.uniform(0.0, 2 * np.pi, L)
    else:
        phi = spec.base.phi + spec.width * _draw(rng, spec.dist, L)
    return action_angle_to_pq(ActionAngleState(I, phi))


def make_ensemble(spec: EnsembleSpec, params: ChainParams) -> list[PQState]:
    """Draw ``spec.count`` initial states on the constraint sphere.

    Actions are perturbed, clipped at ``spec.empty_floor`` and (by default)
    rescaled to ``params.norm``.  With ``width == 0`` and FIXED_BASE every member is the
    base point (with empty sites lifted to the floor).
    """
    if spec.base.L != params.L:
        raise ValueError(f"base has {spec.base.L} sites, params.L = {params.L}")
    total = spec.base.I.sum()
    if not np.isclose(total, params.norm, rtol=1e-6):
        raise InfeasibleBase(f"base actions sum to {total}, expected {params.norm}")
    return [sample_member(spec, params, k) for k in range(spec.count)]


@dataclass
class VarianceSeries:
    """Ensemble mean and population variance of every action vs time.

    Rows beyond ``valid_until`` are dropped.  ``cov[k]`` is the full L x L
    action covariance at ``times[k]``; ``cov_next[:, n]`` is the covariance
    of ``I_n`` and ``I_{n+1}`` (0-based ``n``).  ``members`` counts the
    orbits still physical at each sample.
    """

    times: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    cov_next: np.ndarray
    members: np.ndarray
    valid_until: float
    cov: Optional[np.ndarray] = None

    @property
    def L(self) -> int:
        return self.mean.shape[1]

    def window(self, t_lo: float, t_hi: float) -> np.ndarray:
        return (self.times >= t_lo) & (self.times <= t_hi)


def action_statistics(times: np.ndarray, actions: np.ndarray, counts: np.ndarray,
                      valid_until: Optional[float] = None) -> VarianceSeries:
    """Two-pass population statistics over members.

    ``actions`` has shape (members, n_times, L) with NaN marking samples a
    member did not reach; ``counts`` is the number of finite members per time.
    """
    mask = np.isfinite(actions[..., 0])
    n = counts.astype(float)[:, None]
    filled = np.where(mask[..., None], actions, 0.0)
    # fixed member order keeps the reduction bit-reproducible
    mean = np.zeros(actions.shape[1:])
    for m in range(actions.shape[0]):
        mean += filled[m]
    mean /= n
    dev = np.where(mask[..., None], actions - mean[None], 0.0)
    var = np.zeros_like(mean)
    cov = np.zeros(mean.shape + mean.shape[-1:])
    for m in range(actions.shape[0]):
        var += dev[m] ** 2
        cov += dev[m][:, :, None] * dev[m][:, None, :]
    var /= n
    cov /= n[..., None]
    cov_next = np.diagonal(cov, offset=1, axis1=1, axis2=2).copy()
    if valid_until is None:
        valid_until = float(times[-1])
    return VarianceSeries(times, mean, var, cov_next, counts.astype(int), float(valid_until), cov)


def _run_member(args):
    state, params, cfg = args
    out = integrate_orbit(state, params, cfg)
    return out.trajectory.actions, out.status, out.t_stop


def default_workers() -> int:
    return int(os.environ.get("BHCHAIN_WORKERS", "1"))


def run_members(states: Sequence[PQState], params: ChainParams, cfg: IntegratorConfig,
                workers: Optional[int] = None):
    """Integrate every member; results are returned in member order."""
    workers = default_workers() if workers is None else workers
    jobs = [(s, params, cfg) for s in states]
    if workers <= 1:
        return [_run_member(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_member, jobs, chunksize=1))


def evolve_ensemble(ens: Sequence[PQState], params: ChainParams, cfg: IntegratorConfig,
                    workers: Optional[int] = None) -> VarianceSeries:
    """Integrate all members and reduce to per-site statistics.

    A member that breaches the constraint drops out of later samples;
    ``valid_until`` is the earliest such breach.  Samples with fewer than two
    physical members are truncated.
    """
    if len(ens) < 2:
        raise FewerThanTwoMembers("an ensemble needs at least two members")
    results = run_members(ens, params, cfg, workers)
    times = cfg.sample_times
    nt = times.size
    acts = np.full((len(ens), nt, params.L), np.nan)
    valid_until = float(times[-1])
    for m, (a, status, t_stop) in enumerate(results):
        acts[m, : a.shape[0]] = a
        if status is not Status.COMPLETED:
            valid_until = min(valid_until, t_stop)
    counts = np.isfinite(acts[..., 0]).sum(axis=0)
    keep = int(np.argmax(counts < 2)) if np.any(counts < 2) else nt
    if keep == 0:
        raise FewerThanTwoMembers("fewer than two members at the first sample")
    return action_statistics(times[:keep], acts[:, :keep], counts[:keep], valid_until)


def filled_base(L: int, fillings: dict, norm: float = 1.0, phi=None) -> ActionAngleState:
    """Base point with the given 1-based ``{site: filling}`` map, rescaled to ``norm``.

    >>> filled_base(4, {2: 1.0}).I
    array([0., 1., 0., 0.])
    """
    I = np.zeros(L)
    for site, v in fillings.items():
        if not 1 <= site <= L:
            raise ValueError(f"site {site} outside 1..{L}")
        I[site - 1] = v
    if I.sum() <= 0:
        raise InfeasibleBase("no filled site")
    I *= norm / I.sum()
    return ActionAngleState(I, np.zeros(L) if phi is None else phi)


def homogeneous_base(L: int, norm: float = 1.0) -> ActionAngleState:
    return ActionAngleState(np.full(L, norm / L), np.zeros(L))
