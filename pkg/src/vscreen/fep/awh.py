"""Flat-histogram adaptive biasing over discrete alchemical states.

The sampler walks jointly over a 1D coordinate ``x`` and a state index
``lam``. Every visit lowers the bias of the current state by ``gamma``; once
the state histogram is flat to within 80 %, ``gamma`` is halved and the
histogram reset. Once halving would push ``gamma`` below ``n_states / t``
the schedule switches to ``gamma = n_states / t`` so later samples keep
refining the bias instead of freezing early noise in. At convergence
``exp(g)`` cancels each state's partition function, so bias differences are
free-energy differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

GAMMA_INITIAL = 1.0
GAMMA_FINAL = 1e-4
FLATNESS = 0.8
CHECK_INTERVAL = 100
BURN_IN = 1000
TUNE_INTERVAL = 100
ACCEPT_LO = 0.3
ACCEPT_HI = 0.5
MAX_STAGES = 64


class NonFiniteEnergy(ValueError):
    pass


@dataclass(frozen=True)
class AlchemicalModel:
    """States ``u_l(x) = 0.5 * k_l * (x - mu_l)**2 + c_l`` in kT units."""

    stiffness: tuple[float, ...]
    centers: tuple[float, ...] = ()
    offsets: tuple[float, ...] = ()

    def __post_init__(self):
        n = len(self.stiffness)
        if n < 2:
            raise ValueError("an alchemical model needs at least two states")
        centers = tuple(self.centers) or (0.0,) * n
        offsets = tuple(self.offsets) or (0.0,) * n
        if len(centers) != n or len(offsets) != n:
            raise ValueError("stiffness, centers and offsets must have equal length")
        object.__setattr__(self, "stiffness", tuple(float(k) for k in self.stiffness))
        object.__setattr__(self, "centers", tuple(float(c) for c in centers))
        object.__setattr__(self, "offsets", tuple(float(c) for c in offsets))

    @classmethod
    def harmonic(cls, stiffness) -> "AlchemicalModel":
        return cls(tuple(stiffness))

    @classmethod
    def shifted_wells(cls, offsets, centers=None, stiffness: float = 1.0) -> "AlchemicalModel":
        offsets = tuple(offsets)
        return cls((stiffness,) * len(offsets), tuple(centers) if centers is not None else (), offsets)

    @property
    def n_states(self) -> int:
        return len(self.stiffness)

    @property
    def last(self) -> int:
        return self.n_states - 1

    def energy(self, state: int, x: float) -> float:
        return 0.5 * self.stiffness[state] * (x - self.centers[state]) ** 2 + self.offsets[state]

    def free_energy(self, state: int) -> float:
        """``-ln Z`` up to the state-independent ``-0.5 ln(2 pi)``."""
        return self.offsets[state] + 0.5 * math.log(self.stiffness[state])

    @property
    def exact_delta_f(self) -> float:
        return self.free_energy(self.last) - self.free_energy(0)

    def reversed(self) -> "AlchemicalModel":
        return AlchemicalModel(self.stiffness[::-1], self.centers[::-1], self.offsets[::-1])

    def _check(self) -> None:
        params = self.stiffness + self.centers + self.offsets
        if not all(math.isfinite(v) for v in params) or any(k <= 0 for k in self.stiffness):
            raise NonFiniteEnergy("model energies must be finite with positive stiffness")


@dataclass
class AwhResult:
    delta_f: float
    bias: np.ndarray
    bias_history: list[np.ndarray] = field(default_factory=list)
    flatness_history: list[float] = field(default_factory=list)
    converged: bool = False
    steps_used: int = 0
    move_width: float = 1.0


@numba.njit(cache=True)
def _kernel(k, mu, c, n_steps, burn_in, move_u, gauss, accept_u,
            gamma0, gamma_min, flat_threshold, check_interval, tune_interval):
    n_states = k.shape[0]
    g = np.zeros(n_states)
    hist = np.zeros(n_states)
    max_stages = MAX_STAGES
    snapshots = np.zeros((max_stages, n_states))
    flatness = np.zeros(max_stages)
    n_stages = 0
    gamma = gamma0
    inverse_time = False
    x = mu[0]
    lam = 0
    width = 1.0 / math.sqrt(k[0])
    tried = 0
    accepted = 0
    status = 0  # 0 running out of steps, 1 converged, 2 non-finite
    used = 0
    total = burn_in + n_steps
    for step in range(total):
        used = step + 1
        u_cur = 0.5 * k[lam] * (x - mu[lam]) ** 2 + c[lam]
        r = move_u[step]
        if r < 0.5:
            x_new = x + width * gauss[step]
            u_new = 0.5 * k[lam] * (x_new - mu[lam]) ** 2 + c[lam]
            if not math.isfinite(u_new):
                status = 2
                break
            tried += 1
            d = u_new - u_cur
            if d <= 0.0 or accept_u[step] < math.exp(-d):
                x = x_new
                accepted += 1
        else:
            new_lam = lam - 1 if r < 0.75 else lam + 1
            if 0 <= new_lam < n_states:
                u_new = 0.5 * k[new_lam] * (x - mu[new_lam]) ** 2 + c[new_lam]
                if not math.isfinite(u_new):
                    status = 2
                    break
                d = u_new - u_cur - (g[new_lam] - g[lam])
                if d <= 0.0 or accept_u[step] < math.exp(-d):
                    lam = new_lam

        if step < burn_in:
            if (step + 1) % tune_interval == 0 and tried > 0:
                rate = accepted / tried
                if rate < ACCEPT_LO:
                    width *= 0.8
                elif rate > ACCEPT_HI:
                    width *= 1.25
                tried = 0
                accepted = 0
            continue

        t = step - burn_in + 1
        if inverse_time:
            gamma = n_states / t
        g[lam] -= gamma
        hist[lam] += 1.0
        if inverse_time:
            if gamma < gamma_min:
                status = 1
                break
        elif t % check_interval == 0:
            lo = hist.min()
            mean = hist.mean()
            if lo > 0.0 and lo >= flat_threshold * mean:
                if n_stages < max_stages:
                    snapshots[n_stages, :] = g
                    flatness[n_stages] = lo / mean
                n_stages += 1
                gamma *= 0.5
                hist[:] = 0.0
                if gamma < n_states / t:
                    inverse_time = True
                elif gamma < gamma_min:
                    status = 1
                    break
    n_stages = min(n_stages, max_stages)
    if n_stages < max_stages:
        snapshots[n_stages, :] = g
    return g, snapshots, flatness, n_stages, status, used, width


def awh_run(model: AlchemicalModel, steps: int, seed: int = 0) -> AwhResult:
    """Run the flat-histogram sampler and return the full bias record."""
    model._check()
    if steps < 10 * model.last * 100:
        raise ValueError(f"need at least {10 * model.last * 100} steps for {model.n_states} states")
    rng = np.random.default_rng(seed)
    total = BURN_IN + steps
    move_u = rng.random(total)
    gauss = rng.standard_normal(total)
    accept_u = rng.random(total)
    g, snaps, flat, n_stages, status, used, width = _kernel(
        np.asarray(model.stiffness), np.asarray(model.centers), np.asarray(model.offsets),
        steps, BURN_IN, move_u, gauss, accept_u,
        GAMMA_INITIAL, GAMMA_FINAL, FLATNESS, CHECK_INTERVAL, TUNE_INTERVAL,
    )
    if status == 2:
        raise NonFiniteEnergy("non-finite energy encountered during sampling")
    return AwhResult(
        delta_f=float(g[-1] - g[0]),
        bias=g.copy(),
        bias_history=[snaps[i].copy() for i in range(min(n_stages + 1, MAX_STAGES))],
        flatness_history=[float(v) for v in flat[:n_stages]],
        converged=status == 1,
        steps_used=int(used),
        move_width=float(width),
    )


def awh_estimate(model: AlchemicalModel, steps: int, seed: int = 0) -> tuple[float, list[np.ndarray]]:
    """Free-energy difference between the last and first state, plus the bias history."""
    result = awh_run(model, steps, seed)
    return result.delta_f, result.bias_history
