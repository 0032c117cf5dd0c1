"""Lie-Trotter composition of the sub-flows and the exponential Euler
reference solver.

One splitting step applies the diffusion flow, then the drift flow, then the
heat semigroup (rightmost factor first, composition written as left
multiplication).  The reference solver is a different scheme on purpose:
self-convergence of the splitting could hide a wrong limit, cross-method
agreement cannot.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .flows import (
    DiffusionSpec,
    DriftSpec,
    drift_flow_coeffs,
    stochastic_flow_coeffs,
)
from .noise import CovarianceSpec, NoisePath, derive_seed
from .spectral import OperatorSpec, SpectralField, analysis_matrix, synthesis_matrix

__all__ = [
    "TimeGrid",
    "SchemeConfig",
    "make_initial",
    "lie_trotter_step",
    "run_trajectory",
    "reference_trajectory",
    "bridge_rng_for_seed",
]

INITIAL_PRESETS = ("decay3", "zero")

# seed tag for the bridge stream of non-exact multiplicative flows
_BRIDGE_TAG = 97


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid over [0, horizon] with the given number of steps."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ValueError("steps must be a positive integer")

    @property
    def h(self) -> float:
        return self.horizon / self.steps


def make_initial(preset: str, mode_count: int) -> SpectralField:
    """Named deterministic initial states.

    decay3 has coefficients i^-3, which keeps the state in the domain of the
    generator (sum lam_i^2 c_i^2 < infinity), as the one-step error analysis
    requires.
    """
    if preset == "decay3":
        i = np.arange(1, mode_count + 1, dtype=np.float64)
        return SpectralField(i ** -3.0)
    if preset == "zero":
        return SpectralField(np.zeros(mode_count))
    raise ValueError(f"unknown initial-condition preset {preset!r}")


@dataclass(frozen=True)
class SchemeConfig:
    """Full problem instance: linear part, noise covariance, nonlinearities,
    time grid, and the deterministic initial state."""

    operator: OperatorSpec
    covariance: CovarianceSpec
    drift: DriftSpec
    diffusion: DiffusionSpec
    grid: TimeGrid
    initial: SpectralField
    initial_preset: str = "decay3"
    drift_substeps: int = 16
    stochastic_substeps: int = 16

    def __post_init__(self):
        m = self.operator.mode_count
        if self.covariance.mode_count != m or self.initial.mode_count != m:
            raise ValueError("operator, covariance, and initial mode counts disagree")
        if self.drift_substeps < 1 or self.stochastic_substeps < 1:
            raise ValueError("substep budgets must be positive")

    @property
    def mode_count(self) -> int:
        return self.operator.mode_count

    def needs_bridge_rng(self) -> bool:
        return not self.diffusion.has_exact_flow(self.covariance)

    def with_steps(self, steps: int) -> "SchemeConfig":
        return dataclasses.replace(self, grid=TimeGrid(self.grid.horizon, steps))

    def with_modes(self, mode_count: int) -> "SchemeConfig":
        """Rebuild the instance at a different truncation (same preset)."""
        if self.operator.family != "dirichlet":
            raise ValueError("mode doubling is defined for the Dirichlet preset only")
        return dataclasses.replace(
            self,
            operator=OperatorSpec.dirichlet(mode_count),
            covariance=CovarianceSpec(
                self.covariance.decay_rate, self.covariance.amplitude, mode_count
            ),
            initial=make_initial(self.initial_preset, mode_count),
        )


def lie_trotter_coeffs(cfg: SchemeConfig, coeffs: np.ndarray, dW: np.ndarray,
                       h: float, decay: np.ndarray,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    """One splitting step on raw coefficient rows; decay = exp(-lam * h)."""
    c = stochastic_flow_coeffs(cfg.diffusion, cfg.covariance, coeffs, dW, h,
                               cfg.stochastic_substeps, rng)
    c = drift_flow_coeffs(cfg.drift, c, h, cfg.drift_substeps)
    return decay * c


def lie_trotter_step(cfg: SchemeConfig, u: SpectralField, dW: np.ndarray,
                     h: float, rng: np.random.Generator | None = None) -> SpectralField:
    """One step of the splitting scheme: diffusion flow, drift flow, then the
    heat semigroup applied to the result."""
    if not h > 0.0:
        raise ValueError("h must be positive")
    dW = np.asarray(dW, dtype=np.float64)
    if dW.shape != (cfg.mode_count,) or u.mode_count != cfg.mode_count:
        raise ValueError("increment or state dimension does not match the config")
    decay = np.exp(-cfg.operator.eigenvalues * h)
    return SpectralField(lie_trotter_coeffs(cfg, u.coefficients, dW, float(h), decay, rng))


def splitting_trajectory_coeffs(cfg: SchemeConfig, c0: np.ndarray,
                                increments: np.ndarray, h: float,
                                rng: np.random.Generator | None = None) -> np.ndarray:
    """Fold the splitting step over increments of shape (steps, ..., modes)."""
    decay = np.exp(-cfg.operator.eigenvalues * h)
    c = np.broadcast_to(c0, increments.shape[1:]).copy()
    for k in range(increments.shape[0]):
        c = lie_trotter_coeffs(cfg, c, increments[k], h, decay, rng)
    return c


def reference_trajectory_coeffs(cfg: SchemeConfig, c0: np.ndarray,
                                increments: np.ndarray, dt: float,
                                on_state=None) -> np.ndarray:
    """Exponential Euler-Maruyama fold over increments of shape
    (steps, ..., modes); optionally reports each post-step state."""
    m = cfg.mode_count
    decay = np.exp(-cfg.operator.eigenvalues * dt)
    syn_t = synthesis_matrix(m, m).T
    ana = analysis_matrix(m)
    drift, diff = cfg.drift, cfg.diffusion
    linear_rate = dt * drift.rate if drift.kind == "linear" else None
    saturating_scale = dt * drift.scale if drift.kind == "saturating" else None
    additive = diff.kind == "additive"
    multiplicative = diff.kind == "linear_multiplicative"
    needs_grid = saturating_scale is not None or multiplicative

    c = np.broadcast_to(c0, increments.shape[1:]).copy()
    for k in range(increments.shape[0]):
        dW = increments[k]
        acc = c
        if linear_rate is not None:
            acc = acc + linear_rate * c
        if additive:
            acc = acc + diff.sigma * dW
        if needs_grid:
            u = c @ syn_t
            pw = 0.0
            if saturating_scale is not None:
                pw = saturating_scale * (u / (1.0 + u * u))
            if multiplicative:
                pw = pw + diff.sigma * (u * (dW @ syn_t))
            acc = acc + pw @ ana
        c = decay * acc
        if on_state is not None:
            on_state(k, c)
    return c


def _check_path(cfg: SchemeConfig, path: NoisePath) -> None:
    if path.mode_count != cfg.mode_count:
        raise ValueError("path mode count does not match the config")
    if not math.isclose(path.n_fine * path.dt_fine, cfg.grid.horizon,
                        rel_tol=1e-9, abs_tol=0.0):
        raise ValueError("path does not span the configured horizon")


def bridge_rng_for_seed(path_seed: int) -> np.random.Generator:
    """Stream for the bridge refinement of non-exact multiplicative flows,
    derived from the driving path's seed so trajectories stay reproducible."""
    return np.random.default_rng(derive_seed(path_seed, _BRIDGE_TAG))


def _bridge_rng(cfg: SchemeConfig, path: NoisePath) -> np.random.Generator | None:
    if cfg.needs_bridge_rng():
        return bridge_rng_for_seed(path.seed)
    return None


def run_trajectory(cfg: SchemeConfig, path: NoisePath) -> SpectralField:
    """March the splitting scheme over the path's increments from the
    configured initial state; returns the state at the horizon.

    The path must already be at the grid resolution -- callers coarsen a
    shared fine path first so that errors against the reference are measured
    on the same Brownian motion.
    """
    _check_path(cfg, path)
    if path.n_fine != cfg.grid.steps:
        raise ValueError(
            f"path resolution {path.n_fine} does not match the grid ({cfg.grid.steps})"
        )
    inc = np.ascontiguousarray(path.increments.T)
    c = splitting_trajectory_coeffs(cfg, cfg.initial.coefficients, inc,
                                    cfg.grid.h, _bridge_rng(cfg, path))
    return SpectralField(c)


def reference_trajectory(cfg: SchemeConfig, path: NoisePath) -> SpectralField:
    """Exponential Euler-Maruyama at the path's own (finest) resolution; the
    cross-method stand-in for the exact solution in all error measurements."""
    _check_path(cfg, path)
    inc = np.ascontiguousarray(path.increments.T)
    c = reference_trajectory_coeffs(cfg, cfg.initial.coefficients, inc, path.dt_fine)
    return SpectralField(c)
