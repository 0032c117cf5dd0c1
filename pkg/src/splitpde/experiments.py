"""Monte Carlo harness measuring the splitting scheme's error behavior:
strong convergence order, one-step consistency order, paired-trajectory
stability ratios, diffusion-flow increment scaling, and solution-regularity
monitoring.

Samples are processed in fixed-size blocks whose arithmetic does not depend
on the worker count: every sample owns a derived seed, blocks are defined by
sample index alone, and reductions run in index order.  Reports are therefore
bit-identical for one worker and for many.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .flows import flow_increment_samples
from .noise import (
    CovarianceSpec,
    UnsupportedFamilyError,
    _is_power_of_two,
    compute_beta,
    derive_seed,
    sample_path,
)
from .scheme import (
    SchemeConfig,
    bridge_rng_for_seed,
    reference_trajectory_coeffs,
    splitting_trajectory_coeffs,
)

__all__ = [
    "ErrorReport",
    "StabilityReport",
    "RegularityReport",
    "DegenerateFitError",
    "fit_order",
    "local_slopes",
    "converge",
    "consistency",
    "stability",
    "flow_increment",
    "regularity",
]

# samples per processing block; fixed so batched arithmetic is identical for
# any worker count
_BLOCK = 8

# mean-square errors at or below this floor mean the configuration has no
# splitting error to fit (e.g. both nonlinearities zero)
_DEGENERATE_MSE_FLOOR = 1e-24

_TAG_CONVERGE = 11
_TAG_CONSISTENCY = 12
_TAG_STABILITY = 13
_TAG_REGULARITY = 15


class DegenerateFitError(ValueError):
    """Raised when an order fit is requested on vanishing errors."""


def fit_order(hs, rms) -> tuple[float, float]:
    """Least-squares slope of log2(rms) against log2(h), with R^2."""
    h = np.asarray(hs, dtype=np.float64)
    r = np.asarray(rms, dtype=np.float64)
    if h.ndim != 1 or h.shape != r.shape or h.size < 3:
        raise ValueError("need at least 3 matched (h, rms) points")
    if np.any(h <= 0.0) or np.any(np.diff(h) >= 0.0):
        raise ValueError("step sizes must be positive and strictly decreasing")
    if np.any(r <= 0.0):
        raise DegenerateFitError("vanishing error leaves the order undefined")
    x = np.log2(h)
    y = np.log2(r)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 0.0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    return float(slope), float(r2)


def local_slopes(hs, rms) -> np.ndarray:
    """Per-interval log-log slopes; entry 0 repeats the first interval so
    every row of a report carries a finite value."""
    h = np.asarray(hs, dtype=np.float64)
    r = np.asarray(rms, dtype=np.float64)
    out = np.zeros(h.size)
    if h.size >= 2 and np.all(r > 0.0):
        s = np.diff(np.log2(r)) / np.diff(np.log2(h))
        out[1:] = s
        out[0] = s[0]
    return out


@dataclass
class ErrorReport:
    """Mean-square errors over a sweep of step sizes, with the fitted order.

    Orders are fitted on RMS errors, so a mean-square bound of order p shows
    up as a slope of p/2; fitted_order_mean_square carries the doubled value
    to keep the two conventions side by side.
    """

    kind: str
    step_sizes: np.ndarray
    step_counts: np.ndarray
    mse: np.ndarray
    standard_errors: np.ndarray
    samples: int
    seed: int
    beta_expected: float
    predicted_order: float
    fitted_order: float | None
    fit_r2: float | None
    oracle_resolution: int
    flags: tuple[str, ...]

    @property
    def rms(self) -> np.ndarray:
        return np.sqrt(self.mse)

    @property
    def local_slopes(self) -> np.ndarray:
        return local_slopes(self.step_sizes, self.rms)

    @property
    def fitted_order_mean_square(self) -> float | None:
        return None if self.fitted_order is None else 2.0 * self.fitted_order

    @property
    def degenerate(self) -> bool:
        return "degenerate" in self.flags


@dataclass
class StabilityReport:
    """Paired-trajectory mean-square amplification ratios per step count."""

    step_counts: np.ndarray
    step_sizes: np.ndarray
    ratios: np.ndarray
    standard_errors: np.ndarray
    max_ratio: float
    ceiling: float
    samples: int
    seed: int
    perturbation_scale: float
    drift_lipschitz: float
    diffusion_lipschitz: float

    def within_ceiling(self, slack: float = 5.0) -> bool:
        """True when every ratio sits under the analytic ceiling, allowing
        `slack` relative standard errors of Monte Carlo room."""
        rel = np.divide(self.standard_errors, self.ratios,
                        out=np.zeros_like(self.ratios), where=self.ratios > 0)
        return bool(np.all(self.ratios <= self.ceiling * (1.0 + slack * rel)))


@dataclass
class RegularityReport:
    """Supremum over time of the sampled fractional-norm second moment."""

    alpha: float
    times: np.ndarray
    norms: np.ndarray
    sup_norm: float
    samples: int
    seed: int
    mode_count: int
    oracle_resolution: int
    sup_norm_doubled: float | None
    relative_change: float | None


def _beta_expected(cfg: SchemeConfig) -> float:
    try:
        return compute_beta(cfg.covariance, cfg.operator).beta
    except UnsupportedFamilyError:
        return float("nan")


def _blocks(samples: int) -> list[tuple[int, int]]:
    return [(start, min(_BLOCK, samples - start)) for start in range(0, samples, _BLOCK)]


def _run_blocks(fn, tasks, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def _coarsen_tensor(inc: np.ndarray, factor: int) -> np.ndarray:
    """Block-sum a (steps, ..., modes) increment tensor along the time axis
    with the same pairwise tree as noise.coarsen, so per-sample and batched
    coarsening agree bit for bit."""
    if factor == 1:
        return inc
    if _is_power_of_two(factor):
        for _ in range(factor.bit_length() - 1):
            n = inc.shape[0]
            inc = inc.reshape((n // 2, 2) + inc.shape[1:]).sum(axis=1)
    else:
        n = inc.shape[0]
        inc = inc.reshape((n // factor, factor) + inc.shape[1:]).sum(axis=1)
    return inc


def _path_tensor(cov: CovarianceSpec, n: int, dt: float, seeds: list[int]) -> np.ndarray:
    """Stack per-sample paths into a (steps, samples, modes) tensor; each
    sample is drawn exactly as sample_path would draw it."""
    tensor = np.empty((n, len(seeds), cov.mode_count))
    for b, s in enumerate(seeds):
        tensor[:, b, :] = sample_path(cov, n, dt, s).increments.T
    return tensor


def _squared_errors(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return np.sum(d * d, axis=-1)


def _splitting_batch(cfg: SchemeConfig, c0: np.ndarray, inc: np.ndarray, h: float,
                     bridge_seeds: list[int] | None) -> np.ndarray:
    """Splitting trajectories for a block; falls back to per-sample runs when
    the diffusion flow needs its own bridge stream."""
    if bridge_seeds is None:
        return splitting_trajectory_coeffs(cfg, c0, inc, h)
    out = np.empty(inc.shape[1:])
    for b, s in enumerate(bridge_seeds):
        out[b] = splitting_trajectory_coeffs(cfg, c0, inc[:, b, :], h,
                                             bridge_rng_for_seed(s))
    return out


def _converge_block(args) -> np.ndarray:
    cfg, step_counts, reference_multiple, seed, start, count = args
    horizon = cfg.grid.horizon
    n_ref = reference_multiple * max(step_counts)
    dt_ref = horizon / n_ref
    seeds = [derive_seed(seed, _TAG_CONVERGE, start + b) for b in range(count)]
    tensor = _path_tensor(cfg.covariance, n_ref, dt_ref, seeds)
    c0 = cfg.initial.coefficients
    u_ref = reference_trajectory_coeffs(cfg, c0, tensor, dt_ref)

    exact_sums = _is_power_of_two(n_ref) and all(_is_power_of_two(n) for n in step_counts)
    full = _coarsen_tensor(tensor, n_ref)
    bridge_seeds = seeds if cfg.needs_bridge_rng() else None
    errs = np.empty((count, len(step_counts)))
    cur, cur_n = tensor, n_ref
    for j in range(len(step_counts) - 1, -1, -1):
        n = step_counts[j]
        cur = _coarsen_tensor(cur, cur_n // n)
        cur_n = n
        part = _coarsen_tensor(cur, n)
        coupled = (np.array_equal(part, full) if exact_sums
                   else np.allclose(part, full, rtol=1e-12, atol=0.0))
        if not coupled:
            raise RuntimeError(
                "coupling checksum failed: coarse increments do not block-sum "
                "to the fine path"
            )
        c_n = _splitting_batch(cfg, c0, cur, horizon / n, bridge_seeds)
        errs[:, j] = _squared_errors(c_n, u_ref)
    return errs


def _finish_order_report(kind, hs, counts, errs, samples, seed, beta, predicted,
                         oracle_resolution, exact_flow) -> ErrorReport:
    mse = errs.mean(axis=0)
    se = errs.std(axis=0, ddof=1) / math.sqrt(samples)
    flags: list[str] = []
    if not exact_flow:
        flags.append("inexact-stochastic-flow")
    if np.any(mse <= _DEGENERATE_MSE_FLOOR):
        flags.append("degenerate")
        fitted, r2 = None, None
    else:
        fitted, r2 = fit_order(hs, np.sqrt(mse))
        if r2 < 0.9:
            flags.append("unreliable-fit")
    return ErrorReport(
        kind=kind,
        step_sizes=np.asarray(hs, dtype=np.float64),
        step_counts=np.asarray(counts, dtype=np.int64),
        mse=mse,
        standard_errors=se,
        samples=samples,
        seed=seed,
        beta_expected=beta,
        predicted_order=predicted,
        fitted_order=fitted,
        fit_r2=r2,
        oracle_resolution=oracle_resolution,
        flags=tuple(flags),
    )


def converge(cfg: SchemeConfig, step_counts, samples: int, seed: int, *,
             reference_multiple: int = 32, workers: int = 1) -> ErrorReport:
    """Coupled strong-error study against the exponential Euler reference.

    Every sample draws one fine path, runs the reference on it, and runs the
    splitting scheme on coarsenings of the same path at each step count, so
    the reported mean-square errors measure scheme error rather than noise
    error.  The fitted RMS order should approach beta/2.
    """
    step_counts = [int(n) for n in step_counts]
    if len(step_counts) < 1 or any(n < 1 for n in step_counts):
        raise ValueError("step_counts must be positive integers")
    if any(b <= a for a, b in zip(step_counts, step_counts[1:])):
        raise ValueError("step_counts must be strictly increasing")
    if samples < 50:
        raise ValueError("converge needs at least 50 samples")
    if reference_multiple < 1:
        raise ValueError("reference_multiple must be positive")
    n_ref = reference_multiple * max(step_counts)
    bad = [n for n in step_counts if n_ref % n != 0]
    if bad:
        raise ValueError(f"step counts {bad} do not divide the reference resolution {n_ref}")

    tasks = [(cfg, tuple(step_counts), reference_multiple, seed, start, count)
             for start, count in _blocks(samples)]
    errs = np.vstack(_run_blocks(_converge_block, tasks, workers))
    beta = _beta_expected(cfg)
    hs = [cfg.grid.horizon / n for n in step_counts]
    return _finish_order_report(
        "converge", hs, step_counts, errs, samples, seed, beta,
        predicted=0.5 * beta, oracle_resolution=n_ref,
        exact_flow=cfg.diffusion.has_exact_flow(cfg.covariance),
    )


def _consistency_block(args) -> np.ndarray:
    cfg, step_sizes, substeps, seed, start, count = args
    m = cfg.mode_count
    seeds = [derive_seed(seed, _TAG_CONSISTENCY, start + b) for b in range(count)]
    zs = np.empty((substeps, count, m))
    for b, s in enumerate(seeds):
        # same standard normals for every h; only the sqrt(q dt) scaling moves
        zs[:, b, :] = np.random.default_rng(s).standard_normal((m, substeps)).T
    c0 = cfg.initial.coefficients
    q = cfg.covariance.q_values
    bridge_seeds = seeds if cfg.needs_bridge_rng() else None
    errs = np.empty((count, len(step_sizes)))
    for j, h in enumerate(step_sizes):
        dt = h / substeps
        inc = zs * np.sqrt(q * dt)
        total = _coarsen_tensor(inc, substeps)
        ref = reference_trajectory_coeffs(cfg, c0, inc, dt)
        one = _splitting_batch(cfg, c0, total, h, bridge_seeds)
        errs[:, j] = _squared_errors(one, ref)
    return errs


def consistency(cfg: SchemeConfig, step_sizes, samples: int, seed: int, *,
                substeps: int = 64, workers: int = 1) -> ErrorReport:
    """One-step error between the splitting step and a finely resolved
    exponential Euler solve of the same step, on the same noise.

    The expected RMS slope is (2 + beta)/2.
    """
    hs = [float(h) for h in step_sizes]
    if len(hs) < 3 or any(h <= 0 for h in hs) or any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("step_sizes must be positive and strictly decreasing (3+ values)")
    if samples < 2:
        raise ValueError("samples must be at least 2")
    if substeps < 2:
        raise ValueError("substeps must be at least 2")
    tasks = [(cfg, tuple(hs), substeps, seed, start, count)
             for start, count in _blocks(samples)]
    errs = np.vstack(_run_blocks(_consistency_block, tasks, workers))
    beta = _beta_expected(cfg)
    counts = [round(1.0 / h) for h in hs]
    return _finish_order_report(
        "consistency", hs, counts, errs, samples, seed, beta,
        predicted=0.5 * (2.0 + beta), oracle_resolution=substeps,
        exact_flow=cfg.diffusion.has_exact_flow(cfg.covariance),
    )


def _stability_block(args) -> np.ndarray:
    cfg, step_counts, perturbation, seed, start, count = args
    horizon = cfg.grid.horizon
    n_base = max(step_counts)
    seeds = [derive_seed(seed, _TAG_STABILITY, start + b) for b in range(count)]
    tensor = _path_tensor(cfg.covariance, n_base, horizon / n_base, seeds)
    u0 = cfg.initial.coefficients
    v0 = u0 + perturbation
    denom = float(perturbation @ perturbation)
    bridge_seeds = seeds if cfg.needs_bridge_rng() else None
    ratios = np.empty((count, len(step_counts)))
    cur, cur_n = tensor, n_base
    for j in range(len(step_counts) - 1, -1, -1):
        n = step_counts[j]
        cur = _coarsen_tensor(cur, cur_n // n)
        cur_n = n
        h = horizon / n
        c_u = _splitting_batch(cfg, u0, cur, h, bridge_seeds)
        c_v = _splitting_batch(cfg, v0, cur, h, bridge_seeds)
        ratios[:, j] = _squared_errors(c_u, c_v) / denom
    return ratios


def stability(cfg: SchemeConfig, perturbation_scale: float, step_counts,
              samples: int, seed: int, *, workers: int = 1) -> StabilityReport:
    """Mean-square amplification of an initial perturbation under paired
    trajectories driven by identical noise.

    The perturbation direction is the fixed field with coefficients
    perturbation_scale * i^-2; the analytic ceiling combines the drift and
    diffusion mean-square Lipschitz bounds, exp((2 L_f + L_g^2) T).
    """
    if not perturbation_scale > 0.0:
        raise ValueError("perturbation_scale must be positive")
    step_counts = [int(n) for n in step_counts]
    if any(n < 1 for n in step_counts) or any(
            b <= a for a, b in zip(step_counts, step_counts[1:])):
        raise ValueError("step_counts must be positive and strictly increasing")
    n_base = max(step_counts)
    bad = [n for n in step_counts if n_base % n != 0]
    if bad:
        raise ValueError(f"step counts {bad} do not divide the base resolution {n_base}")
    if samples < 2:
        raise ValueError("samples must be at least 2")

    i = np.arange(1, cfg.mode_count + 1, dtype=np.float64)
    perturbation = perturbation_scale * i ** -2.0
    tasks = [(cfg, tuple(step_counts), perturbation, seed, start, count)
             for start, count in _blocks(samples)]
    ratios = np.vstack(_run_blocks(_stability_block, tasks, workers))
    mean = ratios.mean(axis=0)
    se = ratios.std(axis=0, ddof=1) / math.sqrt(samples)
    l_f = cfg.drift.lipschitz_bound
    l_g = cfg.diffusion.lipschitz_bound(cfg.covariance)
    ceiling = math.exp((2.0 * l_f + l_g ** 2) * cfg.grid.horizon)
    return StabilityReport(
        step_counts=np.asarray(step_counts, dtype=np.int64),
        step_sizes=np.asarray([cfg.grid.horizon / n for n in step_counts]),
        ratios=mean,
        standard_errors=se,
        max_ratio=float(mean.max()),
        ceiling=ceiling,
        samples=samples,
        seed=seed,
        perturbation_scale=perturbation_scale,
        drift_lipschitz=l_f,
        diffusion_lipschitz=l_g,
    )


def flow_increment(cfg: SchemeConfig, s_values, samples: int, seed: int, *,
                   workers: int = 1) -> ErrorReport:
    """Scaling of E||flow(u0) - u0||^2 with the step s for the diffusion flow
    alone; the moment should be linear in s (RMS slope 1/2).

    Samples are paired across s values through shared seeds, which makes the
    fitted slope nearly deterministic.
    """
    del workers  # cheap enough to run serially; kept for interface symmetry
    ss = [float(s) for s in s_values]
    if len(ss) < 3 or any(s <= 0 for s in ss) or any(b >= a for a, b in zip(ss, ss[1:])):
        raise ValueError("s_values must be positive and strictly decreasing (3+ values)")
    if samples < 2:
        raise ValueError("samples must be at least 2")
    errs = np.empty((samples, len(ss)))
    for j, s in enumerate(ss):
        errs[:, j] = flow_increment_samples(
            cfg.diffusion, cfg.covariance, cfg.initial, s, samples, seed,
            cfg.stochastic_substeps,
        )
    beta = _beta_expected(cfg)
    counts = [round(1.0 / s) for s in ss]
    return _finish_order_report(
        "flow-increment", ss, counts, errs, samples, seed, beta,
        predicted=0.5, oracle_resolution=0,
        exact_flow=cfg.diffusion.has_exact_flow(cfg.covariance),
    )


def _regularity_block(args) -> np.ndarray:
    cfg, alpha, n_fine, seed, start, count = args
    lam_a = cfg.operator.eigenvalues ** alpha
    seeds = [derive_seed(seed, _TAG_REGULARITY, start + b) for b in range(count)]
    tensor = _path_tensor(cfg.covariance, n_fine, cfg.grid.horizon / n_fine, seeds)
    c0 = cfg.initial.coefficients
    sums = np.zeros(n_fine + 1)
    sums[0] = count * float(lam_a @ (c0 * c0))

    def record(k, c):
        sums[k + 1] = float(np.sum((c * c) @ lam_a))

    reference_trajectory_coeffs(cfg, c0, tensor, cfg.grid.horizon / n_fine,
                                on_state=record)
    return sums


def _regularity_sweep(cfg, alpha, n_fine, samples, seed, workers) -> np.ndarray:
    tasks = [(cfg, alpha, n_fine, seed, start, count)
             for start, count in _blocks(samples)]
    totals = _run_blocks(_regularity_block, tasks, workers)
    mean_sq = np.zeros(n_fine + 1)
    for t in totals:
        mean_sq += t
    return mean_sq / samples


def regularity(cfg: SchemeConfig, alpha: float, samples: int, seed: int, *,
               reference_multiple: int = 32, doubling: bool = True,
               workers: int = 1) -> RegularityReport:
    """Supremum over the time grid of the sampled fractional-norm second
    moment along reference trajectories, with an optional truncation check
    that doubles the mode count on the same seeds."""
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if samples < 1:
        raise ValueError("samples must be positive")
    n_fine = reference_multiple * cfg.grid.steps
    mean_sq = _regularity_sweep(cfg, alpha, n_fine, samples, seed, workers)
    sup = math.sqrt(float(mean_sq.max()))

    stride = n_fine // cfg.grid.steps
    grid_idx = np.arange(0, n_fine + 1, stride)
    times = grid_idx * (cfg.grid.horizon / n_fine)
    norms = np.sqrt(mean_sq[grid_idx])

    sup_doubled = None
    rel_change = None
    if doubling:
        doubled = cfg.with_modes(2 * cfg.mode_count)
        mean_sq2 = _regularity_sweep(doubled, alpha, n_fine, samples, seed, workers)
        sup_doubled = math.sqrt(float(mean_sq2.max()))
        rel_change = abs(sup_doubled - sup) / sup if sup > 0.0 else 0.0
    return RegularityReport(
        alpha=alpha,
        times=times,
        norms=norms,
        sup_norm=sup,
        samples=samples,
        seed=seed,
        mode_count=cfg.mode_count,
        oracle_resolution=n_fine,
        sup_norm_doubled=sup_doubled,
        relative_change=rel_change,
    )
