"""Accuracy-degradation curves, their area metrics, and the artifact bound.

The pipeline masks a growing fraction of pixels per image (most- or
least-important first according to an estimator), replaces them via an
alternative-image generator, and tracks model accuracy. Areas above the
curves quantify estimator fidelity (F, MiF) and misattribution (U, LiF);
curves from shifted foreign masks isolate what masking does to accuracy
independently of pixel importance, which yields an upper bound on the
artifact contribution to F.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, Direction
from .estimators import Estimator
from .nn import accuracy_from_logits
from .perturb import Perturbation

DERANGE_STREAM = 6
SHIFT_STREAM = 7

DEFAULT_N_STARS = (0.2, 0.4)
DEFAULT_REFERENCE = "SQ-SG"


def default_n_grid(points: int = 21) -> tuple[float, ...]:
    """Evenly spaced masked fractions from 0 to 1 inclusive."""
    return tuple(float(x) for x in np.linspace(0.0, 1.0, points))


@dataclass(frozen=True, eq=False)
class AccuracyCurve:
    """Model accuracy sampled over an ascending grid of masked fractions."""

    fractions: np.ndarray
    accuracy: np.ndarray
    estimator: str
    perturbation: str
    direction: Direction
    shifted: bool = False

    def __post_init__(self):
        fr = np.asarray(self.fractions, dtype=np.float64)
        acc = np.asarray(self.accuracy, dtype=np.float64)
        if fr.ndim != 1 or fr.shape != acc.shape:
            raise ValueError("fractions and accuracy must be matching 1-D arrays")
        if fr.size == 0 or fr[0] != 0.0:
            raise ValueError("the fraction grid must start at exactly 0")
        if np.any(np.diff(fr) <= 0):
            raise ValueError("the fraction grid must be strictly ascending")
        if acc.min() < 0.0 or acc.max() > 1.0:
            raise ValueError("accuracy values must lie in [0, 1]")
        fr.setflags(write=False)
        acc.setflags(write=False)
        object.__setattr__(self, "fractions", fr)
        object.__setattr__(self, "accuracy", acc)


@dataclass(frozen=True)
class ShiftConfig:
    """Toroidal-shift protocol for the foreign-mask experiment.

    Shift magnitudes are drawn uniformly from [min_shift, max_shift] per axis
    with random sign. ``derange`` controls whether each image receives the
    mask of a different image (True) or its own (diagnostic mode).
    """

    min_shift: int
    max_shift: int
    derange: bool = True

    def __post_init__(self):
        if not 0 <= self.min_shift <= self.max_shift:
            raise ValueError("need 0 <= min_shift <= max_shift")


def default_shift_config(side: int) -> ShiftConfig:
    """Shift range scaled to the image side: 5% to 45% of it, rounded up."""
    return ShiftConfig(math.ceil(0.05 * side), math.ceil(0.45 * side))


def _validate_grid(n_grid: Sequence[float]) -> np.ndarray:
    grid = np.asarray(list(n_grid), dtype=np.float64)
    if grid.size == 0 or grid[0] != 0.0:
        raise ValueError("the fraction grid must start at 0")
    if np.any(np.diff(grid) <= 0) or grid[-1] > 1.0:
        raise ValueError("the fraction grid must ascend within [0, 1]")
    return grid


def _rank_orders(maps: np.ndarray, direction: Direction) -> np.ndarray:
    """Row-major pixel indices per sample, front = first to be masked."""
    flat = maps.reshape(maps.shape[0], -1)
    key = -flat if direction == "MiF" else flat
    return np.argsort(key, axis=1, kind="stable")


def _curve_from_orders(
    model,
    dataset: Dataset,
    orders: np.ndarray,
    alternatives: np.ndarray,
    grid: np.ndarray,
) -> np.ndarray:
    n, h, w, _ = dataset.images.shape
    total = h * w
    acc = np.empty(grid.size, dtype=np.float64)
    for gi, frac in enumerate(grid):
        k = int(np.rint(frac * total))
        keep = np.ones((n, total), dtype=bool)
        if k:
            np.put_along_axis(keep, orders[:, :k], False, axis=1)
        perturbed = np.where(keep.reshape(n, h, w, 1), dataset.images, alternatives)
        acc[gi] = accuracy_from_logits(model.forward_batch(perturbed), dataset.labels)
    return acc


def degradation_curve(
    model,
    dataset: Dataset,
    estimator: Estimator,
    direction: Direction,
    perturbation: Perturbation,
    n_grid: Sequence[float] | None = None,
    master_seed: int = 0,
    maps: Optional[np.ndarray] = None,
    alternatives: Optional[np.ndarray] = None,
) -> AccuracyCurve:
    """Accuracy while masking a growing fraction of ranked pixels per image.

    Saliency is computed for each sample's true label; precomputed maps and
    alternative images can be passed to avoid recomputation across
    directions and pipelines.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    grid = _validate_grid(n_grid if n_grid is not None else default_n_grid())
    if maps is None:
        maps = estimator.maps_batch(model, dataset.images, dataset.labels, master_seed)
    orders = _rank_orders(maps, direction)
    if alternatives is None:
        alternatives = perturbation.alternatives_batch(dataset.images, master_seed)
    acc = _curve_from_orders(model, dataset, orders, alternatives, grid)
    return AccuracyCurve(grid, acc, estimator.name, perturbation.tag, direction, shifted=False)


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def _draw_shifts(n: int, cfg: ShiftConfig, rng: np.random.Generator) -> np.ndarray:
    mags = rng.integers(cfg.min_shift, cfg.max_shift + 1, size=(n, 2))
    signs = rng.integers(0, 2, size=(n, 2)) * 2 - 1
    return mags * signs


def _shift_orders(orders: np.ndarray, shifts: np.ndarray, h: int, w: int) -> np.ndarray:
    """Apply per-sample toroidal (dx, dy) translations to ranked pixel indices."""
    rows = orders // w
    cols = orders % w
    dy = shifts[:, 1][:, None]
    dx = shifts[:, 0][:, None]
    return ((rows + dy) % h) * w + (cols + dx) % w


def shifted_degradation_curve(
    model,
    dataset: Dataset,
    estimator: Estimator,
    direction: Direction,
    perturbation: Perturbation,
    n_grid: Sequence[float] | None = None,
    shift_cfg: Optional[ShiftConfig] = None,
    master_seed: int = 0,
    maps: Optional[np.ndarray] = None,
    alternatives: Optional[np.ndarray] = None,
) -> AccuracyCurve:
    """Degradation curve where each image gets another image's shifted mask.

    Mask donors form a seeded derangement of the dataset order, and every
    mask is translated toroidally by per-sample random amounts. Donor
    assignment and shifts depend only on the master seed, so MiF/LiF and all
    estimators see identical pairings.
    """
    if shift_cfg is None:
        shift_cfg = default_shift_config(dataset.width)
    if shift_cfg.derange and len(dataset) < 2:
        raise ValueError("foreign-mask mode needs at least two samples")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    grid = _validate_grid(n_grid if n_grid is not None else default_n_grid())
    if maps is None:
        maps = estimator.maps_batch(model, dataset.images, dataset.labels, master_seed)

    n = len(dataset)
    if shift_cfg.derange:
        rng = np.random.default_rng(np.random.SeedSequence((master_seed, DERANGE_STREAM)))
        donors = _derangement(n, rng)
    else:
        donors = np.arange(n)
    shift_rng = np.random.default_rng(np.random.SeedSequence((master_seed, SHIFT_STREAM)))
    shifts = _draw_shifts(n, shift_cfg, shift_rng)

    orders = _rank_orders(maps, direction)[donors]
    orders = _shift_orders(orders, shifts, dataset.height, dataset.width)
    if alternatives is None:
        alternatives = perturbation.alternatives_batch(dataset.images, master_seed)
    acc = _curve_from_orders(model, dataset, orders, alternatives, grid)
    return AccuracyCurve(grid, acc, estimator.name, perturbation.tag, direction, shifted=True)


def area_above(curve: AccuracyCurve, n: float) -> float:
    """Signed trapezoidal area between accuracy(0) and the curve over [0, n].

    Segments where accuracy exceeds the unperturbed level contribute
    negatively. ``n`` may fall between grid points; the curve is treated as
    piecewise linear.
    """
    fr, acc = curve.fractions, curve.accuracy
    if n < fr[0] or n > fr[-1]:
        raise ValueError(f"n={n} outside the curve's grid range [{fr[0]}, {fr[-1]}]")
    drops = acc[0] - acc
    inside = fr <= n
    xs = fr[inside]
    ys = drops[inside]
    if xs[-1] < n:
        xs = np.append(xs, n)
        ys = np.append(ys, np.interp(n, fr, drops))
    if xs.size < 2:
        return 0.0
    return float(0.5 * ((ys[1:] + ys[:-1]) * np.diff(xs)).sum())


def delta(f_value: float, u_value: float) -> float:
    """Fidelity excess of MiF over LiF masking: F - U."""
    return f_value - u_value


def _require_same_grid(*curves: AccuracyCurve) -> None:
    base = curves[0].fractions
    for c in curves[1:]:
        if not np.array_equal(base, c.fractions):
            raise ValueError("curves must share the same fraction grid")


def artifact_bound(
    f_shifted_e: AccuracyCurve,
    u_ref: AccuracyCurve,
    n: float,
    u_ref_shifted: Optional[AccuracyCurve] = None,
) -> tuple[float, float]:
    """Residual-delta and artifact upper bound at fraction n.

    delta_tilde is the shifted-MiF area of the estimator minus the reference
    LiF area; when ``u_ref_shifted`` is given it is subtracted instead (the
    matched foreign-mask comparison). The bound clamps negative residuals:
    max(delta_tilde, 0) + area(u_ref), so it never falls below the reference
    LiF area.
    """
    curves = [f_shifted_e, u_ref] + ([u_ref_shifted] if u_ref_shifted is not None else [])
    _require_same_grid(*curves)
    u_ref_area = area_above(u_ref, n)
    subtrahend = area_above(u_ref_shifted, n) if u_ref_shifted is not None else u_ref_area
    delta_tilde = area_above(f_shifted_e, n) - subtrahend
    bound = max(delta_tilde, 0.0) + u_ref_area
    return delta_tilde, bound


@dataclass(frozen=True)
class FidelityRow:
    """Per-(estimator, n*) fidelity numbers.

    ``delta_sys`` is the artifact bound with the conventional negative sign;
    ``delta_sys_unclamped`` keeps a negative residual instead of clamping it.
    """

    estimator: str
    n_star: float
    fidelity: float
    u: float
    delta: float
    delta_tilde: float
    bound: float
    delta_sys: float
    delta_sys_unclamped: float


@dataclass(frozen=True, eq=False)
class FidelityReport:
    rows: tuple[FidelityRow, ...]
    reference: str
    curves: tuple[AccuracyCurve, ...]

    def row(self, estimator: str, n_star: float) -> FidelityRow:
        for r in self.rows:
            if r.estimator == estimator and r.n_star == n_star:
                return r
        raise KeyError((estimator, n_star))


def fidelity_report(
    model,
    dataset: Dataset,
    estimators: Sequence[Estimator],
    perturbation: Perturbation,
    n_grid: Sequence[float] | None = None,
    n_stars: Sequence[float] = DEFAULT_N_STARS,
    reference: str = DEFAULT_REFERENCE,
    shift_cfg: Optional[ShiftConfig] = None,
    master_seed: int = 0,
    maps_cache: Optional[dict] = None,
) -> FidelityReport:
    """Assemble F, U, delta, residual delta, and artifact bounds per estimator.

    The reference estimator's LiF curves (plain and shifted) anchor the
    bound; it is evaluated even if absent from ``estimators``. Saliency maps
    are computed once per estimator (or taken from ``maps_cache``) and reused
    across directions and the shifted experiment.
    """
    names = [e.name for e in estimators]
    if len(set(names)) != len(names):
        raise ValueError("duplicate estimator names")
    all_estimators = list(estimators)
    if reference not in names:
        all_estimators.append(Estimator(reference, estimators[0].config))

    if maps_cache is None:
        maps_cache = {}
    alternatives = perturbation.alternatives_batch(dataset.images, master_seed)
    curves: dict[tuple[str, str, bool], AccuracyCurve] = {}
    for est in all_estimators:
        if est.name not in maps_cache:
            maps_cache[est.name] = est.maps_batch(
                model, dataset.images, dataset.labels, master_seed
            )
        maps = maps_cache[est.name]
        for direction in ("MiF", "LiF"):
            curves[(est.name, direction, False)] = degradation_curve(
                model, dataset, est, direction, perturbation, n_grid, master_seed,
                maps, alternatives,
            )
        curves[(est.name, "MiF", True)] = shifted_degradation_curve(
            model, dataset, est, "MiF", perturbation, n_grid, shift_cfg, master_seed,
            maps, alternatives,
        )
    ref_est = next(e for e in all_estimators if e.name == reference)
    curves[(reference, "LiF", True)] = shifted_degradation_curve(
        model, dataset, ref_est, "LiF", perturbation, n_grid, shift_cfg, master_seed,
        maps_cache[reference], alternatives,
    )

    u_ref_curve = curves[(reference, "LiF", False)]
    u_ref_shifted = curves[(reference, "LiF", True)]
    rows = []
    for est in estimators:
        f_curve = curves[(est.name, "MiF", False)]
        u_curve = curves[(est.name, "LiF", False)]
        f_shifted = curves[(est.name, "MiF", True)]
        for n_star in n_stars:
            f_val = area_above(f_curve, n_star)
            u_val = area_above(u_curve, n_star)
            u_ref_val = area_above(u_ref_curve, n_star)
            delta_tilde, bound = artifact_bound(f_shifted, u_ref_curve, n_star, u_ref_shifted)
            rows.append(
                FidelityRow(
                    estimator=est.name,
                    n_star=float(n_star),
                    fidelity=f_val,
                    u=u_val,
                    delta=delta(f_val, u_val),
                    delta_tilde=delta_tilde,
                    bound=bound,
                    delta_sys=-bound,
                    delta_sys_unclamped=-(u_ref_val + delta_tilde),
                )
            )
    ordered = tuple(curves.values())
    return FidelityReport(tuple(rows), reference, ordered)
