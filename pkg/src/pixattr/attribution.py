"""Per-segment attribution from perturbation samples and model outputs.

Five methods over the same (SampleSet, outputs) data: PDA and RISE average
raw outputs, CIU normalizes output excursions into importance and utility,
LIME fits an ordinary least-squares surrogate, and kernel SHAP fits a
weighted surrogate whose exhaustive solution is exactly the Shapley value.

Throughout, ``indicator = 1`` means the segment is perturbed and the
surrogate feature is its complement x = 1 - indicator (segment present).
The unperturbed reference output Y always comes from a dedicated argument,
never from hunting for an all-zeros row, because random sample sets need
not contain one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    AttributionMethod,
    AttributionResult,
    PredictionRecord,
    SampleOrigin,
    SampleSet,
    SegmentMaskStack,
)

# Pixels whose masks sum below this carry no perturbation signal at all.
EMPTY_PIXEL_TOL = 1e-9

Outputs = Union[Sequence[PredictionRecord], Sequence[float], np.ndarray]


@dataclass(frozen=True)
class SurrogateFit:
    """Linear surrogate y ~ bias + weights . x fitted to perturbation outputs."""

    bias: float
    weights: np.ndarray
    residual_norm: float
    rank_deficient: bool


def _outputs_vector(samples: SampleSet, outputs: Outputs) -> np.ndarray:
    """Align outputs to sample rows, whether given as records or a plain vector."""
    if len(outputs) != samples.n_samples:
        raise ValueError(
            f"{len(outputs)} outputs for {samples.n_samples} samples"
        )
    if not isinstance(outputs, np.ndarray) and isinstance(next(iter(outputs), None),
                                                          PredictionRecord):
        vec = np.empty(samples.n_samples, dtype=np.float64)
        seen = np.zeros(samples.n_samples, dtype=bool)
        for rec in outputs:
            if not 0 <= rec.sample_index < samples.n_samples or seen[rec.sample_index]:
                raise ValueError(f"bad or duplicate sample_index {rec.sample_index}")
            vec[rec.sample_index] = rec.output
            seen[rec.sample_index] = True
        return vec
    return np.asarray(outputs, dtype=np.float64)


def attribute_pda(samples: SampleSet, outputs: Outputs, reference_Y: float) -> np.ndarray:
    """w_s = Y minus the mean output over samples that perturb segment s."""
    y = _outputs_vector(samples, outputs)
    ind = samples.indicators.astype(np.float64)
    counts = ind.sum(axis=0)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"segment {missing[0]} is never perturbed; PDA has no samples for it")
    return float(reference_Y) - (ind.T @ y) / counts


def attribute_rise(samples: SampleSet, outputs: Outputs) -> np.ndarray:
    """w_s = mean output over samples that leave segment s unperturbed."""
    y = _outputs_vector(samples, outputs)
    kept = 1.0 - samples.indicators.astype(np.float64)
    counts = kept.sum(axis=0)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"segment {missing[0]} is always perturbed; RISE has no samples for it")
    return (kept.T @ y) / counts


def attribute_ciu(samples: SampleSet, outputs: Outputs, reference_Y: float,
                  mode: SampleOrigin) -> np.ndarray:
    """Contextual influence w_s = CI(s) * (CU(s) - 0.5).

    only_one mode: CI spans {Y, output with s perturbed}. all_but_one mode:
    CI spans {Y, 1 - output with s kept}, a probability-scale complement, so
    scores outside [0, 1] make this mode meaningless. Both are normalized by
    the range of all observed outputs including the reference; utility
    CU(s) = (Y - min over outputs with s perturbed) / range.
    """
    mode = SampleOrigin(mode)
    if mode not in (SampleOrigin.ONLY_ONE, SampleOrigin.ALL_BUT_ONE):
        raise ValueError(f"CIU mode must be only_one or all_but_one, got {mode.value}")
    if samples.origin is not mode:
        raise ValueError(
            f"CIU mode {mode.value} does not match sample origin {samples.origin.value}"
        )
    y = _outputs_vector(samples, outputs)
    ref = float(reference_Y)
    everything = np.append(y, ref)
    rng = float(everything.max() - everything.min())
    if rng == 0.0:
        warnings.warn("degenerate: constant outputs", stacklevel=2)
        return np.zeros(samples.n_segments)

    ind = samples.indicators
    n = samples.n_segments
    weights = np.empty(n)
    nonzero = ind.sum(axis=1) > 0
    for s in range(n):
        perturbed_s = y[ind[:, s] == 1]
        if perturbed_s.size == 0:
            raise ValueError(f"segment {s} is never perturbed; CIU has no samples for it")
        if mode is SampleOrigin.ONLY_ONE:
            span = np.append(perturbed_s, ref)
        else:
            # Outputs of perturbing samples that keep s, complemented onto the
            # probability scale. The all-zeros reference row perturbs nothing
            # and is excluded; its complement belongs to no perturbation at all.
            kept_s = y[(ind[:, s] == 0) & nonzero]
            span = np.append(1.0 - kept_s, ref)
        ci = (span.max() - span.min()) / rng
        cu = (ref - perturbed_s.min()) / rng
        weights[s] = ci * (cu - 0.5)
    return weights


def fit_lime(samples: SampleSet, outputs: Outputs) -> SurrogateFit:
    """Ordinary least squares of outputs on presence features x = 1 - indicator.

    Underdetermined systems get the minimum-norm solution and the
    rank_deficient flag instead of an error; an explanation request must not
    crash just because the sample budget was too small.
    """
    if samples.n_samples < 2:
        raise ValueError(f"LIME needs at least 2 samples, got {samples.n_samples}")
    y = _outputs_vector(samples, outputs)
    x = 1.0 - samples.indicators.astype(np.float64)
    design = np.hstack([np.ones((samples.n_samples, 1)), x])
    beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=1e-10)
    residual = float(np.linalg.norm(y - design @ beta))
    return SurrogateFit(
        bias=float(beta[0]),
        weights=beta[1:],
        residual_norm=residual,
        rank_deficient=rank < design.shape[1],
    )


def shap_kernel_weight(n_segments: int, n_present: int) -> float:
    """pi(X) = (|S| - 1) / (C(|S|, |X|) * |X| * (|S| - |X|)) for 0 < |X| < |S|."""
    if not 0 < n_present < n_segments:
        raise ValueError(f"kernel weight undefined for |X| = {n_present} of {n_segments}")
    return (n_segments - 1) / (
        math.comb(n_segments, n_present) * n_present * (n_segments - n_present)
    )


def fit_kernel_shap(samples: SampleSet, outputs: Outputs, reference_Y: float,
                    full_Y: Optional[float] = None) -> SurrogateFit:
    """Weighted least squares under the Shapley kernel with anchored endpoints.

    The kernel weight diverges at the empty and full coalitions, so those two
    rows become hard equality constraints instead: bias = output with every
    segment perturbed, bias + sum(weights) = output with nothing perturbed.
    Sample rows at the endpoints supply those values (averaged if repeated);
    missing endpoints fall back to full_Y and reference_Y respectively. The
    constraint on sum(weights) is eliminated by substitution and the interior
    rows solved by scaled least squares, which reproduces exact Shapley
    values when all coalitions are present.
    """
    if samples.n_samples < 2:
        raise ValueError(f"kernel SHAP needs at least 2 samples, got {samples.n_samples}")
    y = _outputs_vector(samples, outputs)
    x = 1.0 - samples.indicators.astype(np.float64)
    n = samples.n_segments
    present = x.sum(axis=1).astype(np.int64)

    none_kept = present == 0  # everything perturbed
    all_kept = present == n  # nothing perturbed
    if none_kept.any():
        v_empty = float(y[none_kept].mean())
    elif full_Y is not None:
        v_empty = float(full_Y)
    else:
        raise ValueError(
            "no all-perturbed sample and no full_Y reference; the bias anchor is undefined"
        )
    v_full = float(y[all_kept].mean()) if all_kept.any() else float(reference_Y)
    total = v_full - v_empty

    interior = ~(none_kept | all_kept)
    if not interior.any() or n == 1:
        return SurrogateFit(
            bias=v_empty,
            weights=np.full(n, total / n),
            residual_norm=0.0,
            rank_deficient=n > 1,
        )

    xi = x[interior]
    zi = y[interior] - v_empty - xi[:, -1] * total
    design = xi[:, :-1] - xi[:, -1:]
    sqrt_w = np.sqrt(np.fromiter(
        (shap_kernel_weight(n, k) for k in present[interior]),
        dtype=np.float64,
    ))
    head, _, rank, _ = np.linalg.lstsq(design * sqrt_w[:, None], zi * sqrt_w, rcond=1e-10)
    weights = np.append(head, total - head.sum())
    residuals = y[interior] - v_empty - xi @ weights
    return SurrogateFit(
        bias=v_empty,
        weights=weights,
        residual_norm=float(np.linalg.norm(residuals * sqrt_w)),
        rank_deficient=rank < n - 1,
    )


def attribute(method: Union[AttributionMethod, str], samples: SampleSet, outputs: Outputs,
              reference_Y: float, full_Y: Optional[float] = None) -> AttributionResult:
    """Dispatch to one attribution method; result carries segment weights only."""
    method = AttributionMethod(method)
    if method is AttributionMethod.PDA:
        weights = attribute_pda(samples, outputs, reference_Y)
    elif method is AttributionMethod.RISE:
        weights = attribute_rise(samples, outputs)
    elif method is AttributionMethod.CIU:
        if samples.origin not in (SampleOrigin.ONLY_ONE, SampleOrigin.ALL_BUT_ONE):
            raise ValueError(
                f"CIU requires only_one or all_but_one sampling, got {samples.origin.value}"
            )
        weights = attribute_ciu(samples, outputs, reference_Y, samples.origin)
    elif method is AttributionMethod.LIME:
        weights = fit_lime(samples, outputs).weights
    else:
        weights = fit_kernel_shap(samples, outputs, reference_Y, full_Y).weights
    return AttributionResult(weights, method, reference_Y)


def project_per_pixel(weights: np.ndarray, stack: SegmentMaskStack) -> np.ndarray:
    """Mask-weighted average of segment weights at each pixel.

    w_p = sum_s w_s * M_s(p) / sum_s M_s(p). Pixels never touched by any mask
    (denominator below 1e-9) get 0 and trigger a warning, since they received
    no perturbation evidence.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (stack.n_segments,):
        raise ValueError(
            f"{weights.shape} weights for a stack of {stack.n_segments} segments"
        )
    denom = stack.masks.sum(axis=0)
    numer = np.tensordot(weights, stack.masks, axes=1)
    empty = denom < EMPTY_PIXEL_TOL
    if empty.any():
        warnings.warn(
            f"{int(empty.sum())} pixels are covered by no mask; their attribution is 0",
            stacklevel=2,
        )
    out = np.zeros_like(denom)
    np.divide(numer, denom, out=out, where=~empty)
    return out
