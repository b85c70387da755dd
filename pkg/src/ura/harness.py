"""Evaluation harness: condition-by-condition metric tables, detector-based
perception metrics, and qualitative artifact dumps.

Four conditions are reported: the clean reference (background against
itself), the plain restoration, the restoration under the universal flow
attack, and the restoration under an equal-budget random flow. The random
baseline reuses the attack flow's mapping mode and pixel budget so the
comparison is fair.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, nets
from .errors import DataError, GeometryError
from .imaging import Image, save_image
from .metrics import DEFAULT_SSIM, DetectorReport, SsimParams
from .warp import FlowField, displacement, random_flow, spatial_transform

COND_CLEAN = "clean-reference"
COND_DERAIN = "derain"
COND_URA = "derain-under-URA"
COND_RANDOM = "derain-under-random"
CONDITIONS = (COND_CLEAN, COND_DERAIN, COND_URA, COND_RANDOM)


@dataclass
class ConditionMetrics:
    ssim_mean: float
    psnr_mean: float
    identify_error: float | None = None
    confidence_bias: float | None = None


@dataclass
class MetricsReport:
    """Per-condition quality table plus relative drops against the
    unattacked restoration."""

    rows: dict
    sample_count: int
    seeds: dict
    relative_drops: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def encode(value):
            if value is None:
                return None
            if isinstance(value, float) and math.isinf(value):
                return "+inf"
            return value

        payload = {
            "sample_count": self.sample_count,
            "seeds": self.seeds,
            "conditions": {
                name: {
                    "ssim_mean": encode(row.ssim_mean),
                    "psnr_mean": encode(row.psnr_mean),
                    "identify_error": encode(row.identify_error),
                    "confidence_bias": encode(row.confidence_bias),
                }
                for name, row in self.rows.items()
            },
            "relative_drops": {
                cond: {k: encode(v) for k, v in drops.items()}
                for cond, drops in self.relative_drops.items()
            },
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_csv(self) -> str:
        def cell(value):
            if value is None:
                return ""
            if isinstance(value, float) and math.isinf(value):
                return "+inf"
            return repr(float(value))

        lines = ["condition,ssim_mean,psnr_mean,identify_error,"
                 "confidence_bias,ssim_drop_vs_derain,psnr_drop_vs_derain"]
        for name in CONDITIONS:
            if name not in self.rows:
                continue
            row = self.rows[name]
            drops = self.relative_drops.get(name, {})
            lines.append(",".join([
                name, cell(row.ssim_mean), cell(row.psnr_mean),
                cell(row.identify_error), cell(row.confidence_bias),
                cell(drops.get("ssim")), cell(drops.get("psnr")),
            ]))
        return "\n".join(lines) + "\n"


def _resolve_derain(theta):
    """Accept ModelParams or any Image -> Image callable as the target."""
    if isinstance(theta, nets.ModelParams):
        return lambda img: nets.derain_forward(theta, img)
    if callable(theta):
        return theta
    raise TypeError("theta must be ModelParams or an Image -> Image callable")


def _condition_images(derain_fn, flow: FlowField, rand: FlowField,
                      sample) -> dict:
    obs, bg = sample.observation, sample.background
    if (obs.height, obs.width) != (flow.height, flow.width):
        raise GeometryError(
            f"sample '{sample.identifier}' is {obs.height}x{obs.width}, "
            f"flow is {flow.height}x{flow.width}")
    return {
        COND_CLEAN: bg,
        COND_DERAIN: derain_fn(obs),
        COND_URA: derain_fn(spatial_transform(obs, flow)),
        COND_RANDOM: derain_fn(spatial_transform(obs, rand)),
    }


def _mean_psnr(values) -> float:
    finite = [v for v in values if math.isfinite(v)]
    if len(finite) < len(values):
        return math.inf
    return float(np.mean(finite))


def _relative_drop(baseline: float, attacked: float) -> float | None:
    if not math.isfinite(baseline) or baseline == 0.0:
        return None
    return (baseline - attacked) / baseline


def evaluate(theta, flow: FlowField, testset, random_seed: int,
             ssim_params: SsimParams = DEFAULT_SSIM,
             jobs: int = 1) -> MetricsReport:
    """Mean SSIM/PSNR against the clean background for every condition.

    Deterministic given (theta, flow, testset, random_seed); per-sample
    work may run on a thread pool, results are merged in sample order.
    """
    if not testset:
        raise DataError("test set is empty")
    derain_fn = _resolve_derain(theta)
    rand = random_flow(random_seed, flow.height, flow.width, flow.mapping,
                       flow.budget_px)

    def one(sample):
        images = _condition_images(derain_fn, flow, rand, sample)
        return {
            cond: (metrics.ssim(img, sample.background, ssim_params),
                   metrics.psnr(img, sample.background))
            for cond, img in images.items()
        }

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_sample = list(pool.map(one, testset))
    else:
        per_sample = [one(s) for s in testset]

    rows = {}
    for cond in CONDITIONS:
        rows[cond] = ConditionMetrics(
            ssim_mean=float(np.mean([r[cond][0] for r in per_sample])),
            psnr_mean=_mean_psnr([r[cond][1] for r in per_sample]),
        )
    drops = {}
    for cond in (COND_URA, COND_RANDOM):
        drops[cond] = {
            "ssim": _relative_drop(rows[COND_DERAIN].ssim_mean,
                                   rows[cond].ssim_mean),
            "psnr": _relative_drop(rows[COND_DERAIN].psnr_mean,
                                   rows[cond].psnr_mean),
        }
    return MetricsReport(rows=rows, sample_count=len(testset),
                         seeds={"random_flow": random_seed},
                         relative_drops=drops)


def perception_eval(detector, theta, flow: FlowField, testset,
                    random_seed: int) -> dict:
    """Eq-style perception metrics per condition via a detector.

    The detector runs on each clean background (the reference) and on
    every condition's restoration; identify error and confidence bias
    (ratio mode) are averaged per image. Images with no matched labels are
    excluded from the confidence average; a detector failure aborts with
    the sample identifier.
    """
    if not testset:
        raise DataError("test set is empty")
    derain_fn = _resolve_derain(theta)
    rand = random_flow(random_seed, flow.height, flow.width, flow.mapping,
                       flow.budget_px)
    errors = {cond: [] for cond in CONDITIONS}
    biases = {cond: [] for cond in CONDITIONS}
    for sample in testset:
        images = _condition_images(derain_fn, flow, rand, sample)
        reports = {}
        for cond, img in images.items():
            try:
                reports[cond] = detector(img)
            except Exception as exc:
                raise DataError(
                    f"detector failed on sample '{sample.identifier}' "
                    f"({cond}): {exc}") from exc
        reference = reports[COND_CLEAN]
        for cond in CONDITIONS:
            errors[cond].append(metrics.identify_error(reports[cond],
                                                       reference))
            try:
                biases[cond].append(metrics.confidence_bias(reports[cond],
                                                            reference))
            except DataError:
                pass  # no matched labels for this image
    out = {}
    for cond in CONDITIONS:
        if not biases[cond]:
            raise DataError(
                f"no matched labels in any image for condition {cond}")
        out[cond] = (float(np.mean(errors[cond])),
                     float(np.mean(biases[cond])))
    return out


def mock_detector(bins: int):
    """Deterministic stand-in detector: classifies by the argmax luminance
    histogram bin; the confidence is that bin's mass fraction."""
    if bins < 2:
        raise DataError("bins must be >= 2")

    def detect(img: Image) -> DetectorReport:
        luminance = img.data.mean(axis=0)
        counts, _ = np.histogram(luminance, bins=bins, range=(0.0, 1.0))
        label = int(np.argmax(counts))  # ties break to the lower bin
        confidence = float(counts[label]) / luminance.size
        return DetectorReport(((label, confidence),))

    return detect


def attach_perception(report: MetricsReport, perception: dict) -> None:
    """Merge perception_eval output into a MetricsReport in place."""
    for cond, (err, bias) in perception.items():
        row = report.rows[cond]
        row.identify_error = err
        row.confidence_bias = bias


def flow_magnitude_image(flow: FlowField) -> Image:
    """Displacement magnitude rendered to [0, 1] gray (max-normalized;
    all-zero for the identity flow)."""
    du, dv = displacement(flow)
    mag = np.hypot(du, dv)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    return Image(np.broadcast_to(mag, (3,) + mag.shape).copy())


def dump_qualitative(theta, flow: FlowField, samples, out_dir,
                     histogram_bins: int = 32) -> None:
    """Per sample: the six-panel PNG set plus four histogram CSVs.

    PNGs: rain, perturbation, adv_rain, removal, adv_removal, no_rain.
    CSVs: hist_clean, hist_rain, hist_derain, hist_adv_derain.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory {out_dir} is not writable: {exc}")
    derain_fn = _resolve_derain(theta)
    perturbation = flow_magnitude_image(flow)
    for sample in samples:
        obs, bg = sample.observation, sample.background
        adv = spatial_transform(obs, flow)
        removal = derain_fn(obs)
        adv_removal = derain_fn(adv)
        sid = sample.identifier or "sample"
        panels = {
            "rain": obs,
            "perturbation": perturbation,
            "adv_rain": adv,
            "removal": removal,
            "adv_removal": adv_removal,
            "no_rain": bg,
        }
        for name, img in panels.items():
            save_image(img, out_dir / f"{sid}_{name}.png")
        histograms = {
            "hist_clean": bg,
            "hist_rain": obs,
            "hist_derain": removal,
            "hist_adv_derain": adv_removal,
        }
        for name, img in histograms.items():
            metrics.write_histogram_csv(img, histogram_bins,
                                        out_dir / f"{sid}_{name}.csv")
