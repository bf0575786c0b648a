"""Evaluation: Fréchet distance, Inception-style score, parameter counts,
inference latency, and a color-matching semantic probe."""

from __future__ import annotations

import json
import platform
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .data import BG_RGB, FG_RGB, parse_caption
from .errors import ContractError


class GaussianStats(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray


def gaussian_stats(features) -> GaussianStats:
    """Sample mean and unbiased (n-1) covariance of an n×d feature matrix."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError(f"need an n×d matrix with n >= 2, got shape {x.shape}")
    mu = x.mean(axis=0)
    xc = x - mu
    return GaussianStats(mu, xc.T @ xc / (x.shape[0] - 1))


def sqrtm_psd(a, sym_tol: float = 1e-8) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues below zero (round-off) are clamped to zero.
    """
    a = np.asarray(a, dtype=np.float64)
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"sqrtm_psd needs a square matrix, got {a.shape}")
    if np.abs(a - a.T).max(initial=0.0) > sym_tol * scale:
        raise ContractError("sqrtm_psd input is not symmetric")
    w, v = np.linalg.eigh((a + a.T) / 2)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (v * w) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||² + Tr(S_a + S_b - 2 sqrt(sqrt(S_a) S_b sqrt(S_a))), clamped at 0."""
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise ContractError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    root_a = sqrtm_psd(a.cov)
    middle = root_a @ b.cov @ root_a
    middle = (middle + middle.T) / 2
    diff = a.mean - b.mean
    val = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(sqrtm_psd(middle))
    return max(float(val), 0.0)


def inception_score(probs, splits: int = 1) -> tuple[float, float]:
    """exp(mean KL(p(y|x) || p(y))) per split; returns (mean, std) across splits."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ContractError(f"probs must be n×K, got {p.shape}")
    if (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > 1e-6:
        raise ContractError("every row of probs must be a distribution summing to 1")
    scores = []
    for part in np.array_split(p, splits):
        marginal = part.mean(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        scores.append(float(np.exp(terms.sum(axis=1).mean())))
    return float(np.mean(scores)), float(np.std(scores))


def count_params(model) -> int:
    return int(sum(p.size for p in model.parameters()))


def param_breakdown(model, depth: int = 1) -> dict[str, int]:
    """Parameter counts grouped by the first ``depth`` components of the name."""
    out: dict[str, int] = {}
    for name, p in model.named_parameters():
        key = ".".join(name.split(".")[:depth])
        out[key] = out.get(key, 0) + p.size
    return out


@dataclass
class CostReport:
    param_count: int
    checkpoint_bytes: int
    latency_mean: float
    latency_median: float
    latency_p95: float
    batch_size: int
    warmup: int
    runs: int
    cpu: str = ""
    threads: int = 1

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _cpu_model() -> str:
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


def bench_inference(run: Callable[[int], object], n_warmup: int = 2, n_runs: int = 10, batch: int = 1,
                    param_count: int = 0, checkpoint_bytes: int = 0, threads: int = 1) -> CostReport:
    """Time ``run(batch)`` after warmup; latencies are seconds per generated image."""
    if n_runs < 3:
        raise ContractError("bench_inference needs at least 3 timed runs")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=threads):
        for _ in range(n_warmup):
            run(batch)
        times = []
        for _ in range(n_runs):
            t0 = time.perf_counter()
            run(batch)
            times.append((time.perf_counter() - t0) / batch)
    times.sort()
    p95 = float(np.percentile(times, 95))
    return CostReport(
        param_count=param_count, checkpoint_bytes=checkpoint_bytes,
        latency_mean=float(statistics.fmean(times)), latency_median=float(statistics.median(times)),
        latency_p95=p95, batch_size=batch, warmup=n_warmup, runs=n_runs,
        cpu=_cpu_model(), threads=threads,
    )


def dominant_colors(img: np.ndarray, min_pixels: int = 8, fg_dist: float = 0.25):
    """(fg palette id or None, bg palette id) from pixel statistics of a 3×S×S image in [-1, 1]."""
    rgb = (np.asarray(img, np.float64).transpose(1, 2, 0) + 1.0) / 2.0
    border = np.concatenate([rgb[:2].reshape(-1, 3), rgb[-2:].reshape(-1, 3),
                             rgb[:, :2].reshape(-1, 3), rgb[:, -2:].reshape(-1, 3)])
    bg = np.median(border, axis=0)
    bg_id = int(np.argmin(((BG_RGB - bg) ** 2).sum(axis=1)))
    far = np.sqrt(((rgb - bg) ** 2).sum(axis=-1)) > fg_dist
    if far.sum() < min_pixels:
        return None, bg_id
    fg = np.median(rgb[far], axis=0)
    return int(np.argmin(((FG_RGB - fg) ** 2).sum(axis=1))), bg_id


def semantic_probe(images, captions: Sequence[str]) -> float:
    """Fraction of (image, color slot) pairs whose dominant color matches the caption."""
    images = np.asarray(images)
    if len(images) != len(captions) or len(captions) == 0:
        raise ContractError("need one caption per image")
    hits = 0
    for img, cap in zip(images, captions):
        _, fg_want, bg_want = parse_caption(cap)
        fg, bg = dominant_colors(img)
        hits += (fg == fg_want) + (bg == bg_want)
    return hits / (2 * len(captions))


def shuffled_baseline(images, captions: Sequence[str], seed: int = 0) -> float:
    """Probe accuracy when images are randomly re-paired with captions (chance level)."""
    perm = np.random.default_rng(seed).permutation(len(captions))
    return semantic_probe(np.asarray(images)[perm], captions)


def write_report(values: dict, text_path, json_path=None):
    """Line-oriented ``key=value`` text plus an optional JSON twin (sorted keys)."""
    with open(text_path, "w", encoding="utf-8") as fh:
        for k in sorted(values):
            fh.write(f"{k}={values[k]!r}\n" if isinstance(values[k], float) else f"{k}={values[k]}\n")
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(values, fh, indent=2, sort_keys=True)
            fh.write("\n")
