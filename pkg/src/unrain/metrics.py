"""Full-reference quality metrics and batch evaluation over paired test sets.

PSNR uses MAX=1 for [0, 1] images and is computed in float64. SSIM follows
the standard single-scale formulation (11x11 Gaussian window, sigma 1.5,
K1=0.01, K2=0.03) with valid-window aggregation; colour images are scored per
RGB channel and averaged. Note that several deraining benchmarks instead
report SSIM on a luma channel, so cross-paper numbers are not comparable.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import torch

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP_DB = 100.0


def _to_f64(x: torch.Tensor) -> np.ndarray:
    return x.detach().cpu().numpy().astype(np.float64)


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """Peak signal-to-noise ratio in dB between two [0, 1] images.

    Identical images return the 100 dB cap instead of infinity.
    """
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float(np.mean((_to_f64(a) - _to_f64(b)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _ssim_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    t = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    g = np.exp(-(t**2) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    """SSIM of one 2-D channel, mean over all fully-valid window placements."""
    h, w = a.shape
    n = SSIM_WINDOW
    window = _ssim_window().reshape(-1)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2

    # all valid n*n patches as (num_windows, n*n) via stride tricks
    pa = np.lib.stride_tricks.sliding_window_view(a, (n, n)).reshape(-1, n * n)
    pb = np.lib.stride_tricks.sliding_window_view(b, (n, n)).reshape(-1, n * n)
    mu_a = pa @ window
    mu_b = pb @ window
    var_a = (pa**2) @ window - mu_a**2
    var_b = (pb**2) @ window - mu_b**2
    cov = (pa * pb) @ window - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: torch.Tensor, b: torch.Tensor) -> float:
    """Mean SSIM between two (H, W, 3) images in [0, 1], averaged over RGB."""
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(
            f"ssim: image {tuple(a.shape)} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    na, nb = _to_f64(a), _to_f64(b)
    return float(np.mean([_ssim_channel(na[:, :, ch], nb[:, :, ch]) for ch in range(3)]))


@dataclass
class EvalReport:
    """Per-image and aggregate scores for one model over one paired test set."""

    model_tag: str
    per_image: List[Tuple[str, float, float]] = field(default_factory=list)
    failed: List[str] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([p for _, p, _ in self.per_image])) if self.per_image else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s for _, _, s in self.per_image])) if self.per_image else float("nan")


def evaluate(derain_fn, pairs, model_tag: str = "model") -> EvalReport:
    """Score `derain_fn` (rainy -> restored, both (H, W, 3)) over paired samples.

    Images whose restoration raises are recorded under `failed` and excluded
    from the means rather than aborting the sweep.
    """
    report = EvalReport(model_tag=model_tag)
    for name, rainy, gt in pairs:
        try:
            with torch.no_grad():
                out = derain_fn(rainy)
            report.per_image.append((name, psnr(out, gt), ssim(out, gt)))
        except Exception:
            log.exception("evaluation failed on %s", name)
            report.failed.append(name)
    return report


def write_eval_csv(report: EvalReport, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("# ssim computed per RGB channel and averaged (not luma)\n")
        writer = csv.writer(f)
        writer.writerow(["name", "psnr_db", "ssim"])
        for name, p, s in report.per_image:
            writer.writerow([name, f"{p:.4f}", f"{s:.6f}"])
        writer.writerow(["mean", f"{report.mean_psnr:.4f}", f"{report.mean_ssim:.6f}"])


def format_eval_table(reports: List[EvalReport]) -> str:
    """Render one aligned text table comparing several evaluation reports."""
    rows = [("model", "psnr_db", "ssim", "images", "failed")]
    for r in reports:
        rows.append(
            (r.model_tag, f"{r.mean_psnr:.2f}", f"{r.mean_ssim:.4f}", str(len(r.per_image)), str(len(r.failed)))
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
