"""Dataset ingestion, deterministic synthetic rain, and unpaired sampling.

PNG pixels map to [0, 1] as v / 255 exactly. Rainy-domain and clean-domain
indices are sampled from independent per-step streams, so the two batches are
genuinely unpaired and any run can be reproduced (or resumed) from just
(seed, step).
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

log = logging.getLogger(__name__)

MIN_IMAGE_SIDE = 16


def load_image(path) -> torch.Tensor:
    """Load an 8-bit RGB image as a float32 (H, W, 3) tensor in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    if arr.shape[0] < MIN_IMAGE_SIDE or arr.shape[1] < MIN_IMAGE_SIDE:
        raise ValueError(f"{path}: image smaller than {MIN_IMAGE_SIDE}px minimum")
    return torch.from_numpy(arr)


def save_image(x: torch.Tensor, path) -> None:
    """Save an (H, W, 3) tensor in [0, 1] as an 8-bit PNG."""
    arr = x.detach().cpu().clamp(0, 1).numpy()
    arr8 = np.rint(arr * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr8).save(path)


@dataclass(frozen=True)
class SyntheticRainSpec:
    """Parameters of the synthetic streak generator (additive rain model)."""

    angle_deg: float = -10.0
    streak_length_px: int = 9
    density: float = 0.03
    intensity: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not -45.0 <= self.angle_deg <= 45.0:
            raise ValueError(f"angle_deg must lie in [-45, 45], got {self.angle_deg}")
        if self.streak_length_px < 1:
            raise ValueError("streak_length_px must be positive")
        if not 0.0 <= self.density <= 1.0:
            raise ValueError(f"density must lie in [0, 1], got {self.density}")
        if not 0.0 < self.intensity <= 1.0:
            raise ValueError(f"intensity must lie in (0, 1], got {self.intensity}")


def _line_offsets(angle_deg: float, length: int) -> List[Tuple[int, int]]:
    """Integer (dy, dx) offsets of a centred line tilted angle_deg off vertical."""
    theta = math.radians(angle_deg)
    offsets = []
    for i in range(length):
        t = i - (length - 1) / 2.0
        dydx = (round(t * math.cos(theta)), round(t * math.sin(theta)))
        if dydx not in offsets:
            offsets.append(dydx)
    return offsets


def _shift_add(acc: np.ndarray, src: np.ndarray, dy: int, dx: int) -> None:
    h, w = src.shape
    ys, ye = max(0, dy), h + min(0, dy)
    xs, xe = max(0, dx), w + min(0, dx)
    if ys >= ye or xs >= xe:
        return
    acc[ys:ye, xs:xe] += src[ys - dy : ye - dy, xs - dx : xe - dx]


def synthesize_rain(
    c: torch.Tensor, spec: SyntheticRainSpec
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Render seeded rain streaks over a clean image.

    Salt noise (one random amplitude per seeded origin) is smeared along the
    streak direction; every seed paints a full-brightness line, overlaps clip.
    Returns (rainy, streaks) with rainy = clamp01(c + streaks). Bit-identical
    for identical (c, spec).
    """
    h, w = int(c.shape[-3]), int(c.shape[-2])
    rng = np.random.default_rng(spec.seed)
    hits = rng.random((h, w)) < spec.density
    amps = 0.5 + 0.5 * rng.random((h, w))
    salt = np.where(hits, amps, 0.0)

    layer = np.zeros((h, w), dtype=np.float64)
    for dy, dx in _line_offsets(spec.angle_deg, spec.streak_length_px):
        _shift_add(layer, salt, dy, dx)
    layer = np.clip(layer, 0.0, 1.0) * spec.intensity

    streaks = torch.from_numpy(np.repeat(layer[:, :, None], 3, axis=2).astype(np.float32))
    streaks = streaks.to(c.device)
    rainy = torch.clamp(c + streaks, 0.0, 1.0)
    return rainy, streaks


def random_clean_image(size: int, seed: int) -> torch.Tensor:
    """Smooth synthetic "clean" content: tinted gradient plus soft blobs and boxes.

    Used to build desk-scale corpora without shipping photographs.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    base = np.empty((size, size, 3))
    for ch in range(3):
        gdir = rng.uniform(-1, 1, size=2)
        base[:, :, ch] = 0.5 + 0.25 * (gdir[0] * (yy - 0.5) + gdir[1] * (xx - 0.5))
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        ry, rx = rng.uniform(0.08, 0.3, size=2)
        color = rng.uniform(-0.35, 0.35, size=3)
        if rng.random() < 0.5:
            d2 = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
            mask = np.exp(-3.0 * d2)
        else:
            # soft-edged rectangle via sigmoid walls
            k = 30.0
            sy = 1 / (1 + np.exp(-k * (yy - (cy - ry)))) * (1 / (1 + np.exp(k * (yy - (cy + ry)))))
            sx = 1 / (1 + np.exp(-k * (xx - (cx - rx)))) * (1 / (1 + np.exp(k * (xx - (cx + rx)))))
            mask = sy * sx
        base += mask[:, :, None] * color[None, None, :]
    lo, hi = base.min(), base.max()
    base = 0.08 + 0.76 * (base - lo) / max(hi - lo, 1e-9)
    return torch.from_numpy(base.astype(np.float32))


@dataclass(frozen=True)
class UnpairedDataset:
    """Independent rainy-domain and clean-domain image path lists."""

    rainy_paths: Tuple[str, ...]
    clean_paths: Tuple[str, ...]
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        if len(self.rainy_paths) < 1 or len(self.clean_paths) < 1:
            raise ValueError("UnpairedDataset needs at least one image per domain")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")

    @classmethod
    def from_dirs(cls, rainy_dir, clean_dir, split="train", seed=0) -> "UnpairedDataset":
        rainy = sorted(str(p) for p in Path(rainy_dir).glob("*.png"))
        clean = sorted(str(p) for p in Path(clean_dir).glob("*.png"))
        return cls(tuple(rainy), tuple(clean), split=split, seed=seed)

    @classmethod
    def from_root(cls, root, split="train", seed=0) -> "UnpairedDataset":
        """Open a corpus directory.

        Synthetic-corpus layout (rainy/, gt/ plus train.list) uses only the
        listed training stems, with the gt images serving as the clean domain.
        Otherwise rainy/ and clean/ subdirectories are used wholesale.
        """
        root = Path(root)
        train_list = root / "train.list"
        if train_list.is_file():
            stems = read_manifest(train_list)
            rainy = tuple(str(root / "rainy" / f"{s}.png") for s in stems)
            clean = tuple(str(root / "gt" / f"{s}.png") for s in stems)
            return cls(rainy, clean, split=split, seed=seed)
        if (root / "rainy").is_dir() and (root / "clean").is_dir():
            return cls.from_dirs(root / "rainy", root / "clean", split=split, seed=seed)
        raise FileNotFoundError(
            f"{root}: expected either train.list with rainy/ and gt/, or rainy/ and clean/ dirs"
        )


def _fit_to_size(img: torch.Tensor, size: int, rng: np.random.Generator) -> torch.Tensor:
    h, w = img.shape[0], img.shape[1]
    if (h, w) == (size, size):
        return img
    if h < size or w < size:
        scale = size / min(h, w)
        nh, nw = max(size, math.ceil(h * scale)), max(size, math.ceil(w * scale))
        nchw = img.movedim(-1, 0).unsqueeze(0)
        img = F.interpolate(nchw, size=(nh, nw), mode="bilinear", align_corners=False)
        img = img.squeeze(0).movedim(0, -1)
        h, w = nh, nw
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[top : top + size, left : left + size, :]


def _load_with_retry(paths: Sequence[str], index: int) -> torch.Tensor:
    failed = set()
    while True:
        path = paths[index]
        if path not in failed:
            for _ in range(3):
                try:
                    return load_image(path)
                except OSError:
                    continue
            failed.add(path)
            log.warning("skipping unreadable image %s", path)
            if len(failed) == len(paths):
                raise RuntimeError("no readable image found in a full pass over the dataset")
        index = (index + 1) % len(paths)


def sample_unpaired_batch(
    ds: UnpairedDataset, batch_size: int, step: int, image_size: int = 64
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Draw one (rainy, clean) batch pair for a training step.

    Index streams for the two domains are independent and fully determined by
    (ds.seed, step), so runs are reproducible and resumable without carrying
    sampler state.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng_r = np.random.default_rng([ds.seed, step, 0])
    rng_c = np.random.default_rng([ds.seed, step, 1])
    rainy, clean = [], []
    for _ in range(batch_size):
        ir = int(rng_r.integers(0, len(ds.rainy_paths)))
        ic = int(rng_c.integers(0, len(ds.clean_paths)))
        rainy.append(_fit_to_size(_load_with_retry(ds.rainy_paths, ir), image_size, rng_r))
        clean.append(_fit_to_size(_load_with_retry(ds.clean_paths, ic), image_size, rng_c))
    return torch.stack(rainy), torch.stack(clean)


class PairedSample(NamedTuple):
    name: str
    rainy: torch.Tensor
    gt: torch.Tensor


def load_paired_testset(root, list_file: Optional[str] = None) -> List[PairedSample]:
    """Load the rainy/ + gt/ paired layout under `root`, ordered by stem.

    An optional manifest restricts the stems (e.g. the held-out split).
    Missing counterparts or per-pair shape mismatches are hard errors.
    """
    root = Path(root)
    rainy_dir, gt_dir = root / "rainy", root / "gt"
    rainy_stems = {p.stem for p in rainy_dir.glob("*.png")} if rainy_dir.is_dir() else set()
    gt_stems = {p.stem for p in gt_dir.glob("*.png")} if gt_dir.is_dir() else set()
    if list_file is not None:
        wanted = set(read_manifest(list_file))
        missing = sorted(wanted - (rainy_stems & gt_stems))
        if missing:
            raise FileNotFoundError(f"{root}: listed stems missing a pair: {missing}")
        rainy_stems = gt_stems = wanted
    unmatched = sorted(rainy_stems ^ gt_stems)
    if unmatched:
        raise FileNotFoundError(f"{root}: stems without a counterpart: {unmatched}")
    pairs = []
    for stem in sorted(rainy_stems):
        r = load_image(rainy_dir / f"{stem}.png")
        g = load_image(gt_dir / f"{stem}.png")
        if r.shape != g.shape:
            raise ValueError(
                f"{stem}: rainy/gt shape mismatch {tuple(r.shape)} vs {tuple(g.shape)}"
            )
        pairs.append(PairedSample(stem, r, g))
    return pairs


def read_manifest(path) -> List[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip()]


def write_manifest(path, stems: Sequence[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(f"{s}\n" for s in stems), encoding="utf-8")


def split_stems(stems: Sequence[str], test_fraction: float, seed: int) -> Tuple[List[str], List[str]]:
    """Deterministic disjoint train/test split of a stem list."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    order = np.random.default_rng(seed).permutation(len(stems))
    n_test = int(round(len(stems) * test_fraction))
    test_idx = set(int(i) for i in order[:n_test])
    train = [s for i, s in enumerate(stems) if i not in test_idx]
    test = [s for i, s in enumerate(stems) if i in test_idx]
    return train, test
