"""Adversarial training loop for the unpaired deraining model.

One step follows the usual GAN ordering: forward the generators once, update
the clean-image discriminator, update the streak discriminator, then update
both generators jointly against the freshly stepped discriminators. The three
optimizers are kept separate so Adam moments never move parameters of a
network that was not part of the current update (relevant for ablations).
"""

import hashlib
import logging
import math
from dataclasses import dataclass, fields, replace
from itertools import chain
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import torch
from torch.optim import Adam

from .background import background_guidance_loss
from .data import UnpairedDataset, sample_unpaired_batch, save_image
from .losses import LossBundle, LossWeights, cycle_loss, total_generator_loss
from .luminance import (
    enhance_luminance,
    lum_adv_discriminator_loss,
    lum_adv_generator_loss,
)
from .networks import (
    ARCH_VERSION,
    ModelBundle,
    NetworkConfig,
    build_generator,
    build_model_bundle,
)
from .streaks import (
    compose_fake_rainy,
    extract_streaks,
    rain_guidance_discriminator_loss,
    rain_guidance_generator_loss,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Malformed or unknown training configuration input."""


class TrainingDiverged(RuntimeError):
    """A loss component went non-finite during training."""


_INT_FIELDS = frozenset(
    {"total_iters", "batch_size", "train_size", "seed", "base_channels",
     "checkpoint_every", "sample_every"}
)
_OPT_INT_FIELDS = frozenset({"decay_start", "resblocks"})
_FLOAT_FIELDS = frozenset({"lr", "beta1", "beta2", "w1", "w2", "w3", "w4", "lum_gamma"})
_BOOL_FIELDS = frozenset({"no_rgm", "no_bgm", "no_lum"})


@dataclass(frozen=True)
class TrainConfig:
    """Flat, fully serializable description of one training run."""

    total_iters: int = 2000
    decay_start: Optional[int] = None  # None: decay begins at total_iters // 2
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 1
    train_size: int = 64
    seed: int = 0
    w1: float = 1.0
    w2: float = 5.0
    w3: float = 1.0
    w4: float = 0.5
    no_rgm: bool = False
    no_bgm: bool = False
    no_lum: bool = False
    lum_gamma: float = 0.6
    base_channels: int = 64
    resblocks: Optional[int] = None  # None: resolved from train_size
    checkpoint_every: int = 1000
    sample_every: int = 0  # 0 disables sample grids

    def __post_init__(self):
        if self.total_iters < 0:
            raise ConfigError("total_iters must be >= 0")
        if self.decay_start is not None and not 0 <= self.decay_start <= self.total_iters:
            raise ConfigError("decay_start must lie in [0, total_iters]")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.train_size < 16 or self.train_size % 4 != 0:
            raise ConfigError("train_size must be >= 16 and divisible by 4")
        for name in ("w1", "w2", "w3", "w4"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0")
        if not 0.0 < self.lum_gamma < 1.0:
            raise ConfigError("lum_gamma must lie in (0, 1)")
        if self.base_channels < 4:
            raise ConfigError("base_channels must be >= 4")
        if self.resblocks is not None and self.resblocks < 1:
            raise ConfigError("resblocks must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.sample_every < 0:
            raise ConfigError("sample_every must be >= 0")

    @property
    def effective_decay_start(self) -> int:
        return self.total_iters // 2 if self.decay_start is None else self.decay_start

    @property
    def weights(self) -> LossWeights:
        """Loss weights with the ablation switches already applied."""
        return LossWeights(self.w1, self.w2, self.w3, self.w4).with_ablations(
            no_rgm=self.no_rgm, no_bgm=self.no_bgm, no_lum=self.no_lum
        )

    @property
    def network_config(self) -> NetworkConfig:
        base = NetworkConfig.for_size(self.train_size)
        gc = base.num_resblocks_gc if self.resblocks is None else self.resblocks
        return replace(base, base_channels=self.base_channels, num_resblocks_gc=gc)

    def to_flat(self) -> Dict[str, str]:
        """Serialize every field to a string, in declaration order."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in _OPT_INT_FIELDS:
                out[f.name] = "auto" if v is None else str(v)
            elif f.name in _BOOL_FIELDS:
                out[f.name] = "true" if v else "false"
            else:
                out[f.name] = repr(v) if isinstance(v, float) else str(v)
        return out

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> "TrainConfig":
        """Build a config from string key=value pairs; unknown keys are errors."""
        kwargs = {}
        for key, raw in mapping.items():
            if key in _INT_FIELDS:
                kwargs[key] = _parse_int(key, raw)
            elif key in _OPT_INT_FIELDS:
                kwargs[key] = None if raw.lower() in ("auto", "none", "") else _parse_int(key, raw)
            elif key in _FLOAT_FIELDS:
                kwargs[key] = _parse_float(key, raw)
            elif key in _BOOL_FIELDS:
                kwargs[key] = _parse_bool(key, raw)
            else:
                raise ConfigError(f"unknown config key: {key!r}")
        return cls(**kwargs)

    @property
    def config_hash(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in sorted(self.to_flat().items()))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


assert _INT_FIELDS | _OPT_INT_FIELDS | _FLOAT_FIELDS | _BOOL_FIELDS == {
    f.name for f in fields(TrainConfig)
}, "config field tables out of sync with TrainConfig"


def _parse_int(key, raw) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected integer, got {raw!r}") from None


def _parse_float(key, raw) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected number, got {raw!r}") from None


def _parse_bool(key, raw) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"config key {key!r}: expected true/false, got {raw!r}")


def parse_flat_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse `key = value` lines; '#' comments and blank lines are ignored."""
    out: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config_file(path) -> Dict[str, str]:
    return parse_flat_text(Path(path).read_text(encoding="utf-8"), source=str(path))


def write_config_file(cfg: TrainConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = "".join(f"{k}={v}\n" for k, v in cfg.to_flat().items())
    Path(path).write_text(lines, encoding="utf-8")


def lr_schedule(step: int, total_iters: int, decay_start: int, lr0: float) -> float:
    """Constant lr0 until decay_start, then linear decay reaching 0 at total_iters."""
    if not 0 <= step < total_iters:
        raise ValueError(f"step {step} outside [0, {total_iters})")
    if step < decay_start:
        return lr0
    return lr0 * (total_iters - step) / (total_iters - decay_start)


@dataclass
class TrainState:
    """Everything mutable about a run: networks, optimizers, step counter."""

    cfg: TrainConfig
    nets: ModelBundle
    opt_g: Adam
    opt_dc: Adam
    opt_ds: Adam
    iteration: int = 0


def setup_training(cfg: TrainConfig) -> TrainState:
    """Seed torch, build the four networks, and attach the three optimizers."""
    torch.manual_seed(cfg.seed)
    nets = build_model_bundle(cfg.network_config)
    betas = (cfg.beta1, cfg.beta2)
    opt_g = Adam(chain(nets.g_c.parameters(), nets.g_r.parameters()), lr=cfg.lr, betas=betas)
    opt_dc = Adam(nets.d_c.parameters(), lr=cfg.lr, betas=betas)
    opt_ds = Adam(nets.d_s.parameters(), lr=cfg.lr, betas=betas)
    return TrainState(cfg=cfg, nets=nets, opt_g=opt_g, opt_dc=opt_dc, opt_ds=opt_ds)


def _set_lr(state: TrainState, lr: float) -> None:
    for opt in (state.opt_g, state.opt_dc, state.opt_ds):
        for group in opt.param_groups:
            group["lr"] = lr


def _check_finite(iteration: int, components: Dict[str, float]) -> None:
    bad = {k: v for k, v in components.items() if not math.isfinite(v)}
    if bad:
        dump = " ".join(f"{k}={v:.6g}" for k, v in components.items())
        raise TrainingDiverged(f"non-finite loss at iteration {iteration}: {dump}")


def train_step(state: TrainState, rainy: torch.Tensor, clean: torch.Tensor) -> LossBundle:
    """Run one optimization step on an unpaired (rainy, clean) batch."""
    cfg = state.cfg
    w = cfg.weights
    nets = state.nets
    it = state.iteration
    _set_lr(state, lr_schedule(it, cfg.total_iters, cfg.effective_decay_start, cfg.lr))

    derained = nets.g_c(rainy)
    need_ds = not cfg.no_rgm
    fake_rainy = compose_fake_rainy(extract_streaks(rainy, derained), clean) if need_ds else None

    d_c_val = 0.0
    if not cfg.no_lum:
        enhanced = enhance_luminance(clean, cfg.lum_gamma)
        d_c_loss = lum_adv_discriminator_loss(
            nets.d_c(clean), nets.d_c(enhanced), nets.d_c(derained.detach())
        )
        state.opt_dc.zero_grad()
        d_c_loss.backward()
        state.opt_dc.step()
        d_c_val = d_c_loss.item()

    d_s_val = 0.0
    if need_ds:
        d_s_loss = rain_guidance_discriminator_loss(
            nets.d_s(rainy), nets.d_s(fake_rainy.detach())
        )
        state.opt_ds.zero_grad()
        d_s_loss.backward()
        state.opt_ds.step()
        d_s_val = d_s_loss.item()

    zero = derained.new_zeros(())
    guid_r = rain_guidance_generator_loss(nets.d_s(fake_rainy)) if w.w1 > 0 else zero
    guid_b = background_guidance_loss(rainy, derained) if w.w2 > 0 else zero
    lum_adv = lum_adv_generator_loss(nets.d_c(derained)) if w.w3 > 0 else zero
    cyc = cycle_loss(rainy, nets.g_r(derained))

    components = {
        "guid_r": guid_r.item(), "guid_b": guid_b.item(),
        "lum_adv_g": lum_adv.item(), "cyc": cyc.item(),
        "d_c": d_c_val, "d_s": d_s_val,
    }
    _check_finite(it, components)

    total = total_generator_loss(guid_r, guid_b, lum_adv, cyc, w)
    state.opt_g.zero_grad()
    total.backward()
    state.opt_g.step()
    state.iteration += 1

    return LossBundle(
        guid_r=components["guid_r"], guid_b=components["guid_b"],
        lum_adv_g=components["lum_adv_g"], cyc=components["cyc"],
        total_g=total.item(), d_c=d_c_val, d_s=d_s_val,
    )


def save_checkpoint(state: TrainState, ckpt_dir) -> Path:
    """Write per-network weight files, optimizer state, and a meta sidecar."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    for name, net in state.nets.named_nets().items():
        torch.save(net.state_dict(), ckpt_dir / f"{name}.pt")
    torch.save(
        {
            "opt_g": state.opt_g.state_dict(),
            "opt_dc": state.opt_dc.state_dict(),
            "opt_ds": state.opt_ds.state_dict(),
            "torch_rng": torch.get_rng_state(),
        },
        ckpt_dir / "optim.pt",
    )
    meta = {
        "arch_version": state.nets.arch_version,
        "iteration": str(state.iteration),
        "config_hash": state.cfg.config_hash,
    }
    meta.update(state.cfg.to_flat())
    (ckpt_dir / "meta.txt").write_text(
        "".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8"
    )
    return ckpt_dir


def _read_meta(ckpt_dir: Path) -> Tuple[Dict[str, str], TrainConfig, int]:
    meta_path = ckpt_dir / "meta.txt"
    if not meta_path.is_file():
        raise FileNotFoundError(f"{ckpt_dir}: not a checkpoint (missing meta.txt)")
    meta = parse_flat_text(meta_path.read_text(encoding="utf-8"), source=str(meta_path))
    version = meta.get("arch_version")
    if version != ARCH_VERSION:
        raise ValueError(
            f"{ckpt_dir}: checkpoint architecture {version!r} does not match "
            f"this build ({ARCH_VERSION!r})"
        )
    iteration = int(meta["iteration"])
    cfg_keys = {f.name for f in fields(TrainConfig)}
    cfg = TrainConfig.from_mapping({k: v for k, v in meta.items() if k in cfg_keys})
    return meta, cfg, iteration


def load_checkpoint(ckpt_dir) -> TrainState:
    """Restore a full training state; bitwise continuation of the saved run."""
    ckpt_dir = Path(ckpt_dir)
    _, cfg, iteration = _read_meta(ckpt_dir)
    state = setup_training(cfg)
    for name, net in state.nets.named_nets().items():
        net.load_state_dict(torch.load(ckpt_dir / f"{name}.pt", weights_only=True))
    blob = torch.load(ckpt_dir / "optim.pt", weights_only=True)
    state.opt_g.load_state_dict(blob["opt_g"])
    state.opt_dc.load_state_dict(blob["opt_dc"])
    state.opt_ds.load_state_dict(blob["opt_ds"])
    torch.set_rng_state(blob["torch_rng"])
    state.iteration = iteration
    return state


def load_derain_generator(ckpt_dir) -> torch.nn.Module:
    """Load only the deraining generator from a checkpoint, in eval mode."""
    ckpt_dir = Path(ckpt_dir)
    _, cfg, _ = _read_meta(ckpt_dir)
    net = build_generator(cfg.network_config, role="derain")
    net.load_state_dict(torch.load(ckpt_dir / "g_c.pt", weights_only=True))
    net.eval()
    return net


def _write_sample_grid(state: TrainState, rainy, derained, out_path) -> None:
    panels = [rainy[0], derained[0].clamp(0, 1)]
    with torch.no_grad():
        panels.append(state.nets.g_r(derained)[0].clamp(0, 1))
    save_image(torch.cat([p.detach() for p in panels], dim=1), out_path)


def train(
    cfg: Optional[TrainConfig],
    dataset: UnpairedDataset,
    out_dir,
    resume: Optional[str] = None,
) -> TrainState:
    """Train to cfg.total_iters, logging losses and checkpointing under out_dir.

    With `resume` pointing at a checkpoint directory the saved config is used
    (a conflicting explicit cfg is an error) and training continues from the
    saved iteration; results match an uninterrupted run bit for bit given the
    same dataset object.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        state = load_checkpoint(resume)
        if cfg is not None and cfg != state.cfg:
            raise ConfigError("resume: explicit config conflicts with checkpoint config")
        cfg = state.cfg
    else:
        if cfg is None:
            raise ConfigError("train: need a config when not resuming")
        state = setup_training(cfg)

    write_config_file(cfg, out_dir / "config.cfg")
    csv_path = out_dir / "losses.csv"
    mode = "a" if resume is not None and csv_path.exists() else "w"

    if cfg.total_iters == 0:
        save_checkpoint(state, out_dir / "ckpt_0000000")
        return state

    with open(csv_path, mode, encoding="utf-8") as csv_file:
        if mode == "w":
            csv_file.write(",".join(LossBundle.CSV_FIELDS) + "\n")
        for step in range(state.iteration, cfg.total_iters):
            rainy, clean = sample_unpaired_batch(
                dataset, cfg.batch_size, step, image_size=cfg.train_size
            )
            bundle = train_step(state, rainy, clean)
            csv_file.write(bundle.csv_row(step) + "\n")
            csv_file.flush()
            done = step + 1
            if done % cfg.checkpoint_every == 0 and done < cfg.total_iters:
                save_checkpoint(state, out_dir / f"ckpt_{done:07d}")
            if cfg.sample_every and done % cfg.sample_every == 0:
                with torch.no_grad():
                    derained = state.nets.g_c(rainy)
                _write_sample_grid(state, rainy, derained, out_dir / "samples" / f"iter_{done:07d}.png")
            if done % 100 == 0 or done == cfg.total_iters:
                log.info("iter %d/%d total_g=%.4f", done, cfg.total_iters, bundle.total_g)

    final = save_checkpoint(state, out_dir / f"ckpt_{state.iteration:07d}")
    log.info("training finished at iteration %d, checkpoint %s", state.iteration, final)
    return state
