"""Miniature detector assembly: backbone -> neck -> per-scale heads.

The four module switches mirror the ablation axes: C2f_EMA in the first
backbone C2f, FasterPW stages in place of the C2f stages, the WFPN fusion
graph in place of the concat neck, and CARAFE in place of nearest upsampling.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ..carafe import CARAFE, CarafeConfig
from ..core.nn import Conv2d, ConvModule, Module, Upsample
from ..core.tensor import Tensor
from ..core import functional as F
from ..ema import C2f, C3
from ..errors import ConfigError, ShapeError
from ..fasterpw import FasterPWStage
from ..wfpn import FUSION_EPS, WFPN, build_wfpn

STRIDES = (8, 16, 32)
CLS_PRIOR = 0.01
# variants for the first backbone block when use_c2f_ema is on
FIRST_BLOCKS = ("c2f_ema", "c2f_fasterpw_ema", "c3_fasterpw_ema")


@dataclass(frozen=True)
class ModelConfig:
    width: int = 16
    depths: tuple[int, int, int, int] = (1, 1, 1, 1)
    neck_depth: int = 1
    num_classes: int = 5
    use_c2f_ema: bool = False
    use_fasterpw: bool = False
    use_wfpn: bool = False
    use_carafe: bool = False
    ema_placement: str = "first"
    first_block: str = "c2f_ema"
    resolution: int = 96
    ema_groups: int | None = None
    ema_kernel: int = 5
    carafe: CarafeConfig = field(default_factory=lambda: CarafeConfig(compressed=8))
    carafe_sites: tuple[bool, bool] = (True, True)   # (P5 -> P4, P4 -> P3) when use_carafe
    concat_weights: str = "normalized"               # or "free" learned scales in Weighted_Concat
    fusion_eps: float = FUSION_EPS
    fasterpw_ratio: int = 2
    fasterpw_mixer: bool = True
    head_width: int | None = None

    def __post_init__(self) -> None:
        if self.resolution < 32 or self.resolution % 32:
            raise ConfigError(f"resolution must be a positive multiple of 32, got {self.resolution}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.width < 2 or self.width % 2:
            raise ConfigError(f"width must be an even integer >= 2, got {self.width}")
        if len(self.depths) != 4 or min(self.depths) < 0:
            raise ConfigError(f"depths needs four non-negative block counts, got {self.depths}")
        if self.ema_placement not in ("first", "all"):
            raise ConfigError(f"ema_placement must be 'first' or 'all', got {self.ema_placement!r}")
        if self.first_block not in FIRST_BLOCKS:
            raise ConfigError(f"first_block must be one of {FIRST_BLOCKS}, got {self.first_block!r}")
        if len(self.carafe_sites) != 2:
            raise ConfigError(f"carafe_sites needs two flags, got {self.carafe_sites}")
        if self.concat_weights not in ("normalized", "free"):
            raise ConfigError(f"concat_weights must be 'normalized' or 'free', got {self.concat_weights!r}")

    @property
    def switches(self) -> tuple[bool, bool, bool, bool]:
        return (self.use_c2f_ema, self.use_fasterpw, self.use_wfpn, self.use_carafe)

    def with_switches(self, c2f_ema: bool, fasterpw: bool, wfpn: bool, carafe: bool) -> "ModelConfig":
        return replace(self, use_c2f_ema=c2f_ema, use_fasterpw=fasterpw, use_wfpn=wfpn, use_carafe=carafe)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        d["carafe_sites"] = list(self.carafe_sites)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "depths" in d:
            d["depths"] = tuple(d["depths"])
        if "carafe_sites" in d:
            d["carafe_sites"] = tuple(bool(v) for v in d["carafe_sites"])
        if isinstance(d.get("carafe"), dict):
            d["carafe"] = CarafeConfig(**d["carafe"])
        return cls(**d)


def _ema_everywhere(cfg: ModelConfig) -> bool:
    return cfg.use_c2f_ema and cfg.ema_placement == "all"


def _c2f(cfg: ModelConfig, ci: int, co: int, n: int, shortcut: bool, ema: bool, rng) -> C2f:
    return C2f(ci, co, n, shortcut, ema=ema, ema_groups=cfg.ema_groups, ema_kernel=cfg.ema_kernel, rng=rng)


def _first_block(cfg: ModelConfig, w: int, rng) -> Module:
    n = cfg.depths[0]
    if not cfg.use_c2f_ema or cfg.first_block == "c2f_ema":
        return _c2f(cfg, w, w, n, True, cfg.use_c2f_ema, rng)
    kw = dict(ema=True, ema_groups=cfg.ema_groups, ema_kernel=cfg.ema_kernel, block="fasterpw", rng=rng)
    if cfg.first_block == "c2f_fasterpw_ema":
        return C2f(w, w, n, True, **kw)
    return C3(w, w, n, True, **kw)


class BaselineStage(Module):
    def __init__(self, cfg: ModelConfig, ci: int, co: int, n: int, rng) -> None:
        super().__init__()
        self.down = ConvModule(ci, co, 3, 2, rng=rng)
        self.c2f = _c2f(cfg, co, co, n, True, _ema_everywhere(cfg), rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.c2f(self.down(x))


class Stages(Module):
    def __init__(self, stages: list[Module]) -> None:
        super().__init__()
        self.n = len(stages)
        for i, s in enumerate(stages, start=1):
            setattr(self, f"s{i}", s)

    def __iter__(self):
        return iter(getattr(self, f"s{i}") for i in range(1, self.n + 1))


class Backbone(Module):
    def __init__(self, cfg: ModelConfig, rng) -> None:
        super().__init__()
        w = cfg.width
        self.stem0 = ConvModule(3, w // 2, 3, 2, rng=rng)
        self.stem1 = ConvModule(w // 2, w, 3, 2, rng=rng)
        self.c2f1 = _first_block(cfg, w, rng)
        widths = [w, 2 * w, 4 * w, 8 * w]
        if cfg.use_fasterpw:
            self.fasterpw = Stages([
                FasterPWStage(widths[i], widths[i + 1], cfg.depths[i + 1], cfg.fasterpw_ratio,
                              cfg.fasterpw_mixer, rng=rng) for i in range(3)])
        else:
            self.stages = Stages([BaselineStage(cfg, widths[i], widths[i + 1], cfg.depths[i + 1], rng)
                                  for i in range(3)])
        self.use_fasterpw = cfg.use_fasterpw

    def forward(self, x: Tensor) -> dict[int, Tensor]:
        y = self.c2f1(self.stem1(self.stem0(x)))
        feats = {}
        for lvl, stage in zip((3, 4, 5), self.fasterpw if self.use_fasterpw else self.stages):
            y = stage(y)
            feats[lvl] = y
        return feats


def _upsampler(cfg: ModelConfig, channels: int, rng, site: int) -> Module:
    if cfg.use_carafe and cfg.carafe_sites[site]:
        return CARAFE(channels, cfg.carafe, rng=rng)
    return Upsample(2)


class ConcatNeck(Module):
    """Top-down then bottom-up path with plain channel concatenation."""

    def __init__(self, cfg: ModelConfig, ch: dict[int, int], rng) -> None:
        super().__init__()
        n, ema = cfg.neck_depth, _ema_everywhere(cfg)
        c3, c4, c5 = ch[3], ch[4], ch[5]
        self.up5 = _upsampler(cfg, c5, rng, 0)
        self.td4 = _c2f(cfg, c5 + c4, c4, n, False, ema, rng)
        self.up4 = _upsampler(cfg, c4, rng, 1)
        self.out3 = _c2f(cfg, c4 + c3, c3, n, False, ema, rng)
        self.down3 = ConvModule(c3, c3, 3, 2, rng=rng)
        self.out4 = _c2f(cfg, c3 + c4, c4, n, False, ema, rng)
        self.down4 = ConvModule(c4, c4, 3, 2, rng=rng)
        self.out5 = _c2f(cfg, c4 + c5, c5, n, False, ema, rng)

    def forward(self, f: dict[int, Tensor]) -> dict[int, Tensor]:
        td4 = self.td4(F.concat_channels([self.up5(f[5]), f[4]]))
        p3 = self.out3(F.concat_channels([self.up4(td4), f[3]]))
        p4 = self.out4(F.concat_channels([self.down3(p3), td4]))
        p5 = self.out5(F.concat_channels([self.down4(p4), f[5]]))
        return {3: p3, 4: p4, 5: p5}


class WFPNNeck(Module):
    """Weighted bidirectional fusion: Weighted_Concat at the two top-down merge
    sites, normalised weighted sums at the bottom-up nodes."""

    def __init__(self, cfg: ModelConfig, ch: dict[int, int], rng) -> None:
        super().__init__()
        n, ema = cfg.neck_depth, _ema_everywhere(cfg)
        graph = build_wfpn(3, topdown_mode="concat")
        sites = iter(range(2))   # graph order visits the P5 -> P4 edge first
        self.wfpn = WFPN(
            graph, ch,
            up=lambda c: _upsampler(cfg, c, rng, next(sites)),
            down=lambda c: ConvModule(c, c, 3, 2, rng=rng),
            block=lambda ci, co, node: _c2f(cfg, ci, co, n, False, ema, rng),
            eps=cfg.fusion_eps, rng=rng, normalize_concat=cfg.concat_weights == "normalized")

    def forward(self, f: dict[int, Tensor]) -> dict[int, Tensor]:
        return self.wfpn(f)


class ScaleHead(Module):
    def __init__(self, c: int, hidden: int, num_classes: int, rng) -> None:
        super().__init__()
        self.box0 = ConvModule(c, hidden, 3, rng=rng)
        self.box1 = Conv2d(hidden, 4, 1, rng=rng)
        self.cls0 = ConvModule(c, hidden, 3, rng=rng)
        self.cls1 = Conv2d(hidden, num_classes, 1, rng=rng)
        self.box1.bias.data[:] = math.log(math.expm1(1.5))
        self.cls1.bias.data[:] = -math.log((1 - CLS_PRIOR) / CLS_PRIOR)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return self.box1(self.box0(x)), self.cls1(self.cls0(x))


class Head(Module):
    def __init__(self, cfg: ModelConfig, ch: dict[int, int], rng) -> None:
        super().__init__()
        hidden = cfg.head_width or ch[3]
        self.p3 = ScaleHead(ch[3], hidden, cfg.num_classes, rng)
        self.p4 = ScaleHead(ch[4], hidden, cfg.num_classes, rng)
        self.p5 = ScaleHead(ch[5], hidden, cfg.num_classes, rng)

    def forward(self, f: dict[int, Tensor]) -> "HeadOutput":
        out = HeadOutput()
        for lvl, stride, head in zip((3, 4, 5), STRIDES, (self.p3, self.p4, self.p5)):
            box, cls = head(f[lvl])
            out.box[stride] = box
            out.cls[stride] = cls
        return out


@dataclass
class HeadOutput:
    """Per stride: box map (N x 4 x H x W, raw side distances) and class logits."""

    box: dict[int, Tensor] = field(default_factory=dict)
    cls: dict[int, Tensor] = field(default_factory=dict)

    @property
    def strides(self) -> tuple[int, ...]:
        return tuple(sorted(self.box))


class Detector(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0) -> None:
        super().__init__()
        self.cfg, self.seed = cfg, seed
        rng = np.random.default_rng(seed)
        w = cfg.width
        ch = {3: 2 * w, 4: 4 * w, 5: 8 * w}
        self.backbone = Backbone(cfg, rng)
        self.neck = WFPNNeck(cfg, ch, rng) if cfg.use_wfpn else ConcatNeck(cfg, ch, rng)
        self.head = Head(cfg, ch, rng)

    def forward(self, batch: Tensor) -> HeadOutput:
        return forward(self, batch)


def build_model(cfg: ModelConfig, seed: int = 0) -> Detector:
    return Detector(cfg, seed)


def forward(model: Detector, batch: Tensor) -> HeadOutput:
    r = model.cfg.resolution
    if batch.ndim != 4 or batch.shape[1] != 3 or batch.shape[2:] != (r, r):
        raise ShapeError(f"expected an N x 3 x {r} x {r} batch, got {batch.shape}")
    return model.head(model.neck(model.backbone(batch)))
