"""Architecture hyperparameters and channel-width bookkeeping."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from ..errors import ConfigError

GOA_VARIANTS = ("off", "object", "object_semantics")
LAA_VARIANTS = ("off", "transformer", "hybrid")

# Base channel widths before the multiplier is applied.
STEM_WIDTHS = (32, 32, 64)
STAGE_WIDTHS = (256, 512, 1024, 2048)   # bottleneck outputs; mid = out // 4
STAGE_BLOCKS = (3, 4, 6, 3)
CONTEXT_WIDTH = 256                      # compressed context features
DECODER_WIDTHS = (512, 192, 64, 32)      # 1/8, 1/4, 1/2 levels and final head


@dataclass(frozen=True)
class ModelConfig:
    guidance_mode: str = "click"         # none | click | trimap
    width_multiplier: float = 0.25
    nca: int = 2                         # cascaded aggregator rounds
    use_gem: bool = True                 # guidance embedding layer
    goa_variant: str = "object_semantics"
    laa_variant: str = "hybrid"
    window_s: int = 7
    pyramid_levels_j: int = 4
    epsilon: float = 1e-6
    focal_gamma: float = 2.0
    attention_token_cap: int = 4096

    def __post_init__(self):
        if self.guidance_mode not in ("none", "click", "trimap"):
            raise ConfigError(f"bad guidance_mode {self.guidance_mode!r}")
        if self.width_multiplier <= 0:
            raise ConfigError("width_multiplier must be > 0")
        if self.nca not in (0, 1, 2):
            raise ConfigError(f"nca must be 0, 1, or 2, got {self.nca}")
        if self.goa_variant not in GOA_VARIANTS:
            raise ConfigError(f"bad goa_variant {self.goa_variant!r}")
        if self.laa_variant not in LAA_VARIANTS:
            raise ConfigError(f"bad laa_variant {self.laa_variant!r}")
        if self.window_s < 1:
            raise ConfigError(f"window_s must be >= 1, got {self.window_s}")
        if self.pyramid_levels_j < 1:
            raise ConfigError("pyramid_levels_j must be >= 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")

    # -- derived widths ----------------------------------------------------

    def scaled(self, base: int) -> int:
        return max(4, round(base * self.width_multiplier))

    @property
    def stem_channels(self) -> tuple[int, int, int]:
        return tuple(self.scaled(c) for c in STEM_WIDTHS)

    @property
    def stage_channels(self) -> tuple[int, int, int, int]:
        return tuple(self.scaled(c) for c in STAGE_WIDTHS)

    @property
    def context_channels(self) -> int:
        return self.scaled(CONTEXT_WIDTH)

    @property
    def decoder_channels(self) -> tuple[int, int, int, int]:
        return tuple(self.scaled(c) for c in DECODER_WIDTHS)

    @property
    def aux_out_channels(self) -> int:
        # trimap logits for coarse guidance, a single alpha channel otherwise
        return 1 if self.guidance_mode == "trimap" else 3

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)

    def with_mode(self, mode: str) -> "ModelConfig":
        return replace(self, guidance_mode=mode)


PRESETS: dict[str, ModelConfig] = {
    # paper-scale architecture
    "full": ModelConfig(width_multiplier=1.0),
    # desk-scale training default
    "tiny": ModelConfig(width_multiplier=0.25),
    # no-aggregation baseline at desk scale
    "baseline": ModelConfig(width_multiplier=0.25, nca=0, use_gem=False,
                            goa_variant="off", laa_variant="off"),
    # minimal widths for gradient checks and shape tests
    "micro": ModelConfig(width_multiplier=0.0625),
}
