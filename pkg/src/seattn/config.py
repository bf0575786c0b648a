"""Training configuration: a flat dataclass serialized as ``key = value`` lines."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigurationError

# key -> one-line description, written as a comment above each key
DOCS = {
    "data_seed": "seed of the synthetic dataset",
    "data_count": "total synthetic samples (train + val)",
    "train_count": "samples in the training split; the rest are validation",
    "image_size": "output resolution in pixels; must equal 4 * 2**(len(gen_channels) - 1)",
    "seed": "seed for initialization, batch order, and noise",
    "epochs": "adversarial training epochs",
    "pretrain_epochs": "encoder warmup epochs on real images before adversarial training",
    "batch_size": "batch size M (>= 2; also the word-loss candidate pool)",
    "lr_g": "Adam learning rate for generator and encoders",
    "lr_d": "Adam learning rate for the discriminator",
    "lr_pretrain": "Adam learning rate during encoder warmup",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "adam_eps": "Adam denominator epsilon",
    "gamma": "weight of the discriminator-side objective in the total loss",
    "lam": "share of the sentence-level adversarial term; 1.0 disables the word-level loss",
    "mu": "sharpening of the word-level retrieval softmax",
    "mu1": "sharpening of the word-to-region attention",
    "gp_k": "gradient penalty weight",
    "gp_p": "gradient penalty exponent",
    "kl_weight": "weight of the conditioning-augmentation KL term",
    "z_dim": "noise dimension",
    "ca_dim": "conditioning-augmentation output dimension",
    "df_hidden": "hidden width of the fusion MLPs",
    "gen_channels": "generator widths: stem, then one per upsampling block",
    "disc_channels": "discriminator widths: stem, then one per downsampling block",
    "checkpoint_every": "write a checkpoint every N steps (0: only at the end)",
    "eval_count": "generated samples used by the final evaluation",
}


@dataclass
class TrainConfig:
    data_seed: int = 42
    data_count: int = 2200
    train_count: int = 2000
    image_size: int = 32
    seed: int = 42
    epochs: int = 5
    pretrain_epochs: int = 1
    batch_size: int = 16
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    lr_pretrain: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    gamma: float = 5.0
    lam: float = 0.2
    mu: float = 5.0
    mu1: float = 10.0
    gp_k: float = 2.0
    gp_p: float = 6.0
    kl_weight: float = 1.0
    z_dim: int = 100
    ca_dim: int = 128
    df_hidden: int = 64
    gen_channels: tuple = (256, 128, 64, 32)
    disc_channels: tuple = (32, 64, 128, 256)
    checkpoint_every: int = 0
    eval_count: int = 1000

    def __post_init__(self):
        self.gen_channels = tuple(int(c) for c in self.gen_channels)
        self.disc_channels = tuple(int(c) for c in self.disc_channels)
        self.validate()

    def validate(self):
        for name in ("lr_g", "lr_d", "lr_pretrain", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 <= self.beta1 < 1.0:
            raise ConfigurationError(f"beta1 must lie in [0, 1), got {self.beta1}")
        if not 0.0 < self.beta2 < 1.0:
            raise ConfigurationError(f"beta2 must lie in (0, 1), got {self.beta2}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lam must lie in [0, 1], got {self.lam}")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2")
        if self.image_size != 4 * 2 ** (len(self.gen_channels) - 1):
            raise ConfigurationError(
                f"image_size {self.image_size} does not match {len(self.gen_channels) - 1} generator upsamplings")
        if self.image_size != 4 * 2 ** (len(self.disc_channels) - 1):
            raise ConfigurationError(
                f"image_size {self.image_size} does not match {len(self.disc_channels) - 1} discriminator downsamplings")
        if min(self.epochs, self.pretrain_epochs, self.checkpoint_every) < 0:
            raise ConfigurationError("epoch and cadence counts must be non-negative")

    def to_text(self) -> str:
        out = ["# seattn training configuration"]
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ", ".join(str(v) for v in val)
            elif isinstance(val, float):
                val = repr(val)
            out.append(f"# {DOCS[f.name]}")
            out.append(f"{f.name} = {val}")
        return "\n".join(out) + "\n"

    @classmethod
    def parse_value(cls, key: str, val: str):
        """Parse one textual value with the type of the key's default."""
        kind = type(getattr(_DEFAULTS, key, None)) if key in _NAMES else None
        if kind is None:
            raise ConfigurationError(f"unknown key {key!r}")
        try:
            if kind is tuple:
                return tuple(int(v) for v in val.split(","))
            return kind(val)
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key}: {val!r}") from exc

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        kv = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"line {n}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key in kv:
                raise ConfigurationError(f"line {n}: duplicate key {key!r}")
            try:
                kv[key] = cls.parse_value(key, val)
            except ConfigurationError as exc:
                raise ConfigurationError(f"line {n}: {exc}") from exc
        return cls(**kv)

    def replace(self, **changes) -> "TrainConfig":
        kv = {f.name: getattr(self, f.name) for f in fields(self)}
        unknown = set(changes) - set(kv)
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        kv.update(changes)
        return TrainConfig(**kv)


_NAMES = {f.name for f in fields(TrainConfig)}
_DEFAULTS = TrainConfig()
