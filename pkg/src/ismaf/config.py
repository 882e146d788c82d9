"""Training configuration and its flat key=value file format."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .fusion import FUSION_KINDS


@dataclass(frozen=True)
class TrainConfig:
    d: int = 300
    heads: int = 8
    batch_size: int = 64
    epochs: int = 50
    lr: float = 0.002
    lr_decay: float = 0.98
    dropout: float = 0.5
    tau_scl: float = 0.5
    tau_cmca: float = 0.5
    lambda1: float = 0.3
    lambda2: float = 0.7
    lambda3: float = 0.4
    lambda4: float = 0.4
    theta: float = 0.5
    seed: int = 0
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2
    ablate_mre: bool = False
    ablate_cmca: bool = False
    ablate_ml: bool = False
    ablate_af: bool = False
    fusion: str = "af"
    token_len: int = 6
    gat_layers: int = 2
    gat_leaky_slope: float = 0.2
    kernel_sizes: tuple[int, ...] = (3, 4, 5)
    connect_kinds: str = "all"

    def __post_init__(self):
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ValueError(
                f"split fractions must sum to 1, got "
                f"{(self.train_frac, self.val_frac, self.test_frac)}"
            )
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("lr", "lr_decay", "tau_scl", "tau_cmca"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError(f"theta must lie in [0, 1), got {self.theta}")
        if self.fusion not in FUSION_KINDS:
            raise ValueError(f"fusion must be one of {FUSION_KINDS}, got {self.fusion!r}")
        if self.d % self.token_len != 0:
            raise ValueError(f"token_len {self.token_len} must divide d {self.d}")
        if self.gat_layers < 0:
            raise ValueError(f"gat_layers must be >= 0, got {self.gat_layers}")
        if self.d < len(self.kernel_sizes):
            raise ValueError(
                f"d {self.d} too small for {len(self.kernel_sizes)} kernel sizes"
            )

    @property
    def lambdas(self) -> tuple[float, float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_frac, self.val_frac, self.test_frac)

    def effective_lambdas(self) -> tuple[float, float, float, float]:
        """Ablation flags zero out the matching loss weight."""
        return (
            0.0 if self.ablate_mre else self.lambda1,
            0.0 if self.ablate_cmca else self.lambda2,
            0.0 if self.ablate_ml else self.lambda3,
            0.0 if self.ablate_af else self.lambda4,
        )

    def effective_fusion(self) -> str:
        """Ablating adaptive fusion falls back to plain concatenation."""
        if self.ablate_af and self.fusion == "af":
            return "is-concat"
        return self.fusion

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            out[f.name] = list(val) if isinstance(val, tuple) else val
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        clean = dict(raw)
        if "kernel_sizes" in clean:
            clean["kernel_sizes"] = tuple(int(k) for k in clean["kernel_sizes"])
        return cls(**clean)


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False,
               "yes": True, "no": False}


def _parse_value(name: str, text: str):
    text = text.strip()
    if name in ("fusion", "connect_kinds"):
        return text
    if name.startswith("ablate_"):
        if text.lower() not in _BOOL_WORDS:
            raise ValueError(f"{name}: expected a boolean, got {text!r}")
        return _BOOL_WORDS[text.lower()]
    if name == "kernel_sizes":
        return tuple(int(part) for part in text.replace(",", " ").split())
    if name in ("d", "heads", "batch_size", "epochs", "seed", "token_len", "gat_layers"):
        return int(text)
    return float(text)


def load_config(path) -> TrainConfig:
    """Read a flat ``key = value`` file; '#' starts a comment."""
    raw: dict = {}
    path = Path(path)
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
        name, text = (part.strip() for part in line.split("=", 1))
        try:
            raw[name] = _parse_value(name, text)
        except ValueError as exc:
            raise ValueError(f"{path}:{line_no}: {exc}") from exc
    return TrainConfig.from_dict(raw)


def save_config(config: TrainConfig, path) -> None:
    lines = []
    for name, val in config.to_dict().items():
        if isinstance(val, list):
            val = ",".join(str(v) for v in val)
        lines.append(f"{name} = {val}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
