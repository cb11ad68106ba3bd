"""Run configuration: defaults, environment, flat config file, overrides."""
import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from cnir.core.exceptions import ConfigError

# Keys that never change results; left out of the run-directory hash.
_UNHASHED = {"OUTPUT_DIR", "LOG_LEVEL", "THREADS", "SEED", "RUN_TAG"}


class Settings(BaseSettings):
    """Experiment settings with environment variable support (prefix CNIR_)."""

    # Reproducibility
    SEED: int = 1
    THREADS: int = Field(1, ge=1)

    # Query reformulator
    K: int = Field(3, ge=1)
    M: int = Field(5, ge=1)
    LR_REFORMULATOR: float = Field(1e-5, gt=0)
    BATCH_SIZE: int = Field(50, ge=1)
    BASELINE_ON: bool = True
    WITHOUT_REPLACEMENT: bool = True
    CONV_LAYERS: int = Field(1, ge=1)
    FEATURE_MAPS: int = Field(50, ge=1)
    WINDOW_SIZES: tuple[int, ...] = (1, 2, 3)
    TERM_HIDDEN: int = Field(50, ge=1)
    SCORE_HIDDEN: int = Field(50, ge=1)
    EMBEDDING_DIM: int = Field(50, ge=1)

    # KNRM ranker
    RANKER: Literal["knrm", "bm25"] = "knrm"
    KERNELS: int = Field(11, ge=1)
    KERNEL_SIGMA: float = Field(0.1, gt=0)
    EXACT_SIGMA: float = Field(1e-3, gt=0)
    LR_PRETRAIN: float = Field(1e-3, gt=0)
    LR_FINETUNE: float = Field(1e-4, gt=0)
    TRAIN_EMBEDDINGS: bool = True

    # Cooperative schedule
    TRAIN_RANKER_FRE: int = Field(10, ge=1)
    PATIENCE: int = Field(10, ge=1)
    MAX_EPOCHS: int = Field(50, ge=0)
    PRETRAIN_EPOCHS: int = Field(20, ge=0)
    FREEZE_RANKER: bool = False
    REWARD_WINDOW: int = Field(5, ge=1)

    # Retrieval and candidate terms
    POOL_SIZE: int = Field(10, ge=1)
    PRF_K: int = Field(3, ge=1)
    KNOW_TOP: int = Field(20, ge=0)
    CANDIDATE_SOURCE: Literal["knowledge", "prf"] = "knowledge"
    BM25_K1: float = Field(1.2, ge=0)
    BM25_B: float = Field(0.75, ge=0, le=1)

    # Baselines
    RM_LAMBDA: float = Field(0.5, ge=0, le=1)
    RM_MU: float = Field(10.0, gt=0)

    # Evaluation
    REL_THRESHOLD: int = Field(1, ge=1)

    # Paths and output
    DATA_DIR: Path = Path("data")
    OUTPUT_DIR: Path = Path("runs")
    RUN_TAG: str = "cnir"
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    model_config = SettingsConfigDict(
        env_prefix="CNIR_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("WINDOW_SIZES", mode="before")
    @classmethod
    def split_windows(cls, v):
        """Accept "1,2,3" as well as a sequence."""
        if isinstance(v, str):
            v = [part for part in v.replace(" ", "").split(",") if part]
        return v

    @field_validator("WINDOW_SIZES")
    @classmethod
    def windows_positive(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        """Window sizes must be positive and non-empty."""
        if not v or any(w < 1 for w in v):
            raise ValueError("window_sizes must be a non-empty list of positive integers")
        return v

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def upper_level(cls, v):
        return v.upper() if isinstance(v, str) else v

    def canonical_dump(self) -> str:
        """Sorted key=value lines of every result-affecting setting."""
        data = self.model_dump(mode="json")
        data["DATA_DIR"] = str(self.DATA_DIR.resolve())
        lines = [
            f"{key.lower()}={json.dumps(data[key], sort_keys=True)}"
            for key in sorted(data)
            if key not in _UNHASHED
        ]
        return "\n".join(lines)

    def config_hash(self) -> str:
        """SHA-256 of the canonical dump."""
        return hashlib.sha256(self.canonical_dump().encode("utf-8")).hexdigest()

    @property
    def run_dir(self) -> Path:
        """Directory for checkpoints and history of this configuration."""
        return self.OUTPUT_DIR / f"{self.config_hash()[:12]}-seed{self.SEED}"

    def write_conf(self, path: str | Path) -> None:
        """Write every setting back out in the flat config format."""
        data = self.model_dump(mode="json")
        lines = []
        for key in sorted(data):
            value = data[key]
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key.lower()} = {value}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_conf_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    values: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got '{raw.strip()}'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    """Turn ``--set key=value`` arguments into a dict."""
    values: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got '{pair}'")
        key, value = pair.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_settings(
    config_path: str | Path | None = None,
    overrides: dict[str, str] | None = None,
) -> Settings:
    """Build Settings from defaults < environment < config file < overrides.

    Unknown keys in the file or overrides raise ConfigError.
    """
    merged: dict[str, str] = {}
    if config_path is not None:
        merged.update(parse_conf_file(config_path))
    merged.update(overrides or {})

    known = set(Settings.model_fields)
    values = {}
    for key, value in merged.items():
        name = key.upper()
        if name not in known:
            raise ConfigError(f"unknown config key: {key}")
        values[name] = value
    try:
        return Settings(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


@lru_cache
def get_settings() -> Settings:
    """Cached settings instance from defaults and environment only."""
    return Settings()
