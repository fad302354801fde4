"""
Shared configuration management for the library and the CLI.
"""
from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional


class Settings(BaseSettings):
    """Global settings for the audio PEFT toolkit."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="PEFT_",
        case_sensitive=False,
        extra="ignore"
    )

    # Experiment seed override (PEFT_SEED)
    seed: Optional[int] = None

    # Logging
    log_level: str = "INFO"

    # Tuning defaults
    default_prompt_count: int = 16
    default_adapter_hidden: int = 48
    default_adapter_scale: float = 0.1
    default_input_prompt_len: int = 4

    # Optimization defaults
    peft_learning_rate: float = 1e-3
    ft_learning_rate: float = 1e-4
    default_batch_size: int = 8

    # Sweep execution
    sweep_workers: int = 4
    trial_timeout_seconds: int = 3600

    # Gradient verification
    gradcheck_step: float = 1e-4
    gradcheck_tolerance: float = 1e-3


settings = Settings()
