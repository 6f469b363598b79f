from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    PROJECT_NAME: str = "Behavior-Guided RL"
    VERSION: str = "1.0.0"
    DESCRIPTION: str = "Wasserstein behavioral embeddings for ES and policy-gradient optimization"

    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = "logs/bgrl.log"
    LOG_MAX_SIZE: int = 10485760  # 10MB
    LOG_BACKUP_COUNT: int = 5

    BGRL_THREADS: int = Field(1, ge=1)
    OUTPUT_DIR: str = "runs"

    ENUMERATION_LIMIT: int = 100_000
    EXACT_OT_MAX_SUPPORT: int = 512
    EXP_CLAMP: float = 30.0
    RATIO_CLIP: float = 1e3


settings = Settings()
