from pydantic_settings import BaseSettings
from typing import Optional
from dotenv import load_dotenv

load_dotenv()

class Settings(BaseSettings):
    PROJECT_NAME: str = "Harvest Fair Rates"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None

    # Numerical precision
    DELTA: float = 1e-9
    FEASIBILITY_TOL: float = 1e-9
    MAX_BISECTIONS: int = 200

    # Packing approximation
    EPSILON: float = 0.1
    FIXING_SLACK: float = 1e-9
    EXP_CLAMP: float = 700.0
    PACKING_SAFETY_FACTOR: float = 10.0
    PACKING_MAX_ITERATIONS: int = 4000
    PACKING_ACCURACY_SPLIT: float = 0.5
    PACKING_STEP_RULE: str = "line_search"
    FPTAS_SEARCH_PRECISION: float = 1e-6

    # Exact oracle and brute-force guards
    ORACLE_MAX_RATES: int = 24
    ENUMERATION_MAX_NODES: int = 6
    LP_DENOMINATOR_LIMIT: int = 10**12

    class Config:
        case_sensitive = True

settings = Settings()
