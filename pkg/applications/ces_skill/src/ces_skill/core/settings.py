from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # runtime
    threads: int = 1
    log_level: str = "INFO"

    # technology
    alpha: float = 1.0 / 3.0

    # numerics
    fd_step: float = 1e-6
    gradient_tol: float = 1e-8
    step_tol: float = 1e-12
    cost_tol: float = 1e-15
    max_nfev: int = 500
    ridge: float = 1e-10

    # parameter bounds
    bound_margin: float = 1e-4
    rho_floor: float = 1e-6

    # estimation
    multistart: int = 8
    default_lambda_order: int = 1
    default_mu_order: int = 1
    shift_share_horizon: int = 5
    lagged_horizon: int = 1
    lags: list[int] = [2, 3, 4]

    # labor composition
    skill_classes: dict[str, str] = {"high": "h", "medium": "u", "low": "u"}
    skilled_base_group: tuple[str, str, str] = ("high", "male", "middle")
    unskilled_base_group: tuple[str, str, str] = ("medium", "male", "middle")

    class Config:
        env_file = ".env"
        env_prefix = "CES_SKILL_"
        extra = "ignore"

    @property
    def base_groups(self) -> dict[str, tuple[str, str, str]]:
        """Base group per skill type for the efficiency-unit normalisation"""
        return {"h": self.skilled_base_group, "u": self.unskilled_base_group}


settings = Settings()  # type: ignore
