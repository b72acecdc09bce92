from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field

from ces_skill.core.errors import ConfigError
from ces_skill.models.instruments import InstrumentKind

Subcommand = Literal["validate", "simulate", "instruments", "estimate", "elasticities", "decompose", "report"]

INPUT_FIELDS = ("panel", "industry", "labor", "investment", "cpi", "capital", "trend_config", "estimates")


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    subcommand: Subcommand
    panel: Path | None = None
    industry: Path | None = None
    labor: Path | None = None
    investment: Path | None = None
    cpi: Path | None = None
    capital: Path | None = None
    trend_config: Path | None = None
    estimates: Path | None = None
    instrument: InstrumentKind = "shift_share"
    horizon: int | None = Field(default=None, ge=1)
    out: Path = Path("out")
    seed: int = Field(default=0, ge=0)
    force: bool = False
    verbose: bool = False

    # simulate
    countries: int = Field(default=14, ge=1)
    years: int = Field(default=36, ge=2)
    industries: int = Field(default=10, ge=1)
    wedge_sd: float = Field(default=0.0, ge=0.0)

    # decompose
    base: str | None = None
    from_year: int | None = None
    to_year: int | None = None

    trend_report: bool = False

    def check_inputs(self) -> None:
        missing = [
            f"--{name.replace('_', '-')} {getattr(self, name)}"
            for name in INPUT_FIELDS
            if getattr(self, name) is not None and not Path(getattr(self, name)).is_file()
        ]
        if missing:
            raise ConfigError(f"input files not found: {missing}")

    def require(self, *names: str) -> None:
        absent = [f"--{n.replace('_', '-')}" for n in names if getattr(self, n) is None]
        if absent:
            raise ConfigError(f"{self.subcommand} needs {absent}")

    def fingerprint_fields(self) -> dict[str, Any]:
        """Everything that determines outputs; the output location and overwrite flag do not."""
        return self.model_dump(mode="json", exclude={"out", "force", "verbose"})
