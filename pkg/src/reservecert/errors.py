"""Exception hierarchy. Every error carries the stage that raised it."""


class ReserveCertError(Exception):
    """Base class for all package errors."""

    stage = "core"

    def to_record(self) -> dict:
        return {"error": type(self).__name__, "stage": self.stage, "message": str(self)}


class SchemaError(ReserveCertError):
    stage = "auction_log"


class RowError(ReserveCertError):
    stage = "auction_log"

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyPanelError(ReserveCertError):
    stage = "auction_log"


class FitError(ReserveCertError):
    stage = "policy_catalog"


class CatalogError(ReserveCertError):
    stage = "policy_catalog"


class UndefinedLiftError(ReserveCertError):
    stage = "replay"


class InsufficientReplicatesError(ReserveCertError):
    stage = "uncertainty_decision"


class DegeneratePolicyError(ReserveCertError):
    stage = "support_diagnostics"


class ContractError(ReserveCertError):
    stage = "validation"


class ConfigError(ReserveCertError):
    stage = "config"


class DependencyError(ReserveCertError):
    stage = "cli"
