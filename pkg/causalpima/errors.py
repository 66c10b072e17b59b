class CausalPimaError(Exception):
    pass


class ContractViolation(CausalPimaError, ValueError):
    pass


class DomainError(ContractViolation):
    def __init__(self, operation: str, message: str):
        self.operation = operation
        super().__init__(f"{operation}: {message}")


class ConfigurationError(CausalPimaError, ValueError):
    pass


class CapacityError(CausalPimaError):
    pass


class AcyclicityError(ContractViolation):
    pass


class FactorizationError(CausalPimaError, ArithmeticError):
    def __init__(self, matrix: str, message: str = "not symmetric positive definite"):
        self.matrix = matrix
        super().__init__(f"{matrix}: {message}")


class NumericalFault(CausalPimaError, ArithmeticError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)

    def __str__(self) -> str:
        if not self.diagnostics:
            return self.args[0]

        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{self.args[0]} ({details})"


class TrainingFault(NumericalFault):
    pass
