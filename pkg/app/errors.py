"""
Error hierarchy for the weight predictor.

Every error carries the exit code the CLI returns for it:
1 validation/config, 2 IO, 3 numeric failure.
"""


class MWPError(Exception):
    exit_code = 1


class ConfigError(MWPError):
    pass


class ContractError(MWPError):
    pass


class DimensionError(MWPError):
    pass


class DomainError(MWPError):
    pass


class DegenerateFeatureError(DomainError):
    def __init__(self, feature: str, sigma: float):
        super().__init__(f"Feature '{feature}' is degenerate on the training split (sigma={sigma:.3e})")
        self.feature = feature
        self.sigma = sigma


class VocabularyError(MWPError):
    pass


class TemplateError(MWPError):
    def __init__(self, placeholder: str):
        super().__init__(f"Report template is missing a value for '{placeholder}'")
        self.placeholder = placeholder


class ParseError(MWPError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DatasetIOError(MWPError):
    exit_code = 2


class NumericError(MWPError):
    exit_code = 3
