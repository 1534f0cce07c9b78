"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or inconsistent input (dimension mismatch, empty batch, bad file)."""


class ConfigError(ValueError):
    """A configuration violates one of its invariants."""


class DivergenceError(RuntimeError):
    """Model parameters became non-finite during federated training."""

    def __init__(self, round_index: int, message: str = ""):
        self.round_index = round_index
        super().__init__(message or f"non-finite global parameters after round {round_index}")
