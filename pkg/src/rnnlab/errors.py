"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an operation's preconditions (bad shapes, bad ranges)."""


class DataError(ValueError):
    """Input data is malformed (non-binary frames, out-of-range notes, empty sets)."""


class DivergenceError(RuntimeError):
    """An optimization step produced non-finite values; the trial diverged."""
