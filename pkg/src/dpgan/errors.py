"""Exception hierarchy shared by every module."""


class DPGANError(Exception):
    pass


class ContractViolation(DPGANError, ValueError):
    """A caller broke an operation's precondition."""


class ShapeError(ContractViolation):
    def __init__(self, primitive, *shapes, detail=""):
        self.primitive = primitive
        self.shapes = shapes
        msg = f"{primitive}: incompatible shapes {', '.join(str(s) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ValidationError(ContractViolation):
    """Invalid user-supplied data such as a malformed Markov chain or discount."""


class ConfigError(DPGANError):
    def __init__(self, message, keys=()):
        self.keys = list(keys)
        super().__init__(message)


class CheckpointError(DPGANError):
    pass


class KindMismatch(CheckpointError):
    def __init__(self, path, expected, actual):
        self.expected, self.actual = expected, actual
        super().__init__(f"{path}: expected a {expected} checkpoint, found {actual}")
