class FimSketchError(Exception):
    """Base class for numerical failures raised by fimsketch."""


class DegenerateQuasimatrixError(FimSketchError, ValueError):
    pass


class DegenerateParticleError(FimSketchError, ValueError):
    pass


class SolverError(FimSketchError, RuntimeError):
    pass


class ConfigError(ValueError):
    """Invalid scenario configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
