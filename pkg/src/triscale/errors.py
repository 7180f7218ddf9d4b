"""Exception hierarchy shared by the numerical modules."""


class TriscaleError(Exception):
    """Base class for all errors raised by this package."""


class NotSelfAdjoint(TriscaleError):
    pass


class NotNormal(TriscaleError):
    """Matrix is neither self-adjoint nor skew-adjoint to tolerance."""


class NoConvergence(TriscaleError):
    pass


class DimensionMismatch(TriscaleError):
    pass


class AdjointnessViolated(TriscaleError):
    """A reduced operator lost the adjointness kind of its inputs."""


class DegenerateThreshold(TriscaleError):
    """An eigenvalue sits on the spectral cut used to build the projection."""


class SymbolNotSkew(TriscaleError):
    pass


class ChainUnsolvable(TriscaleError):
    def __init__(self, j, k, residual):
        self.j = j
        self.k = tuple(int(c) for c in k)
        self.residual = float(residual)
        super().__init__(
            f"well-prepared chain step {j} unsolvable at mode {self.k}: "
            f"range residual {self.residual:.3e}"
        )


class A0Singular(TriscaleError):
    pass


class AmplitudeEscape(TriscaleError):
    pass


class StepCollapse(TriscaleError):
    pass


class InsufficientSampling(TriscaleError):
    pass


class UnsupportedSystem(TriscaleError):
    pass


class ConstraintDrift(TriscaleError):
    pass


class ZeroWavenumber(TriscaleError):
    pass


class ConfigError(TriscaleError):
    pass
