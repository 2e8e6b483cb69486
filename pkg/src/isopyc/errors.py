"""Exception types raised across the package."""


class IsopycError(Exception):
    """Base class for all package errors."""


class ConfigError(IsopycError):
    pass


class StabilityViolation(IsopycError):
    """Profile derivative drops below the stability floor c_star."""


class CavitationViolation(IsopycError):
    """Profile density leaves [rho_min, rho_max]."""


class JacobianDegenerate(IsopycError):
    """min(1 + eps*h) fell below h_star."""

    def __init__(self, min_jacobian, h_star):
        self.min_jacobian = float(min_jacobian)
        self.h_star = float(h_star)
        super().__init__(f"min(1+eps*h) = {self.min_jacobian:.6g} < h_star = {self.h_star:.6g}")


class CompatibilityDefect(IsopycError):
    def __init__(self, defect, tol):
        self.defect = float(defect)
        self.tol = float(tol)
        super().__init__(f"Neumann compatibility defect {self.defect:.3e} exceeds {self.tol:.1e}")


class NoConvergence(IsopycError):
    def __init__(self, iterations, residual):
        self.iterations = int(iterations)
        self.residual = float(residual)
        super().__init__(f"no convergence after {self.iterations} iterations (residual {self.residual:.3e})")


class DomainEscape(IsopycError):
    """Displaced level r - eps*eta left the domain of the density closure."""


class CFLViolation(IsopycError):
    def __init__(self, dt, dt_max):
        self.dt = float(dt)
        self.dt_max = float(dt_max)
        super().__init__(f"|dt| = {self.dt:.3e} exceeds the CFL bound {self.dt_max:.3e}")


class BlownUp(IsopycError):
    def __init__(self, reason, t=None, min_jacobian=None):
        self.reason = reason
        self.t = t
        self.min_jacobian = min_jacobian
        where = "" if t is None else f" at t = {t:.6g}"
        super().__init__(f"blow-up{where}: {reason}")


class InsufficientData(IsopycError):
    pass


class InterpolationDomain(IsopycError):
    pass


class MonotonicityViolation(IsopycError):
    pass


class RootFindFailure(IsopycError):
    pass


class FormatMismatch(IsopycError):
    pass


class IOFailure(IsopycError):
    pass
