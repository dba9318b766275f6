class IbeTrustError(Exception):
    pass


class ParameterError(IbeTrustError, ValueError):
    pass


class DecryptionError(IbeTrustError, ValueError):
    pass


class AkeRejected(IbeTrustError, ValueError):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class FrameError(IbeTrustError, ValueError):
    pass


class MacMismatch(FrameError):
    pass


class ReassemblyTimeout(FrameError):
    pass


class AccessViolation(IbeTrustError, PermissionError):
    pass


class ConfigurationError(IbeTrustError, ValueError):
    pass


class ProtocolError(IbeTrustError, ValueError):
    pass


class ScenarioError(IbeTrustError, ValueError):
    """Raised with every problem found in a scenario, not just the first."""

    def __init__(self, problems: list[str]) -> None:
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.problems))
