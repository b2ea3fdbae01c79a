"""Exception hierarchy shared across the package."""


class TrustCIError(Exception):
    """Base class for every error raised by trustci."""


class EncodingError(TrustCIError, ValueError):
    pass


class MissingEndorser(TrustCIError):
    pass


class UnknownSigner(TrustCIError, KeyError):
    pass


class EvidenceFormatError(TrustCIError, ValueError):
    """A serialized record does not match the expected schema."""


class LifecycleError(TrustCIError):
    """Evidence failed validation while being promoted or deserialized."""


class UnresolvedInput(TrustCIError, KeyError):
    pass


class PreconditionViolated(TrustCIError):
    pass


class PolicyParseError(TrustCIError, ValueError):
    pass


class PolicyIdMismatch(TrustCIError):
    pass


class AppendRace(TrustCIError):
    pass


class InvalidEvidence(TrustCIError):
    pass


class UnknownCommitment(TrustCIError, KeyError):
    pass


class NotFound(TrustCIError, KeyError):
    pass


class DigestMismatch(TrustCIError):
    pass


class BundleMalformed(TrustCIError, ValueError):
    pass


class FixtureMissing(TrustCIError, FileNotFoundError):
    pass
