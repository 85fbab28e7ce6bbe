"""Exception hierarchy shared by all l2g modules."""


class L2GError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(L2GError):
    """Malformed binary artifact file."""


class BadMagic(FormatError):
    pass


class VersionUnsupported(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class IoFailure(L2GError):
    """Underlying OS-level read/write failure."""


class DimensionMismatch(L2GError):
    pass


class ZeroNormDescriptor(L2GError):
    """Descriptor norm is zero or too far from 1 to renormalize safely."""


class DuplicateId(L2GError):
    pass


class DescriptorCapExceeded(L2GError):
    pass


class EmptyDatabase(L2GError):
    pass


class KTooLarge(L2GError):
    pass


class DegenerateWeights(L2GError):
    """A point has no positive off-diagonal weight and is unconstrained."""


class NonFinite(L2GError):
    """Numerical blow-up; must not happen on valid inputs."""


class EigenFailure(L2GError):
    pass


class MissingGlobals(L2GError):
    pass


class OverlappingGtSets(L2GError):
    pass
