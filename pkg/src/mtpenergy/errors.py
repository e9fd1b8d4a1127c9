"""Exception hierarchy shared by all modules."""


class MtpEnergyError(Exception):
    """Base class for every error raised by this package."""


class ParseError(MtpEnergyError):
    """Input text could not be parsed into the expected structure."""
