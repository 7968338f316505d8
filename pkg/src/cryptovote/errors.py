"""Exception hierarchy shared by the pipeline stages.

Each exception carries the CLI exit code it maps to.
"""


class CryptovoteError(Exception):
    exit_code = 1


class BadInputError(CryptovoteError):
    exit_code = 2


class NormalizationError(BadInputError):
    pass


class EmptyCorpusError(BadInputError):
    pass


class TemplateError(BadInputError):
    pass


class ConfigError(BadInputError):
    pass


class ContractError(CryptovoteError):
    """A caller broke an operation's precondition."""


class EmptyDataError(BadInputError):
    pass


class DegenerateDataError(CryptovoteError):
    pass


class InsufficientCellsError(CryptovoteError):
    pass


class StratificationError(BadInputError):
    pass


class TransportFailure(CryptovoteError):
    exit_code = 3


class StaleArtifactError(CryptovoteError):
    exit_code = 4
