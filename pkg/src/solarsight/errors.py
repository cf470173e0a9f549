"""Exception taxonomy shared across the package.

ConfigurationError: the caller asked for an impossible or inconsistent
setup (bad shapes, bad hyperparameters).  DataError: a value fed through a
valid setup is out of contract (label out of range, loss outside [0, 1]).
UsageError: an API was driven in the wrong order or with missing state.
"""


class ConfigurationError(ValueError):
    pass


class DataError(ValueError):
    pass


class UsageError(RuntimeError):
    pass
