"""Exception hierarchy shared across the package.

``DataError`` covers malformed inputs (files, manifests, mismatched
dimensions or labels); ``InfeasibleError`` covers constraint and guard
violations (sequences too short, brute-force limits, impossible latent
placements). The CLI maps them to distinct exit codes.
"""


class LomoError(Exception):
    pass


class DataError(LomoError):
    pass


class InfeasibleError(LomoError):
    pass
