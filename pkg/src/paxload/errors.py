"""Exception types shared across the pipeline.

Three failure families are kept distinct so the command line layer can map
them onto exit codes: bad user input (exit 2), violated internal contracts
(exit 1), and corpora that break their own ground-truth bookkeeping (exit 1).
"""


class InputError(Exception):
    """Caller-supplied data is malformed or out of range."""


class ContractViolation(Exception):
    """An internal pre/postcondition failed; indicates a pipeline bug."""


class CorpusInvariantError(Exception):
    """A corpus violates conservation or bound invariants of its own truth."""
