"""Keyless PUF-backed cipher with visit-frequency experiments and Bayesian screening."""

from .attack import RankMatchingAttack, frequency_attack, index_of_coincidence
from .cipher import Ciphertext, capacity, decrypt, encrypt
from .digest import counter_trn, fresh_trn, sha3_512
from .exceptions import (
    CapacityError,
    ConvergenceError,
    DecodabilityError,
    DegenerateDataError,
    DomainError,
    EntropyError,
    KpufError,
    ParseError,
    TamperError,
)
from .experiment import VisitTable, run_visit_experiment
from .puf import PufImage, generate_puf, load_puf, save_puf

__version__ = "0.1.0"
