"""Cell-visit experiment: repeated encryption of one plaintext with fresh TRNs.

Cells are flattened as ``cell = 8 * row + current`` (0..1023); runs are
numbered from 1.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_count_matrix, check_int_range
from .cipher import encrypt_traced
from .digest import counter_trn, fresh_trn
from .exceptions import DomainError, ParseError
from .puf import N_CELLS, N_CURRENTS, N_ROWS

VISIT_HEADER = "run,cell,visits"
HISTOGRAM_HEADER = "visits,frequency"
FLATTENING_NOTE = "# cell = 8*row + current; run is 1-based"


def cell_index(row, current):
    return N_CURRENTS * np.asarray(row) + np.asarray(current)


@dataclass(frozen=True, eq=False)
class VisitTable:
    """Per-run visit counts for every cell, zero counts included.

    ``counts[r, c]`` is the number of visits to cell ``c`` in run ``r + 1``.
    """

    counts: np.ndarray
    n_trials: int

    def __post_init__(self):
        counts = check_count_matrix(self.counts).copy()
        if counts.shape[1] != N_CELLS:
            raise DomainError(f"visit table must have {N_CELLS} cells, got {counts.shape[1]}")
        totals = counts.sum(axis=1)
        if np.any(totals != self.n_trials):
            bad = int(np.flatnonzero(totals != self.n_trials)[0]) + 1
            raise DomainError(f"run {bad} sums to {totals[bad - 1]}, expected {self.n_trials}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n_runs(self):
        return self.counts.shape[0]

    def __len__(self):
        return self.counts.size

    def __eq__(self, other):
        if not isinstance(other, VisitTable):
            return NotImplemented
        return self.n_trials == other.n_trials and np.array_equal(self.counts, other.counts)

    __hash__ = None

    def records(self):
        """Yield ``(run, cell, count)`` in run-major order."""
        for r, row in enumerate(self.counts, start=1):
            for c, k in enumerate(row):
                yield r, c, int(k)

    def grid(self, run):
        """The 128 x 8 raw visit grid of one run (1-based)."""
        run = check_int_range(run, 1, self.n_runs, "run")
        return self.counts[run - 1].reshape(N_ROWS, N_CURRENTS)

    def pooled(self):
        return self.counts.sum(axis=0)


def run_visit_experiment(plaintext, n_runs, password, puf, master_seed, entropy=False):
    """Encrypt ``plaintext`` ``n_runs`` times and count the cells each run reads.

    Run ``r`` uses ``counter_trn(master_seed, r)`` unless ``entropy`` is set,
    in which case TRNs come from the OS and the table is not replayable.
    """
    n_runs = check_int_range(n_runs, 1, 10**7, "n_runs")
    counts = np.zeros((n_runs, N_CELLS), dtype=np.int64)
    n_trials = None
    for r in range(1, n_runs + 1):
        trn = fresh_trn() if entropy else counter_trn(master_seed, r)
        _, rows, cur = encrypt_traced(plaintext, password, trn, puf)
        counts[r - 1] = np.bincount(cell_index(rows, cur), minlength=N_CELLS)
        n_trials = rows.size
    return VisitTable(counts, n_trials)


def histogram(table):
    """``freq[k]`` = number of (run, cell) records with exactly ``k`` visits."""
    return np.bincount(table.counts.ravel())


def export_visits(table, path):
    with open(path, "w", newline="") as fh:
        fh.write(FLATTENING_NOTE + "\n")
        fh.write(f"# trials_per_run={table.n_trials}\n")
        fh.write(VISIT_HEADER + "\n")
        for run, cell, k in table.records():
            fh.write(f"{run},{cell},{k}\n")


def import_visits(path):
    """Read a visit CSV.  Missing (run, cell) pairs are a parse error."""
    records = {}
    n_trials = None
    header_seen = False
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep and key == "trials_per_run":
                    n_trials = int(value)
                continue
            if not header_seen:
                if line != VISIT_HEADER:
                    raise ParseError(f"expected header {VISIT_HEADER!r}, got {line!r}", lineno)
                header_seen = True
                continue
            fields = line.split(",")
            if len(fields) != 3:
                raise ParseError(f"expected 3 fields, got {len(fields)}", lineno)
            try:
                run, cell, k = (int(f) for f in fields)
            except ValueError:
                raise ParseError(f"non-integer field in {line!r}", lineno) from None
            if run < 1:
                raise ParseError(f"run index {run} must be >= 1", lineno)
            if not 0 <= cell < N_CELLS:
                raise ParseError(f"cell index {cell} outside 0..{N_CELLS - 1}", lineno)
            if k < 0:
                raise ParseError(f"negative visit count {k}", lineno)
            if (run, cell) in records:
                raise ParseError(f"duplicate record for run {run}, cell {cell}", lineno)
            records[(run, cell)] = k
    if not header_seen:
        raise ParseError("missing header line")
    if not records:
        raise ParseError("no records")
    n_runs = max(run for run, _ in records)
    if len(records) != n_runs * N_CELLS:
        raise ParseError(f"expected {n_runs * N_CELLS} records, got {len(records)}")
    counts = np.zeros((n_runs, N_CELLS), dtype=np.int64)
    for (run, cell), k in records.items():
        counts[run - 1, cell] = k
    totals = counts.sum(axis=1)
    if n_trials is None:
        n_trials = int(totals[0])
    try:
        return VisitTable(counts, n_trials)
    except DomainError as exc:
        raise ParseError(str(exc)) from None


def export_histogram(freq, path):
    lines = [HISTOGRAM_HEADER] + [f"{k},{int(f)}" for k, f in enumerate(freq)]
    Path(path).write_text("\n".join(lines) + "\n")


def export_grid(table, run, path):
    """Raw per-run grid: one line per row, one column per current."""
    grid = table.grid(run)
    header = ",".join(f"I{j + 1}" for j in range(N_CURRENTS))
    lines = ["row," + header] + [f"{i}," + ",".join(str(v) for v in row) for i, row in enumerate(grid)]
    Path(path).write_text("\n".join(lines) + "\n")
