"""The randomized protocol: assign mechanisms to blocks, draw encouragements,
resolve realized treatments and outcomes.

Stage one assigns K of the B blocks to mechanism A (the rest get B's
mechanism) as a uniform simple random subset; stage two draws each block's
encouragement vector from its assigned mechanism, independently across
individuals. Realized treatments follow each individual's potential-treatment
pair, and realized outcomes evaluate the potential-outcome functions at the
realized block treatment (and encouragement) vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _streams
from .errors import AllBlocksUndefined, InvalidDesign
from .mechanisms import Mechanism, mechanisms_identical, sample_assignment
from .population import Population, StructuralOutcome, outcome

CSV_COLUMNS = ("block_id", "S", "unit_id", "Z", "D", "Y")


@dataclass(frozen=True)
class DesignConfig:
    """Two encouragement mechanisms, an arm size, and the master seed."""

    mech_a: Mechanism
    mech_b: Mechanism
    k: int
    seed: int


def validate_design(cfg: DesignConfig, pop: Population) -> None:
    b = pop.n_blocks
    if not 1 <= cfg.k <= b - 1:
        raise InvalidDesign(f"k={cfg.k} must leave both arms populated (1..{b - 1})")
    sizes = set(pop.sizes)
    for mech in (cfg.mech_a, cfg.mech_b):
        for n in sizes:
            mech.marginals(n)  # ArityMismatch if a vector mechanism cannot cover a block
    if mechanisms_identical(cfg.mech_a, cfg.mech_b, sizes):
        raise InvalidDesign(
            f"mechanisms {cfg.mech_a.name!r} and {cfg.mech_b.name!r} give every individual "
            "identical probabilities; the design needs a contrast"
        )


@dataclass(frozen=True)
class ExperimentData:
    """Realized data from one run: per-block arm flags and per-individual
    encouragement, treatment, outcome, and design encouragement probability."""

    sizes: np.ndarray  # (B,) block sizes
    s: np.ndarray  # (B,) 1 where the block got mechanism A
    block_id: np.ndarray  # (N,) owning block per individual
    z: np.ndarray  # (N,) realized encouragements
    d: np.ndarray  # (N,) realized treatments
    y: np.ndarray  # (N,) realized outcomes
    p_enc: np.ndarray  # (N,) design P(Z=1) under the block's assigned mechanism

    def __post_init__(self):
        for arr in (self.sizes, self.s, self.block_id, self.z, self.d, self.y, self.p_enc):
            arr.setflags(write=False)

    @property
    def n_blocks(self) -> int:
        return self.sizes.size

    @cached_property
    def starts(self) -> np.ndarray:
        out = np.concatenate(([0], np.cumsum(self.sizes)))
        out.setflags(write=False)
        return out

    def block_slice(self, i: int) -> slice:
        return slice(int(self.starts[i]), int(self.starts[i + 1]))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            starts = self.starts
            for i in range(self.n_blocks):
                for j in range(int(self.sizes[i])):
                    u = int(starts[i]) + j
                    writer.writerow(
                        [i, int(self.s[i]), j, int(self.z[u]), int(self.d[u]), repr(float(self.y[u]))]
                    )

    @staticmethod
    def from_csv(path, mech_a: Mechanism, mech_b: Mechanism) -> "ExperimentData":
        """Ingest externally collected data; the mechanisms supply the design
        probabilities that the inverse-probability estimators require."""
        rows = []
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise ValueError(f"expected columns {CSV_COLUMNS}, got {reader.fieldnames}")
            for row in reader:
                rows.append(
                    (int(row["block_id"]), int(row["S"]), int(row["unit_id"]),
                     int(row["Z"]), int(row["D"]), float(row["Y"]))
                )
        rows.sort(key=lambda r: (r[0], r[2]))
        n_blocks = rows[-1][0] + 1
        sizes = np.zeros(n_blocks, dtype=int)
        s = np.zeros(n_blocks, dtype=np.int8)
        for bid, flag, *_ in rows:
            sizes[bid] += 1
            s[bid] = flag
        z = np.array([r[3] for r in rows], dtype=np.int8)
        d = np.array([r[4] for r in rows], dtype=np.int8)
        y = np.array([r[5] for r in rows], dtype=float)
        block_id = np.array([r[0] for r in rows], dtype=int)
        p_enc = np.empty(len(rows))
        starts = np.concatenate(([0], np.cumsum(sizes)))
        for i in range(n_blocks):
            mech = mech_a if s[i] == 1 else mech_b
            p_enc[starts[i]:starts[i + 1]] = mech.marginals(int(sizes[i]))
        return ExperimentData(
            sizes=sizes, s=s, block_id=block_id, z=z, d=d, y=y, p_enc=p_enc
        )


def run_design(pop: Population, cfg: DesignConfig, replicate: int = 0) -> ExperimentData:
    """Execute the protocol once. Deterministic given (pop, cfg, replicate):
    the arm assignment and each block's encouragement draws come from
    independently derived streams, so they are individually reproducible."""
    validate_design(cfg, pop)
    b = pop.n_blocks
    arm_rng = _streams.stream(cfg.seed, _streams.ARM, replicate)
    order = arm_rng.permutation(b)
    s = np.zeros(b, dtype=np.int8)
    s[order[: cfg.k]] = 1

    sizes = np.array(pop.sizes, dtype=int)
    n_total = int(sizes.sum())
    z = np.empty(n_total, dtype=np.int8)
    d = np.empty(n_total, dtype=np.int8)
    y = np.empty(n_total, dtype=float)
    p_enc = np.empty(n_total, dtype=float)
    block_id = np.repeat(np.arange(b), sizes)

    pos = 0
    for i, block in enumerate(pop.blocks):
        n = len(block)
        mech = cfg.mech_a if s[i] == 1 else cfg.mech_b
        enc_rng = _streams.stream(cfg.seed, _streams.ENCOURAGEMENT, replicate, i)
        z_i = sample_assignment(mech, n, enc_rng)
        d0, d1 = pop.d_tables[i]
        d_i = np.where(z_i == 1, d1, d0)
        sl = slice(pos, pos + n)
        z[sl] = z_i
        d[sl] = d_i
        p_enc[sl] = mech.marginals(n)
        k_total = int(d_i.sum())
        for j, ind in enumerate(block):
            if isinstance(ind.y, StructuralOutcome):
                y[pos + j] = ind.y.value(int(d_i[j]), k_total - int(d_i[j]))
            else:
                y[pos + j] = outcome(pop, i, j, d_i, z_i)
        pos += n

    return ExperimentData(sizes=sizes, s=s, block_id=block_id, z=z, d=d, y=y, p_enc=p_enc)


@dataclass(frozen=True)
class FrequencyReport:
    """Empirical assignment-vector frequencies for one mechanism arm."""

    mechanism: str
    runs: int
    counts: dict[tuple[int, ...], int]
    expected: dict[tuple[int, ...], float]
    chi_square: float
    dof: int

    @property
    def frequencies(self) -> dict[tuple[int, ...], float]:
        return {k: v / self.runs for k, v in self.counts.items()}


def design_prob_check(
    cfg: DesignConfig, pop: Population, replications: int, block: int = 0
) -> tuple[FrequencyReport, FrequencyReport]:
    """Compare one block's realized encouragement-vector frequencies against
    the exact product law, conditioning on the mechanism the block received.

    Uses exactly the streams run_design would use, so this checks the real
    protocol. The block must be small enough (n <= 6) for the exact
    comparison to have adequately filled cells.
    """
    from .mechanisms import assignment_probs, enumerate_assignments

    n = len(pop.blocks[block])
    if n > 6:
        raise InvalidDesign(f"exact frequency check needs a small block (n <= 6), got {n}")
    validate_design(cfg, pop)
    b = pop.n_blocks
    vectors = [tuple(int(x) for x in row) for row in enumerate_assignments(n)]
    counts = {"a": dict.fromkeys(vectors, 0), "b": dict.fromkeys(vectors, 0)}
    runs = {"a": 0, "b": 0}
    for r in range(replications):
        arm_rng = _streams.stream(cfg.seed, _streams.ARM, r)
        order = arm_rng.permutation(b)
        in_a = block in set(int(x) for x in order[: cfg.k])
        mech = cfg.mech_a if in_a else cfg.mech_b
        enc_rng = _streams.stream(cfg.seed, _streams.ENCOURAGEMENT, r, block)
        z = tuple(int(x) for x in sample_assignment(mech, n, enc_rng))
        key = "a" if in_a else "b"
        counts[key][z] += 1
        runs[key] += 1

    reports = []
    for key, mech in (("a", cfg.mech_a), ("b", cfg.mech_b)):
        probs = assignment_probs(mech, n)
        expected = {vec: float(p) for vec, p in zip(vectors, probs)}
        total = runs[key]
        if total == 0:
            raise AllBlocksUndefined(f"block {block} never received mechanism {mech.name!r}")
        stat = sum(
            (counts[key][vec] - total * expected[vec]) ** 2 / (total * expected[vec])
            for vec in vectors
        )
        reports.append(
            FrequencyReport(
                mechanism=mech.name,
                runs=total,
                counts=counts[key],
                expected=expected,
                chi_square=float(stat),
                dof=len(vectors) - 1,
            )
        )
    return tuple(reports)
