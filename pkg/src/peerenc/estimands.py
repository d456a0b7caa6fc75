"""Exact population-level causal quantities by exhaustive averaging.

Everything here is a finite sum, computed exactly (no sampling):

* intent-to-treat averages: an individual's own encouragement is pinned while
  the peers' encouragement vector is averaged under a mechanism's product
  law, with everyone taking the treatment their encouragement induces;
* local averages: an individual's own *treatment* is pinned while peers take
  their natural (encouragement-induced) treatments, averaged the same way;
* the uptake effect: the average shift in treatment caused by encouragement,
  a mechanism-free quantity.

Two evaluation routes produce the same numbers and are cross-checked in the
test suite: explicit tables are averaged by enumerating all peer assignment
vectors, while structural (peer-anonymous) outcomes are averaged through the
exact distribution of the treated-peer count, a Poisson-binomial convolution
over the peers' effective uptake probabilities (always-takers contribute 1,
never-takers 0, compliers their encouragement probability, defiers its
complement). Block estimates are averaged in canonical block order, and the
population value of every family is the unweighted mean of block values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptyStratumInBlock,
    EnumerationTooLarge,
    ExclusionViolated,
    ZeroEncouragementEffect,
)
from .mechanisms import DEFAULT_ENUMERATION_CAP, Mechanism, enumerate_assignments
from .population import (
    ComplianceType,
    Population,
    StructuralOutcome,
    TableOutcome,
    classify,
    pack_rows,
)

# A computed identity passes when |lhs-rhs| <= max(ABS_TOL, REL_TOL*scale):
# all quantities are short sums of products of probabilities, so double
# precision keeps genuine identities far inside these margins.
REL_TOL = 1e-9
ABS_TOL = 1e-12


def identity_ok(lhs: float, rhs: float, rel: float = REL_TOL, abs_: float = ABS_TOL) -> bool:
    scale = max(abs(lhs), abs(rhs))
    return abs(lhs - rhs) <= max(abs_, rel * scale)


def poisson_binomial_pmf(probs) -> np.ndarray:
    """Exact pmf of a sum of independent non-identical Bernoullis (O(n^2) DP)."""
    probs = np.asarray(probs, dtype=float)
    pmf = np.zeros(probs.size + 1)
    pmf[0] = 1.0
    for q in probs:
        pmf[1:] = pmf[1:] * (1.0 - q) + pmf[:-1] * q
        pmf[0] *= 1.0 - q
    return pmf


def effective_uptake_probs(block, marginals: np.ndarray) -> np.ndarray:
    """P(individual ends up treated) when encouraged with the given marginals."""
    out = np.empty(len(block))
    for j, ind in enumerate(block):
        d0, d1 = ind.pt.d0, ind.pt.d1
        if d0 == d1:
            out[j] = float(d0)
        elif d1 == 1:  # complier: treated iff encouraged
            out[j] = marginals[j]
        else:  # defier: treated iff not encouraged
            out[j] = 1.0 - marginals[j]
    return out


def _peer_enumeration(n_peers: int, block_index: int, cap: int):
    if n_peers > cap:
        raise EnumerationTooLarge(
            f"block {block_index}: 2^{n_peers} peer assignments exceed cap 2^{cap}"
        )
    if n_peers == 0:
        return np.zeros((1, 0), dtype=np.uint8)
    return enumerate_assignments(n_peers, cap=cap)


def _row_probs(bits: np.ndarray, marginals: np.ndarray) -> np.ndarray:
    w = np.ones(bits.shape[0])
    for c in range(bits.shape[1]):
        w *= np.where(bits[:, c] == 1, marginals[c], 1.0 - marginals[c])
    return w


def ybar_indiv_itt(
    pop: Population,
    i: int,
    j: int,
    z: int,
    mech: Mechanism,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """Average potential outcome with own encouragement pinned at z and the
    peers' encouragements averaged under the mechanism.

    Everyone (self included) takes the treatment induced by their
    encouragement; encouragement-keyed tables are honored, so this average is
    well-defined with or without the exclusion restriction.
    """
    block = pop.blocks[i]
    n = len(block)
    marg = mech.marginals(n)
    ind = block[j]
    own_d = ind.pt.take(z)

    if isinstance(ind.y, StructuralOutcome):
        peer_idx = [k for k in range(n) if k != j]
        probs = effective_uptake_probs([block[k] for k in peer_idx], marg[peer_idx])
        pmf = poisson_binomial_pmf(probs)
        return float(np.dot(pmf, ind.y.values_by_count(own_d, n - 1)))

    peers = _peer_enumeration(n - 1, i, cap)
    peer_marg = np.delete(marg, j)
    w = _row_probs(peers, peer_marg)
    z_full = np.insert(peers, j, z, axis=1)
    d0, d1 = pop.d_tables[i]
    d_full = np.where(z_full == 1, d1, d0)
    if ind.y.z_dependent:
        vals = ind.y.z_values[pack_rows(d_full), pack_rows(z_full)]
    else:
        vals = ind.y.values[pack_rows(d_full)]
    return float(np.dot(w, vals))


def ybar_indiv_local(
    pop: Population,
    i: int,
    j: int,
    d: int,
    mech: Mechanism,
    cap: int = DEFAULT_ENUMERATION_CAP,
    allow_exclusion_violation: bool = False,
) -> float:
    """Average potential outcome with own treatment pinned at d while peers
    take their natural (encouragement-induced) treatments under the mechanism.

    Defined for encouragement-free outcomes. For encouragement-keyed tables
    the quantity has no canonical definition; with
    ``allow_exclusion_violation`` the own encouragement is averaged under the
    mechanism as well (this reduces exactly to the standard definition when
    the table happens not to vary in the encouragements), otherwise
    ExclusionViolated is raised.
    """
    block = pop.blocks[i]
    n = len(block)
    marg = mech.marginals(n)
    ind = block[j]

    if isinstance(ind.y, StructuralOutcome):
        peer_idx = [k for k in range(n) if k != j]
        probs = effective_uptake_probs([block[k] for k in peer_idx], marg[peer_idx])
        pmf = poisson_binomial_pmf(probs)
        return float(np.dot(pmf, ind.y.values_by_count(d, n - 1)))

    d0, d1 = pop.d_tables[i]
    if not ind.y.z_dependent:
        peers = _peer_enumeration(n - 1, i, cap)
        w = _row_probs(peers, np.delete(marg, j))
        z_padded = np.insert(peers, j, 0, axis=1)  # own column overwritten below
        d_full = np.where(z_padded == 1, d1, d0)
        d_full[:, j] = d
        return float(np.dot(w, ind.y.values[pack_rows(d_full)]))

    if not allow_exclusion_violation:
        raise ExclusionViolated(
            f"block {i} individual {j}: outcome depends on encouragements"
        )
    if n > cap:
        raise EnumerationTooLarge(f"block {i}: 2^{n} assignments exceed cap 2^{cap}")
    z_full = enumerate_assignments(n, cap=cap)
    w = _row_probs(z_full, marg)
    d_full = np.where(z_full == 1, d1, d0)
    d_full[:, j] = d
    vals = ind.y.z_values[pack_rows(d_full), pack_rows(z_full)]
    return float(np.dot(w, vals))


# --------------------------------------------------------------------------
# Block and population estimand families
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockSummary:
    """Per-block values plus their unweighted population mean."""

    per_block: tuple[float, ...]
    population: float

    def as_dict(self) -> dict:
        return {"per_block": list(self.per_block), "population": self.population}


def _summarize(values) -> BlockSummary:
    vals = tuple(float(v) for v in values)
    return BlockSummary(per_block=vals, population=float(sum(vals) / len(vals)))


def ybar_block_itt(
    pop: Population, z: int, mech: Mechanism, cap: int = DEFAULT_ENUMERATION_CAP
) -> BlockSummary:
    return _summarize(
        sum(ybar_indiv_itt(pop, i, j, z, mech, cap) for j in range(len(block))) / len(block)
        for i, block in enumerate(pop.blocks)
    )


def ybar_block_local(
    pop: Population,
    d: int,
    mech: Mechanism,
    stratum: ComplianceType | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
    allow_exclusion_violation: bool = False,
) -> BlockSummary:
    values = []
    for i, block in enumerate(pop.blocks):
        if stratum is None:
            members = range(len(block))
            count = len(block)
        else:
            members = [j for j, ind in enumerate(block) if classify(ind.pt) is stratum]
            count = len(members)
            if count == 0:
                raise EmptyStratumInBlock(f"block {i} has no {stratum.value} individuals")
        total = sum(
            ybar_indiv_local(pop, i, j, d, mech, cap, allow_exclusion_violation)
            for j in members
        )
        values.append(total / count)
    return _summarize(values)


def ditt(
    pop: Population, z_hi: int, z_lo: int, mech: Mechanism, cap: int = DEFAULT_ENUMERATION_CAP
) -> BlockSummary:
    """Direct intent-to-treat effect: contrast in own encouragement."""
    if z_hi == z_lo:
        raise ValueError("direct contrast needs two distinct encouragement values")
    hi = ybar_block_itt(pop, z_hi, mech, cap)
    lo = ybar_block_itt(pop, z_lo, mech, cap)
    return _summarize(a - b for a, b in zip(hi.per_block, lo.per_block))


def pitt(
    pop: Population,
    z: int,
    mech_a: Mechanism,
    mech_b: Mechanism,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> BlockSummary:
    """Peer intent-to-treat effect: contrast in the peers' mechanism."""
    a = ybar_block_itt(pop, z, mech_a, cap)
    b = ybar_block_itt(pop, z, mech_b, cap)
    return _summarize(x - y for x, y in zip(a.per_block, b.per_block))


def et(pop: Population, z_hi: int = 1, z_lo: int = 0) -> BlockSummary:
    """Average effect of encouragement on treatment uptake (mechanism-free)."""
    if z_hi == z_lo:
        raise ValueError("uptake contrast needs two distinct encouragement values")
    return _summarize(
        sum(ind.pt.take(z_hi) - ind.pt.take(z_lo) for ind in block) / len(block)
        for block in pop.blocks
    )


def ldt(
    pop: Population,
    d_hi: int,
    d_lo: int,
    mech: Mechanism,
    stratum: ComplianceType | None = ComplianceType.COMPLIER,
    cap: int = DEFAULT_ENUMERATION_CAP,
    allow_exclusion_violation: bool = False,
) -> BlockSummary:
    """Local direct treatment effect: own treatment pinned, peers natural."""
    if d_hi == d_lo:
        raise ValueError("direct contrast needs two distinct treatment values")
    hi = ybar_block_local(pop, d_hi, mech, stratum, cap, allow_exclusion_violation)
    lo = ybar_block_local(pop, d_lo, mech, stratum, cap, allow_exclusion_violation)
    return _summarize(a - b for a, b in zip(hi.per_block, lo.per_block))


def lpt(
    pop: Population,
    d: int,
    mech_a: Mechanism,
    mech_b: Mechanism,
    stratum: ComplianceType | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
    allow_exclusion_violation: bool = False,
) -> BlockSummary:
    """Local peer treatment effect; stratum None averages over everyone."""
    a = ybar_block_local(pop, d, mech_a, stratum, cap, allow_exclusion_violation)
    b = ybar_block_local(pop, d, mech_b, stratum, cap, allow_exclusion_violation)
    return _summarize(x - y for x, y in zip(a.per_block, b.per_block))


# --------------------------------------------------------------------------
# Identity checks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityReport:
    name: str
    lhs: float
    rhs: float
    passed: bool
    assumptions_ok: bool
    assumption_notes: tuple[str, ...]
    block_lhs: tuple[float, ...]
    block_rhs: tuple[float, ...]
    note: str | None = None

    @property
    def gap(self) -> float:
        return self.lhs - self.rhs

    @property
    def block_identity_ok(self) -> bool:
        """True when the identity holds block by block wherever defined."""
        pairs = [
            (a, b)
            for a, b in zip(self.block_lhs, self.block_rhs)
            if math.isfinite(a) and math.isfinite(b)
        ]
        return bool(pairs) and all(identity_ok(a, b) for a, b in pairs)

    def as_dict(self) -> dict:
        clean = lambda xs: [x if math.isfinite(x) else None for x in xs]  # noqa: E731
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "gap": self.gap,
            "passed": self.passed,
            "block_identity_ok": self.block_identity_ok,
            "assumptions_ok": self.assumptions_ok,
            "assumption_notes": list(self.assumption_notes),
            "note": self.note,
            "block_lhs": clean(self.block_lhs),
            "block_rhs": clean(self.block_rhs),
        }


def _assumption_notes(pop: Population, require_monotone=False, require_exclusion=False,
                      require_one_sided=False, require_all_encouraged_take=False):
    notes = []
    if require_monotone and not pop.monotone:
        notes.append("monotonicity violated: defiers present")
    if require_exclusion and not pop.exclusion_ok:
        notes.append("exclusion restriction violated: encouragement-dependent outcomes")
    if require_one_sided and not pop.one_sided:
        notes.append("one-sided compliance violated: someone takes treatment unencouraged")
    if require_all_encouraged_take:
        if not all(ind.pt.d1 == 1 for block in pop.blocks for ind in block):
            notes.append("mirror condition violated: someone declines treatment when encouraged")
    return tuple(notes)


def _aggregation_note(uptake: BlockSummary) -> str | None:
    if len(set(uptake.per_block)) > 1:
        return (
            "blocks have unequal uptake effects, so the block-level ratio "
            "identity does not aggregate to this population-level ratio"
        )
    return None


def theorem_1_check(
    pop: Population, mech: Mechanism, cap: int = DEFAULT_ENUMERATION_CAP
) -> IdentityReport:
    """Ratio identification of the complier local direct effect.

    lhs: population direct ITT effect over the population uptake effect.
    rhs: complier local direct treatment effect.
    Also reports the block-level ratio identity, which is what the averaging
    argument actually delivers; the population ratio coincides with it when
    every block has the same uptake effect. Runs regardless of assumption
    flags so violations can be demonstrated, and reports their status.
    """
    uptake = et(pop, 1, 0)
    if uptake.population == 0.0:
        raise ZeroEncouragementEffect("population uptake effect is zero; ratio undefined")
    direct = ditt(pop, 1, 0, mech, cap)
    local = ldt(pop, 1, 0, mech, ComplianceType.COMPLIER, cap,
                allow_exclusion_violation=True)
    lhs = direct.population / uptake.population
    rhs = local.population
    block_lhs = tuple(
        d / e if e != 0.0 else float("nan")
        for d, e in zip(direct.per_block, uptake.per_block)
    )
    notes = _assumption_notes(pop, require_monotone=True, require_exclusion=True)
    return IdentityReport(
        name="theorem_1",
        lhs=lhs,
        rhs=rhs,
        passed=identity_ok(lhs, rhs),
        assumptions_ok=not notes,
        assumption_notes=notes,
        block_lhs=block_lhs,
        block_rhs=local.per_block,
        note=_aggregation_note(uptake),
    )


def theorem_2_check(
    pop: Population,
    mech_a: Mechanism,
    mech_b: Mechanism,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> IdentityReport:
    """Ratio identification of the complier local peer effect difference.

    lhs: (peer ITT at z=1 minus peer ITT at z=0) over the uptake effect.
    rhs: complier local peer effect at d=1 minus at d=0.
    Same block-level vs population-level caveat as theorem_1_check.
    """
    uptake = et(pop, 1, 0)
    if uptake.population == 0.0:
        raise ZeroEncouragementEffect("population uptake effect is zero; ratio undefined")
    p1 = pitt(pop, 1, mech_a, mech_b, cap)
    p0 = pitt(pop, 0, mech_a, mech_b, cap)
    l1 = lpt(pop, 1, mech_a, mech_b, ComplianceType.COMPLIER, cap,
             allow_exclusion_violation=True)
    l0 = lpt(pop, 0, mech_a, mech_b, ComplianceType.COMPLIER, cap,
             allow_exclusion_violation=True)
    lhs = (p1.population - p0.population) / uptake.population
    rhs = l1.population - l0.population
    block_lhs = tuple(
        (a - b) / e if e != 0.0 else float("nan")
        for a, b, e in zip(p1.per_block, p0.per_block, uptake.per_block)
    )
    block_rhs = tuple(a - b for a, b in zip(l1.per_block, l0.per_block))
    notes = _assumption_notes(pop, require_monotone=True, require_exclusion=True)
    return IdentityReport(
        name="theorem_2",
        lhs=lhs,
        rhs=rhs,
        passed=identity_ok(lhs, rhs),
        assumptions_ok=not notes,
        assumption_notes=notes,
        block_lhs=block_lhs,
        block_rhs=block_rhs,
        note=_aggregation_note(uptake),
    )


def theorem_3_check(
    pop: Population,
    mech_a: Mechanism,
    mech_b: Mechanism,
    z: int = 0,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> IdentityReport:
    """Peer ITT equals the everyone local peer effect at the pinned arm.

    z=0 needs one-sided compliance (nobody treated unencouraged); z=1 is the
    mirror variant (everyone encouraged takes treatment). Holds block by
    block, hence at the population level with no ratio involved.
    """
    p = pitt(pop, z, mech_a, mech_b, cap)
    l = lpt(pop, z, mech_a, mech_b, None, cap, allow_exclusion_violation=True)
    notes = _assumption_notes(
        pop,
        require_exclusion=True,
        require_one_sided=(z == 0),
        require_all_encouraged_take=(z == 1),
    )
    return IdentityReport(
        name=f"theorem_3[z={z}]",
        lhs=p.population,
        rhs=l.population,
        passed=identity_ok(p.population, l.population),
        assumptions_ok=not notes,
        assumption_notes=notes,
        block_lhs=p.per_block,
        block_rhs=l.per_block,
    )


# --------------------------------------------------------------------------
# Batch report
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimandReport:
    entries: dict[str, BlockSummary]
    skipped: dict[str, str]
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "entries": {k: v.as_dict() for k, v in self.entries.items()},
            "skipped": dict(self.skipped),
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def write_json(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def to_csv(self) -> str:
        lines = ["estimand,block,value"]
        for key in sorted(self.entries):
            s = self.entries[key]
            for i, v in enumerate(s.per_block):
                lines.append(f"{key},{i},{v!r}")
            lines.append(f"{key},population,{s.population!r}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def compute_estimand_report(
    pop: Population,
    mech_a: Mechanism,
    mech_b: Mechanism,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> EstimandReport:
    """Evaluate every estimand family for a pair of mechanisms."""
    entries: dict[str, BlockSummary] = {}
    skipped: dict[str, str] = {}
    mechs = ((mech_a.name, mech_a), (mech_b.name, mech_b))

    for name, mech in mechs:
        for z in (0, 1):
            entries[f"ybar_itt[z={z},mech={name}]"] = ybar_block_itt(pop, z, mech, cap)
        entries[f"ditt[1,0,mech={name}]"] = ditt(pop, 1, 0, mech, cap)
    pair = f"{mech_a.name},{mech_b.name}"
    for z in (0, 1):
        entries[f"pitt[z={z},{pair}]"] = pitt(pop, z, mech_a, mech_b, cap)
    entries["et[1,0]"] = et(pop, 1, 0)

    if pop.exclusion_ok:
        for name, mech in mechs:
            for d in (0, 1):
                entries[f"ybar_local[d={d},mech={name}]"] = ybar_block_local(
                    pop, d, mech, None, cap
                )
        for d in (0, 1):
            entries[f"lpt_all[d={d},{pair}]"] = lpt(pop, d, mech_a, mech_b, None, cap)
        try:
            for name, mech in mechs:
                for d in (0, 1):
                    entries[f"ybar_local[d={d},mech={name},stratum=complier]"] = (
                        ybar_block_local(pop, d, mech, ComplianceType.COMPLIER, cap)
                    )
                entries[f"ldt[1,0,mech={name},stratum=complier]"] = ldt(
                    pop, 1, 0, mech, ComplianceType.COMPLIER, cap
                )
            for d in (0, 1):
                entries[f"lpt[d={d},{pair},stratum=complier]"] = lpt(
                    pop, d, mech_a, mech_b, ComplianceType.COMPLIER, cap
                )
        except EmptyStratumInBlock as exc:
            skipped["complier_local_effects"] = str(exc)
    else:
        skipped["local_effects"] = "exclusion restriction violated; local averages undefined"

    uses_tables = [
        any(isinstance(ind.y, TableOutcome) for ind in block) for block in pop.blocks
    ]
    metadata = {
        "mechanisms": {m.name: m.probs if isinstance(m.probs, float) else list(m.probs)
                       for _, m in mechs},
        "flags": {
            "monotone": pop.monotone,
            "one_sided": pop.one_sided,
            "exclusion_ok": pop.exclusion_ok,
        },
        "block_sizes": list(pop.sizes),
        "evaluation": [
            "enumeration" if t else "convolution" for t in uses_tables
        ],
        # peer assignment vectors visited per individual (tables), or the
        # support size of the treated-peer count (structural)
        "enumeration_sizes": [
            2 ** (n - 1) if t else n for n, t in zip(pop.sizes, uses_tables)
        ],
    }
    return EstimandReport(entries=entries, skipped=skipped, metadata=metadata)
