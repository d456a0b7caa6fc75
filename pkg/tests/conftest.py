"""Shared population builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from peerenc.population import (
    ComplianceType,
    Individual,
    Population,
    PotentialTreatment,
    StructuralOutcome,
    classify,
)

PT = {
    "at": PotentialTreatment(1, 1),
    "co": PotentialTreatment(0, 1),
    "nt": PotentialTreatment(0, 0),
    "de": PotentialTreatment(1, 0),
}


def make_individual(kind: str, rng: np.random.Generator | None = None, **overrides) -> Individual:
    params = dict(intercept=0.0, direct=0.0, peer=0.0, interaction=0.0, curvature=0.0, noise=0.0)
    if rng is not None:
        params.update(
            intercept=float(rng.normal(0, 1)),
            direct=float(rng.normal(2, 1)),
            peer=float(rng.normal(0.5, 0.3)),
            interaction=float(rng.normal(0.3, 0.2)),
            curvature=float(rng.normal(0.0, 0.05)),
            noise=float(rng.normal(0, 0.5)),
        )
    params.update(overrides)
    return Individual(PT[kind], StructuralOutcome(**params))


def make_population(block_kinds: list[list[str]], rng: np.random.Generator | None = None,
                    **overrides) -> Population:
    """Population from stratum labels, with random or overridden outcome params."""
    blocks = tuple(
        tuple(make_individual(kind, rng, **overrides) for kind in kinds)
        for kinds in block_kinds
    )
    all_inds = [ind for b in blocks for ind in b]
    return Population(
        blocks=blocks,
        monotone=all(classify(i.pt) is not ComplianceType.DEFIER for i in all_inds),
        one_sided=all(i.pt.d0 == 0 for i in all_inds),
        exclusion_ok=True,
    )


def random_monotone_kinds(rng: np.random.Generator, n_blocks: int, size_range=(2, 5)):
    """Random stratum labels with no defiers and >=1 complier per block."""
    kinds = []
    for _ in range(n_blocks):
        n = int(rng.integers(size_range[0], size_range[1] + 1))
        labels = [("co", "nt", "at")[int(rng.integers(3))] for _ in range(n)]
        if "co" not in labels:
            labels[int(rng.integers(n))] = "co"
        kinds.append(labels)
    return kinds


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
