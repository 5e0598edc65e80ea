import itertools

import numpy as np
import pytest

from reactembed.reaction_graph import Domain, EntityRef, ReactionRecord


def brute_force_pair_counts(reactions):
    """Independent pair-count oracle: loop over reactions and every ordered pair."""
    weights = {}
    nodes = set()
    for r in reactions:
        ents = list(r.entities)
        nodes.update(ents)
        for i in range(len(ents)):
            for j in range(len(ents)):
                a, b = ents[i], ents[j]
                if a == b or not (a < b):
                    continue
                weights[(a, b)] = weights.get((a, b), 0) + 1
    return nodes, weights


def random_reactions(rng, n_reactions, n_entities, max_size=8, dup_prob=0.0):
    pool = [EntityRef(f"E{i}", Domain.PROTEIN if i % 2 else Domain.MOLECULE) for i in range(n_entities)]
    out = []
    for k in range(n_reactions):
        size = int(rng.integers(1, max_size + 1))
        chosen = [pool[i] for i in rng.choice(n_entities, size=min(size, n_entities), replace=False)]
        if dup_prob and rng.random() < dup_prob:
            chosen.append(chosen[0])
        out.append(ReactionRecord.of(f"R{k}", chosen))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pairs(iterable):
    return list(itertools.combinations(iterable, 2))


CRITERIA = {
    "c01": "graph oracle equivalence",
    "c02": "weighted sampling fidelity",
    "c03": "gradient correctness",
    "c04": "loss unit truths",
    "c05": "planted alignment",
    "c06": "zero-shot transfer",
    "c07": "ablation trend",
    "c08": "determinism",
    "c09": "metric unit truths",
    "c10": "probe protocol",
}
_outcomes = {}
_notes = {}


@pytest.fixture
def acceptance_note(request):
    """Attach a measured value to the current criterion's summary line."""
    key = request.node.name.split("test_")[1][:3]
    return lambda text: _notes.__setitem__(key, text)


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_c" not in report.nodeid:
        return
    key = report.nodeid.split("::test_")[1][:3]
    if report.failed:
        _outcomes[key] = "FAIL"
    elif report.when == "call" and report.passed:
        _outcomes.setdefault(key, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for key, name in CRITERIA.items():
        if key in _outcomes:
            note = f" ({_notes[key]})" if key in _notes else ""
            terminalreporter.write_line(f"{_outcomes[key]}  criterion {int(key[1:])}: {name}{note}")
