import numpy as np
import pytest

from mr2xray import dataset, geometry, phantom, projector

SMALL_GEOM = geometry.ConeBeamGeometry(785.0, 1200.0, 64, 64, 4.8)


def small_cohort(n=5, dims=(64, 64, 64), spacing=(3.0, 3.0, 3.0), seed=0):
    base = phantom.HeadPhantomParams(seed=seed, dims=dims, spacing_mm=spacing)
    return phantom.generate_cohort(n, base)


def project_pairs(pairs, geom, traj):
    mr, xr = {}, {}
    for p in pairs:
        xr[p.subject_id] = projector.project_trajectory(p.ct, geom, traj, subject_id=p.subject_id, channel="xray")
        mr[p.subject_id] = projector.project_trajectory(p.mr, geom, traj, subject_id=p.subject_id, channel="mr")
    return mr, xr


@pytest.fixture(scope="session")
def cohort5():
    return small_cohort(5)


@pytest.fixture(scope="session")
def toy_manifest(cohort5):
    """Four training subjects with one view each plus one held-out subject."""
    traj = geometry.make_training_trajectory(1, 1, 0.0)
    mr, xr = project_pairs(cohort5, SMALL_GEOM, traj)
    return dataset.build_dataset(mr, xr, {"train": ["subj00", "subj01", "subj02", "subj03"], "test": ["subj04"]})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    """Record one pass/fail line for an acceptance criterion; shown in the terminal summary."""
    def record(number, title, passed, detail):
        line = f"criterion {number} {title}: {'PASS' if passed else 'FAIL'} ({detail})"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
