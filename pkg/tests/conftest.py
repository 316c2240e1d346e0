import os
import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from emoset.corpus import EMODB, build_manifest, emotions_for  # noqa: E402
from emoset.exceptions import ConvergenceWarning  # noqa: E402
from emoset.features import FeatureExtractor  # noqa: E402
from emoset.synth import generate_corpus  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        number, title = marker.args
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        if hasattr(rep, "wasxfail"):
            status = "XFAIL"
        detail = "; ".join(f"{k}={v}" for k, v in rep.user_properties)
        if rep.outcome == "skipped" and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2]
        _CRITERIA.setdefault(str(number), []).append((status, title, item.name, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA, key=lambda s: int(s.split(".")[0])):
        for status, title, name, detail in _CRITERIA[number]:
            line = f"criterion {number} {status}: {title} [{name}]"
            if detail:
                line += f" ({detail})"
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synth_emodb(tmp_path_factory):
    """Synthetic EMO-DB-style corpus: 10 speakers x 7 emotions x 3 statements."""
    root = tmp_path_factory.mktemp("synth_emodb")
    generate_corpus(root, EMODB, statements=(1, 2, 3), seed=0)
    return root


@pytest.fixture(scope="session")
def synth_features(synth_emodb):
    manifest = build_manifest(synth_emodb, EMODB)
    X = FeatureExtractor().transform(manifest.paths)
    classes = emotions_for(EMODB)
    metas = manifest.metas
    return {
        "manifest": manifest,
        "X": X,
        "y": np.array([classes.index(m.emotion) for m in metas]),
        "speakers": np.array([m.speaker_id for m in metas]),
        "genders": np.array([m.gender for m in metas]),
        "classes": classes,
    }


@pytest.fixture
def quiet_convergence():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        yield


def corpus_root(env):
    root = os.environ.get(env)
    return root if root and Path(root).is_dir() else None
