from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np
import pytest

ML_PATH = Path(os.environ.get("GRAPHRAG_IRL_MOVIELENS", "/root/data/ml-latest-small"))

GENRES = ["Action", "Comedy", "Drama", "Horror", "Romance", "Sci-Fi"]
TAG_WORDS = ["dark", "funny", "classic", "twist ending", "space", "Space", "visually stunning", "slow"]


def write_movielens(root: Path, ratings, movies, tags=()) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "ratings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["userId", "movieId", "rating", "timestamp"])
        w.writerows(ratings)
    with open(root / "movies.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["movieId", "title", "genres"])
        w.writerows(movies)
    with open(root / "tags.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["userId", "movieId", "tag", "timestamp"])
        w.writerows(tags)
    return root


def synthetic_movielens(root: Path, n_users: int = 40, n_items: int = 60, per_user: int = 28, seed: int = 0) -> Path:
    """Users mostly like items of one favourite genre; ratings spread over time."""
    rng = np.random.default_rng(seed)
    movies = []
    for i in range(1, n_items + 1):
        g = {GENRES[i % 6]}
        if i % 4 == 0:
            g.add(GENRES[(i // 6) % 6])
        movies.append([i, f"Movie {i} ({1980 + i % 30})", "|".join(sorted(g))])
    tags = []
    for i in range(1, n_items + 1):
        for k in range(int(rng.integers(0, 4))):
            word = TAG_WORDS[(i + 3 * k) % len(TAG_WORDS)]
            for _ in range(int(rng.integers(1, 4))):
                tags.append([1, i, word, 1000])
    ratings = []
    for u in range(1, n_users + 1):
        fav = GENRES[u % 6]
        items = rng.choice(np.arange(1, n_items + 1), size=per_user, replace=False)
        t0 = 1_000_000 + int(rng.integers(0, 10_000))
        for k, i in enumerate(items):
            liked = fav in movies[i - 1][2] and rng.random() < 0.9
            r = float(rng.choice([4.0, 4.5, 5.0])) if liked else float(rng.choice([1.0, 2.0, 3.0, 3.5]))
            if not liked and rng.random() < 0.15:
                r = 4.0
            ratings.append([u, int(i), r, t0 + 3600 * k])
    return write_movielens(root, ratings, movies, tags)


TOY_OVERRIDES = {
    "dataset.min_user_interactions": 5,
    "dataset.min_item_interactions": 2,
    "dataset.n_neg": 20,
    "graph.min_concept_freq": 2,
    "retrieval.m": 8,
    "retrieval.k_recent": 5,
    "train.max_epochs": 4,
    "train.patience": 2,
    "train.hidden": 8,
    "train.batch_size": 16,
    "train.n_neg": 20,
    "rerank.shortlist_n": 8,
    "seeds": [0],
}


@pytest.fixture
def toy_dir(tmp_path) -> Path:
    return synthetic_movielens(tmp_path / "ml")


@pytest.fixture
def toy_config(toy_dir, tmp_path):
    from graphrag_irl.config import load_config

    return load_config(None, {**TOY_OVERRIDES, "dataset.path": str(toy_dir), "output_dir": str(tmp_path / "out")})


@pytest.fixture(scope="session")
def toy_experiment(tmp_path_factory):
    """A fully built experiment on the synthetic dataset (shared, read-only)."""
    from graphrag_irl.config import load_config
    from graphrag_irl.experiment import Experiment

    base = tmp_path_factory.mktemp("toy")
    root = synthetic_movielens(base / "ml")
    cfg = load_config(None, {**TOY_OVERRIDES, "dataset.path": str(root), "output_dir": str(base / "out")})
    return Experiment(cfg)


def has_movielens() -> bool:
    return (ML_PATH / "ratings.csv").exists()


# ---------------------------------------------------------------------------
# acceptance verdicts: one PASS/FAIL line per criterion in the terminal summary

_VERDICTS: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def verdict(request):
    n = request.node.get_closest_marker("criterion").args[0]

    def record(ok: bool, detail: str) -> None:
        _VERDICTS[n] = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}"
        assert ok, detail

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.passed:
        return
    n = marker.args[0]
    if n in _VERDICTS:
        return
    if rep.skipped:
        reason = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else "skipped"
        _VERDICTS[n] = f"SKIP criterion {n:>2}: {reason}"
    else:
        why = call.excinfo.exconly() if call.excinfo else rep.longreprtext
        _VERDICTS[n] = f"FAIL criterion {n:>2}: error during {rep.when}: {why[:200]}"


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
