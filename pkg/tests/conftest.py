from __future__ import annotations

import logging
from pathlib import Path

import pytest

from iq_meta.model import MetaDataset


# Stem cell therapy for stroke, NIHSS point difference
STROKE_STUDIES = (
    ("Wang (2013)", -3.10, 8, 1.81),
    ("Prasad (2012)", -6.30, 11, 3.16),
    ("Moniche (2012)", -9.40, 10, 0.53),
    ("Friedrich (2012)", -14.20, 20, 3.04),
    ("Honmou (2011)", -7.00, 12, 1.40),
    ("Savitz (2011)", -9.00, 10, 1.60),
    ("Battistella (2011)", -3.40, 6, 2.41),
    ("Suarez (2009)", -2.20, 5, 1.15),
    ("Savitz (2005)", -1.40, 5, 0.97),
    ("Bang (2005)", -2.00, 5, 1.06),
)

STROKE_CSV = "study,y,n,var_y\n" + "".join(
    f"{label},{y:.2f},{n},{v:.2f}\n" for label, y, n, v in STROKE_STUDIES
)


@pytest.fixture
def stroke() -> MetaDataset:
    return MetaDataset.from_arrays(
        [row[1] for row in STROKE_STUDIES],
        [row[2] for row in STROKE_STUDIES],
        [row[3] for row in STROKE_STUDIES],
        labels=[row[0] for row in STROKE_STUDIES],
    )


@pytest.fixture
def stroke_csv(tmp_path: Path) -> Path:
    path = tmp_path / "stroke.csv"
    path.write_text(STROKE_CSV, encoding="utf-8")
    return path


@pytest.fixture
def write_csv(tmp_path: Path):
    def write(name: str, text: str) -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


@pytest.fixture(autouse=True)
def restore_package_logger():
    logger = logging.getLogger("iq_meta")
    saved = (list(logger.handlers), logger.level, logger.propagate)
    yield
    logger.handlers[:], logger.level, logger.propagate = saved
