import os
from pathlib import Path

import numpy as np
import pytest

from dmls2r import dataio

# criterion -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE = {}


def find_data(schema: dataio.Schema) -> Path | None:
    """Bundled copy, else $DMLS2R_DATA_DIR/<file> or $DMLS2R_DATA_DIR/<name>/<file>."""
    bundled = dataio.builtin_data_path(schema.name)
    if bundled is not None:
        return bundled
    root = os.environ.get("DMLS2R_DATA_DIR")
    if not root or not schema.file:
        return None
    for cand in (Path(root) / schema.file, Path(root) / schema.name / schema.file):
        if cand.is_file():
            return cand
    return None


@pytest.fixture(scope="session")
def boston():
    ds, _ = dataio.prepare(None, dataio.load_schema("boston"))
    return ds


@pytest.fixture(scope="session")
def boston_raw():
    return dataio.load_csv(dataio.builtin_data_path("boston"), dataio.load_schema("boston"))


AIRQ_HEADER = "Date;Time;CO(GT);PT08.S1(CO);NMHC(GT);C6H6(GT);PT08.S2(NMHC);NOx(GT);PT08.S3(NOx);NO2(GT);PT08.S4(NO2);PT08.S5(O3);T;RH;AH;;"


@pytest.fixture
def airq_like(tmp_path):
    """A small file in the Air Quality layout: ';' separated, ',' decimals,
    trailing empty columns and blank trailing rows, -200 for missing."""
    rng = np.random.default_rng(0)
    lines = [AIRQ_HEADER]
    for i in range(40):
        vals = rng.uniform(0.5, 50, size=13).round(1)
        vals[2] = -200  # NMHC mostly missing, dropped by the schema
        if i % 7 == 3:
            vals[5] = -200
        if i % 11 == 5:
            vals[3] = -200
        cells = [f"{v:g}".replace(".", ",") for v in vals]
        lines.append(f"10/03/2004;{18 + i % 6}.00.00;" + ";".join(cells) + ";;")
    lines += [";;;;;;;;;;;;;;;;", ";;;;;;;;;;;;;;;;"]
    p = tmp_path / "AirQualityUCI.csv"
    p.write_text("\n".join(lines) + "\n")
    n_bad = sum(1 for i in range(40) if i % 7 == 3 or i % 11 == 5)
    return p, 40, n_bad


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: (int(s.split(".")[0]), s)):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
