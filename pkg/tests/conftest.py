import copy
import json
from pathlib import Path

import pytest

from hfc.config import parse_config
from hfc.simkit import run

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"

_RUNS = {}
ACCEPTANCE = {}


def load_raw(name):
    with open(SCENARIOS / f"{name}.json") as fh:
        return json.load(fh)


def scenario(name, edit=None):
    """Parsed scenario `name`, after applying edit(raw) to a copy of the JSON."""
    raw = copy.deepcopy(load_raw(name))
    if edit is not None:
        edit(raw)
    return parse_config(raw)


def cached_run(key, name, edit=None):
    """Simulate once per test session; later calls with the same key reuse the record."""
    if key not in _RUNS:
        _RUNS[key] = run(scenario(name, edit))
    return _RUNS[key]


def record_acceptance(number, ok, detail):
    ACCEPTANCE[str(number)] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
