import json

import pytest

from dtrms.config import demo_scenario, parse_scenario

@pytest.fixture
def demo_doc():
    return demo_scenario(loss_prob=0.2, seed=7)


@pytest.fixture
def demo(demo_doc):
    return parse_scenario(demo_doc)


@pytest.fixture
def demo_config(tmp_path, demo_doc):
    p = tmp_path / "demo.json"
    p.write_text(json.dumps(demo_doc, indent=2))
    return p


_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (label, detail) after the checks;
    a failing assertion before that records FAIL via the report hook."""
    state = {"label": request.node.name, "detail": ""}

    def record(label, detail=""):
        state["label"], state["detail"] = label, detail

    yield record
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    _ACCEPTANCE.append((state["label"], ok, state["detail"]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else ""))
