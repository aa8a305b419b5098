import numpy as np
import pytest

from transferlab.system import validate_system


def affine(s, c=0.0, wrap=False, **kw):
    d = {"breakpoints": [0.0, 1.0], "slopes": [s], "intercepts": [c], "wrap": wrap}
    d.update(kw)
    return d


def ifs(branches, weights=None, domain="interval", **kw):
    weights = weights or [1.0 / len(branches)] * len(branches)
    return validate_system({"domain": domain, "kind": "ifs", "branches": branches, "weights": weights, **kw})


def deterministic(fmap, domain="circle", **kw):
    return validate_system({"domain": domain, "kind": "deterministic", "map": fmap, **kw})


def noise_system(kind, base, noise=None, domain="interval", **kw):
    noise = noise or {"breakpoints": [0.0, 1.0], "values": [1.0]}
    return validate_system({"domain": domain, "kind": kind, "base": base, "noise": noise, **kw})


CYCLE2 = np.array([[0.0, 1.0], [1.0, 0.0]])
HALVES = np.full((2, 2), 0.5)
THREE_STATE = np.array([[0.0, 0.5, 0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def cycle(n):
    return np.roll(np.eye(n), 1, axis=1)


def block_diag_halves():
    K = np.zeros((4, 4))
    K[:2, :2] = 0.5
    K[2:, 2:] = 0.5
    return K


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "nodeid", "").split("::")[-1]
            if "test_acceptance.py" not in getattr(rep, "nodeid", "") or not name.startswith("test_criterion_"):
                continue
            if rep.when != "call" and outcome == "passed":
                continue
            num = int(name.split("_")[2])
            title = " ".join(name.split("_")[3:])
            ok = outcome == "passed" and rows.get(num, ("PASS",))[0] == "PASS"
            rows[num] = ("PASS" if ok else "FAIL", title)
    if rows:
        terminalreporter.section("acceptance criteria")
        for num in sorted(rows):
            status, title = rows[num]
            terminalreporter.write_line(f"criterion {num:2d}: {status}  {title}")
