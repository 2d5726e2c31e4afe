"""Test shim: runs a workspace's tests and prints one JSON line."""
import contextlib
import importlib.util
import io
import json
import math
import os
import sys
import time
import traceback


def load(name, path):
    spec = importlib.util.spec_from_file_location(name, path)
    module = importlib.util.module_from_spec(spec)
    sys.modules[name] = module
    spec.loader.exec_module(module)
    return module


def close(a, b, rel_tol):
    if isinstance(a, bool) or isinstance(b, bool):
        return a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=rel_tol, abs_tol=rel_tol)
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(close(x, y, rel_tol) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(close(a[k], b[k], rel_tol) for k in a)
    if hasattr(a, "tolist"):
        return close(a.tolist(), b, rel_tol)
    return a == b


def run(name, fn):
    buf = io.StringIO()
    try:
        with contextlib.redirect_stdout(buf):
            fn()
        return {"name": name, "passed": True, "message": buf.getvalue()}
    except BaseException:
        return {"name": name, "passed": False, "message": buf.getvalue() + traceback.format_exc()}


def main():
    ws = sys.argv[1]
    sys.path.insert(0, ws)
    started = time.time()
    tests = []
    try:
        with contextlib.redirect_stdout(io.StringIO()):
            solution = load("solution", os.path.join(ws, "solution.py"))
    except BaseException:
        tests.append({"name": "import", "passed": False, "message": traceback.format_exc()})
        print(json.dumps({"tests": tests, "wall_time": time.time() - started}))
        return

    found = {}
    tests_path = os.path.join(ws, "tests.py")
    if os.path.exists(tests_path) and open(tests_path).read().strip():
        try:
            module = load("challenge_tests", tests_path)
            for attr in dir(module):
                if attr.startswith("test_") and callable(getattr(module, attr)):
                    found[attr] = getattr(module, attr)
        except BaseException:
            tests.append({"name": "import", "passed": False, "message": traceback.format_exc()})

    cases_path = os.path.join(ws, "cases.json")
    if os.path.exists(cases_path):
        spec = json.load(open(cases_path))
        default_tol = spec.get("rel_tol") or 1e-4
        for case in spec.get("cases", []):
            def check(case=case):
                fn = getattr(solution, case["function"])
                got = fn(*case.get("args", []), **case.get("kwargs", {}))
                tol = case.get("rel_tol") or default_tol
                if not close(got, case["expected"], tol):
                    raise AssertionError(f"{case['function']} returned {got!r}, expected {case['expected']!r}")
            found[case["name"]] = check

    for name in sorted(found):
        tests.append(run(name, found[name]))
    print(json.dumps({"tests": tests, "wall_time": time.time() - started}))


if __name__ == "__main__":
    main()
