"""Execution harness for subject programs.

Reads newline-delimited JSON commands on stdin and answers each with exactly
one JSON line on stdout. The host owns timeouts: it kills and restarts this
process when a reply misses its deadline.
"""
import ast
import io
import json
import math
import sys
import threading
import time

SUBJECT = "<subject>"
PROTO = 1


def decode(v):
    if isinstance(v, list):
        return [decode(x) for x in v]
    if isinstance(v, dict):
        tag = v.get("__t")
        if tag == "tuple":
            return tuple(decode(x) for x in v.get("v", []))
        if tag == "float":
            return float(v.get("v"))
        return {k: decode(x) for k, x in v.items()}
    return v


def encode(v, depth=0):
    if depth > 200:
        return {"__t": "repr", "v": repr(v)}
    if v is None or isinstance(v, (bool, str)):
        return v
    if isinstance(v, int):
        return v
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            return {"__t": "float", "v": repr(v)}
        return v
    if isinstance(v, list):
        return [encode(x, depth + 1) for x in v]
    if isinstance(v, tuple):
        return {"__t": "tuple", "v": [encode(x, depth + 1) for x in v]}
    if isinstance(v, dict) and all(isinstance(k, str) for k in v) and "__t" not in v:
        return {k: encode(x, depth + 1) for k, x in v.items()}
    return {"__t": "repr", "v": repr(v)}


def syntax_check(cmd):
    source = cmd.get("source", "")
    entry = cmd.get("entry_point", "")
    try:
        tree = ast.parse(source, SUBJECT)
    except (SyntaxError, ValueError) as e:
        return {"ok": False, "diagnostic": "%s: %s" % (type(e).__name__, e), "warnings": []}
    warnings = []
    names = {n.name for n in tree.body if isinstance(n, ast.FunctionDef)}
    if not entry or entry not in names:
        warnings.append("no-entry-point")
    return {"ok": True, "diagnostic": None, "warnings": warnings}


def run_subject(cmd, out):
    source = cmd.get("source", "")
    entry = cmd.get("entry_point", "")
    args = [decode(a) for a in cmd.get("args", [])]
    arcs = set()
    try:
        code = compile(source, SUBJECT, "exec")
    except (SyntaxError, ValueError) as e:
        out.update(status="exception", exception_type=type(e).__name__, coverage=[])
        return
    namespace = {"__name__": "__subject__", "__builtins__": __builtins__}
    try:
        exec(code, namespace)
        fn = namespace[entry]
    except BaseException as e:
        out.update(status="exception", exception_type=type(e).__name__, coverage=[])
        return

    def local_trace(frame, event, arg):
        if event == "line":
            prev = LAST.get(id(frame), frame.f_code.co_firstlineno)
            arcs.add((prev, frame.f_lineno))
            LAST[id(frame)] = frame.f_lineno
        elif event == "return":
            LAST.pop(id(frame), None)
        return local_trace

    def global_trace(frame, event, arg):
        if frame.f_code.co_filename != SUBJECT:
            return None
        LAST[id(frame)] = frame.f_code.co_firstlineno
        return local_trace

    LAST = {}
    sys.settrace(global_trace)
    try:
        value = fn(*args)
        sys.settrace(None)
        out.update(status="ok", value=encode(value))
    except BaseException as e:
        sys.settrace(None)
        tb = e.__traceback__
        in_subject = False
        while tb is not None:
            if tb.tb_frame.f_code.co_filename == SUBJECT:
                in_subject = True
                break
            tb = tb.tb_next
        if isinstance(e, TypeError) and not in_subject:
            out.update(status="illegal_input", exception_type="TypeError")
        else:
            out.update(status="exception", exception_type=type(e).__name__)
    finally:
        sys.settrace(None)
    out["coverage"] = sorted([a, b] for a, b in arcs)


def execute(cmd):
    out = {}
    start = time.monotonic()
    worker = threading.Thread(target=run_subject, args=(cmd, out))
    worker.start()
    worker.join()
    out["wall_time_ms"] = int((time.monotonic() - start) * 1000)
    if "status" not in out:
        out.update(status="exception", exception_type="HarnessError", coverage=[])
    return out


def main():
    sys.setrecursionlimit(10000)
    threading.stack_size(512 * 1024 * 1024)
    stdout = sys.stdout
    stdin = sys.stdin
    sys.stdout = sys.stderr
    sys.stdin = io.StringIO("")
    stdout.write(json.dumps({"ready": True, "proto": PROTO}) + "\n")
    stdout.flush()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            cmd = json.loads(line)
            op = cmd.get("op")
            if op == "syntax_check":
                reply = syntax_check(cmd)
            elif op == "execute":
                reply = execute(cmd)
            else:
                reply = {"ok": False, "error": "unknown op %r" % (op,)}
        except Exception as e:
            reply = {"ok": False, "error": "%s: %s" % (type(e).__name__, e)}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


if __name__ == "__main__":
    main()
