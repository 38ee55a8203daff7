#!/usr/bin/env python3
"""Reference external simulator for the line-delimited JSON protocol.

Each request {"id", "params", "reps", "seed"} is answered with
{"id", "outputs": {name: [value] * reps}} where every output echoes the
parameter of the same name. Output "seed" echoes the request seed and
output "env_seed" echoes WAVECAL_SIM_SEED.

Modes (first argument):
  echo          answer each request immediately
  reverse N     buffer N requests, answer them in reverse order
  malformed     answer the first request of each id with garbage
  wrong-schema  first answer of each id lacks an output
  die-once      exit without answering the very first request
  hang-once     never answer the first request (the driver must time out)
"""
import json
import os
import sys

mode = sys.argv[1] if len(sys.argv) > 1 else "echo"
batch = int(sys.argv[2]) if mode == "reverse" and len(sys.argv) > 2 else 1
marker = os.environ.get("ECHO_MARKER", "")
env_seed = float(os.environ.get("WAVECAL_SIM_SEED", "0"))
seen = set()
pending = []


def first_time_globally():
    # Marker files let a replacement process know the fault already happened.
    if not marker:
        return True
    if os.path.exists(marker):
        return False
    with open(marker, "w") as f:
        f.write("x")
    return True


def answer(req, drop=None):
    outs = {k: [float(v)] * req["reps"] for k, v in req["params"].items()}
    outs["seed"] = [float(req["seed"])] * req["reps"]
    outs["env_seed"] = [env_seed] * req["reps"]
    if drop:
        outs.pop(drop, None)
    return json.dumps({"id": req["id"], "outputs": outs})


def emit(line):
    sys.stdout.write(line + "\n")
    sys.stdout.flush()


for raw in sys.stdin:
    raw = raw.strip()
    if not raw:
        continue
    req = json.loads(raw)
    key = json.dumps(req["params"], sort_keys=True)
    first = key not in seen
    seen.add(key)
    if mode == "malformed" and first:
        emit("this is not json {")
        continue
    if mode == "wrong-schema" and first:
        emit(answer(req, drop=next(iter(req["params"]))))
        continue
    if mode == "die-once" and first_time_globally():
        sys.exit(3)
    if mode == "hang-once" and first_time_globally():
        continue
    if mode == "reverse":
        pending.append(req)
        if len(pending) >= batch:
            for r in reversed(pending):
                emit(answer(r))
            pending = []
        continue
    emit(answer(req))

for r in reversed(pending):
    emit(answer(r))
