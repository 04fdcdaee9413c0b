"""Loopback scorer speaking the external-scorer protocol.

Run as ``python -m limeshift.echo_scorer [--mode MODE] ...``.  It reads one
JSON request per line on stdin and answers with ``[1 - p, p]``, where
``p`` depends on the mode:

``logistic``      sigmoid(sum of values - offset)
``constant``      ``--value``
``linear``        ``--bias`` plus ``--weights`` summed over present feature ids

The remaining modes deliberately break the protocol for testing:
``unnormalized`` answers ``[0.6, 0.6]``, ``bad-id`` echoes ``id + 1``,
``garbage`` writes a non-JSON line.  ``--stderr`` also writes one
diagnostic line per request to stderr.
"""

import argparse
import json
import math
import sys


def _parse_weights(text):
    out = {}
    for part in filter(None, (text or "").split(",")):
        key, _, val = part.partition(":")
        out[int(key)] = float(val)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(prog="limeshift-echo-scorer")
    ap.add_argument("--mode", default="logistic",
                    choices=["logistic", "constant", "linear", "unnormalized", "bad-id",
                             "garbage"])
    ap.add_argument("--value", type=float, default=0.5)
    ap.add_argument("--offset", type=float, default=0.0)
    ap.add_argument("--bias", type=float, default=0.0)
    ap.add_argument("--weights", default="", help="comma list of 0-based id:weight")
    ap.add_argument("--stderr", action="store_true")
    args = ap.parse_args(argv)
    weights = _parse_weights(args.weights)

    for line in sys.stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        rid = req["id"]
        if args.mode == "constant":
            p = args.value
        elif args.mode == "linear":
            p = args.bias + math.fsum(weights.get(i, 0.0) for i in req["indices"])
        else:
            s = math.fsum(req["values"]) - args.offset
            p = 1.0 / (1.0 + math.exp(-s)) if s > -700 else 0.0
        scores = [1.0 - p, p]
        if args.mode == "unnormalized":
            scores = [0.6, 0.6]
        if args.mode == "bad-id":
            rid += 1
        if args.stderr:
            print(f"scored request {req['id']}", file=sys.stderr, flush=True)
        if args.mode == "garbage":
            sys.stdout.write("this is not json\n")
        else:
            sys.stdout.write(json.dumps({"id": rid, "scores": scores}) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
