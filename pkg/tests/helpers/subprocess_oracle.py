"""Minimal oracle child process for transport tests.

Speaks the newline-delimited JSON protocol on stdin/stdout: request
{"id", "wav_b64"}, response {"id", "label"}. Labels by the sign of the
first decoded sample, which keeps behavior easy to predict from the
test side. With --shuffle, responses within small windows are emitted
out of order to exercise id-based matching.
"""

import base64
import io
import json
import sys

import numpy as np
from scipy.io import wavfile


def label_for(payload: bytes) -> str:
    _, data = wavfile.read(io.BytesIO(payload))
    first = float(np.asarray(data).reshape(-1)[0])
    return "pos" if first >= 0 else "neg"


def main() -> None:
    shuffle = "--shuffle" in sys.argv
    pending = []
    for line in sys.stdin:
        req = json.loads(line)
        reply = {"id": req["id"], "label": label_for(base64.b64decode(req["wav_b64"]))}
        pending.append(reply)
        # shuffle mode swaps each consecutive pair; callers must pipeline
        # an even number of requests (predict_batch does)
        flush_at = 2 if shuffle else 1
        if len(pending) >= flush_at:
            for r in reversed(pending) if shuffle else pending:
                sys.stdout.write(json.dumps(r) + "\n")
            sys.stdout.flush()
            pending.clear()
    for r in pending:
        sys.stdout.write(json.dumps(r) + "\n")
    sys.stdout.flush()


if __name__ == "__main__":
    main()
