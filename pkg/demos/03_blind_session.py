"""One blind session on a 1x3 line, then the exhaustive blindness audit."""

from __future__ import annotations

import json

from opq import blindproto


def main() -> None:
    angles = {(1, 1): 2, (1, 2): 6}
    transcript = blindproto.run_blind(angles, (1, 3), seed=1)
    for event in transcript.to_json():
        print(json.dumps(event))
    print("client output:\n", transcript.client_output().matrix.round(3))

    zeros = {(1, 1): 0, (1, 2): 0}
    print(f"server view distance, masked:   {blindproto.blindness_audit(zeros, angles, (1, 3)):.1e}")
    leak = blindproto.blindness_audit(zeros, {(1, 1): 4, (1, 2): 0}, (1, 3), use_r=False)
    print(f"server view distance, no masks: {leak:.3f}")


if __name__ == "__main__":
    main()
