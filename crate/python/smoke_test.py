"""Smoke test for the stresnet_py extension module.

Build and install first:  pip install ./crates/py   (or: maturin develop -m crates/py/Cargo.toml)
Then run:                 python python/smoke_test.py
"""

import math
import os
import random
import tempfile

import stresnet_py as st


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        raise SystemExit(1)


def main():
    m = st.Model.init(22, seed=1)
    check(m.weight_count == 11464 == st.WEIGHT_COUNT, "11464 weights")
    check(m.param_count == 11553 == st.PARAM_COUNT, "11553 parameters")
    check(
        m.layer_shapes() == [(32, 1, 5, 5), (32, 1, 3, 3), (16, 64, 3, 3), (8, 16, 3, 3), (1, 8, 1, 1)],
        "layer shapes",
    )

    rng = random.Random(0)
    block = [rng.random() for _ in range(16 * 16)]
    zero = st.Model.zeros(27)
    check(zero.forward(block, block, 16, 16) == block, "zero model is the identity")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.strn")
        m.save(path)
        back = st.Model.load(path)
        check(back.qp == 22 and len(back.parameters()) == 11553, "save/load round trip")

    frame = bytes(rng.randrange(256) for _ in range(64 * 48))
    check(math.isinf(st.psnr(frame, frame)), "psnr of identical frames is inf")
    degraded = st.degrade(frame, 64, 48, 16.0)
    check(len(degraded) == len(frame) and st.mse(frame, degraded) > 0, "degrade changes the frame")

    d1, d2, flag = st.decide_flag(b"\x10\x10", b"\x12\x12", b"\x11\x11")
    check((d1, d2, flag) == (4.0, 1.0, True), "flag on when the filter helps")
    check(st.decide_flag(b"\x10", b"\x11", b"\x0f")[2] is False, "ties keep the flag off")

    curve = [(1000, 34.1), (1800, 36.3), (3200, 38.4), (6000, 40.2)]
    check(abs(st.bd_rate(curve, curve)) < 1e-9, "bd-rate of identical curves is 0")
    scaled = [(r * 1.1, p) for r, p in curve]
    check(abs(st.bd_rate(curve, scaled) - 10.0) < 1e-6, "x1.10 rates give +10%")

    check(abs(st.timing_ratio(100, 135.7) - 0.357) < 1e-12, "timing ratio")
    check(st.timing_report(100, 135.7) == "increment 35.7%, ratio 135.7%", "timing report")

    hp = st.hyper_params(37)
    check((hp["learning_rate"], hp["beta1"], hp["beta2"], hp["iterations"]) == (1e-8, 0.9, 0.988, 300000),
          "QP 37 defaults")
    print("all checks passed")


if __name__ == "__main__":
    main()
