"""Writes tests/fixtures/layer_costs.json: conv layer configurations with
parameter and MAC counts from the closed-form per-kind formulas."""
import json
import pathlib

CASES = [
    # in, out, k, stride, policy, f (output side)
    (32, 64, 3, 1, "std", 16), (32, 64, 3, 1, "g=4", 16), (32, 64, 3, 1, "G=2", 16),
    (32, 32, 3, 1, "dw", 16), (16, 16, 3, 1, "std", 32), (16, 32, 3, 2, "g=2", 16),
    (64, 64, 3, 1, "g=8", 8), (64, 128, 3, 2, "g=16", 8), (128, 128, 3, 1, "G=1", 8),
    (128, 128, 3, 1, "G=16", 4), (96, 96, 3, 1, "dw", 16), (144, 144, 3, 2, "dw", 8),
    (3, 16, 3, 1, "std", 32), (160, 320, 1, 1, "std", 4), (320, 1280, 1, 1, "std", 4),
    (64, 64, 1, 1, "std", 32), (256, 512, 1, 2, "std", 4), (24, 144, 1, 1, "std", 32),
    (576, 576, 3, 1, "G=4", 8), (960, 960, 3, 1, "g=2", 4), (40, 40, 3, 1, "G=8", 32),
    (8, 8, 1, 1, "g=8", 2), (2, 4, 3, 1, "G=2", 5), (48, 96, 3, 1, "g=3", 7),
]


def groups(policy, m):
    if policy == "std":
        return 1
    if policy == "dw":
        return m
    kind, v = policy.split("=")
    return int(v) if kind == "g" else m // int(v)


def main():
    rows = []
    for m, n, k, s, policy, f in CASES:
        t = groups(policy, m)
        assert m % t == 0 and n % t == 0
        if policy.startswith("G="):
            params = int(policy[2:]) * n * k * k  # G * n * k^2
        elif policy == "dw":
            params = (n // m) * m * k * k
        else:
            params = n * m * k * k // t
        rows.append({"in": m, "out": n, "kernel": k, "stride": s, "padding": k // 2,
                     "policy": policy, "groups": t, "f": f,
                     "params": params, "flops": params * f * f})
    out = pathlib.Path(__file__).resolve().parents[1] / "fixtures" / "layer_costs.json"
    out.write_text(json.dumps({"layers": rows}, indent=1) + "\n")


if __name__ == "__main__":
    main()
