"""Standalone reference enumerator used to freeze golden fixtures.

Re-implements the frame-scheme rules from scratch (no shared code with the
Rust planner) and prints golden values consumed by the Rust tests.
"""
import json
import math


def rnd(x):
    return int(math.floor(x + 0.5))


def far(lo, n, fut):
    length = n - lo
    c = min(fut, length)
    if c == length:
        return list(range(lo, n))
    if c == 1:
        return [n - 1]
    return [lo + rnd(j * (length - 1) / (c - 1)) for j in range(c)]


def lookahead(n, k, spread):
    lat, fut = k // 2, k // 4
    if n <= k:
        return [(list(range(n)), [], [])]
    first = far(k - fut, n, fut) if spread else list(range(k - fut, k))
    stages = [(list(range(k - fut)), first, [True] * len(first))]
    nxt = k - fut
    while nxt < n:
        nl = min(lat, n - nxt)
        x = list(range(nxt, nxt + nl))
        lo = nxt + nl
        if spread:
            f = far(lo, n, fut)
        else:
            f = list(range(lo, min(lo + fut, n)))
        pc = k - nl - len(f)
        past = list(range(max(0, nxt - pc), nxt))
        stages.append((x, past + f, [False] * len(past) + [True] * len(f)))
        nxt += nl
    return stages


def multires(n, k, strides):
    sub = list(range(0, n, strides[0]))
    stages = []
    for x, y, inc in lookahead(len(sub), k, False):
        stages.append(([sub[i] for i in x], [sub[i] for i in y], inc))
    done = set(sub)
    for s in strides[1:] + [1]:
        targets = [i for i in range(0, n, s) if i not in done]
        for c in range(0, len(targets), k // 2):
            x = targets[c:c + k // 2]
            ctx = sorted(done, key=lambda d: (min(abs(d - xi) for xi in x), d))[: k - len(x)]
            stages.append((x, sorted(ctx), [False] * len(ctx)))
            done.update(x)
    return stages


def cosine(t, T, s=0.008):
    u = t / T
    f = math.cos((u + s) / (1 + s) * math.pi / 2) ** 2 / math.cos(s * math.pi / (2 * (1 + s))) ** 2
    lo = 1e-5 * (1 - 0.9 * u)
    hi = 1 - 1e-5 * (1 + u)
    return min(max(f, lo), hi)


def sigmoid_sched(t, T, b=-3.0, e=3.0):
    sig = lambda z: 1 / (1 + math.exp(-z))
    u = t / T
    f = (sig(-(u * (e - b) + b)) - sig(-e)) / (sig(-b) - sig(-e))
    lo = 1e-5 * (1 - 0.9 * u)
    hi = 1 - 1e-5 * (1 + u)
    return min(max(f, lo), hi)


def sigma_at(i, n, smin=0.002, smax=1000.0, rho=7.0):
    return (smax ** (1 / rho) + i / (n - 1) * (smin ** (1 / rho) - smax ** (1 / rho))) ** rho


if __name__ == "__main__":
    print("cosine T=4:", [repr(cosine(t, 4)) for t in range(1, 5)])
    print("sigmoid T=4:", [repr(sigmoid_sched(t, 4)) for t in range(1, 5)])
    print("sigma[50] of 100:", repr(sigma_at(50, 100)))
    plan = multires(200, 16, [15, 5])
    out = {
        "kind": "multires_ar3",
        "n_frames": 200,
        "budget": 16,
        "stages": [{"x": x, "y": y, "incomplete": inc} for x, y, inc in plan],
    }
    with open("multires_ar3_200_16.json", "w") as fh:
        json.dump(out, fh, indent=1)
    print("multires stages:", len(plan))
