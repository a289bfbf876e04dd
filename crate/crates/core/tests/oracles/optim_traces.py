"""Reference optimizer traces for tests/optim_traces.rs.

Minimizes f(p) = 0.5 * sum(a * (p - c)**2) from p0 and prints the
parameters after every step with 17 significant digits.
"""
import math

A = [1.0, 3.0, 0.5, 2.0]
C = [0.1, 0.2, -0.3, 0.0]
P0 = [0.5, -1.0, 2.0, 0.25]


def grad(p):
    return [a * (x - c) for a, x, c in zip(A, p, C)]


def adamw(steps, lr=0.01, b1=0.9, b2=0.999, eps=1e-8, wd=0.01):
    p, m, v, out = P0[:], [0.0] * 4, [0.0] * 4, []
    for t in range(1, steps + 1):
        g = grad(p)
        p = [x - lr * wd * x for x in p]
        for i in range(4):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            p[i] -= lr * (m[i] / (1 - b1**t)) / (math.sqrt(v[i] / (1 - b2**t)) + eps)
        out.append(p[:])
    return out


def radam(steps, lr=0.01, b1=0.9, b2=0.999, eps=1e-8):
    p, m, v, out = P0[:], [0.0] * 4, [0.0] * 4, []
    rho_inf = 2 / (1 - b2) - 1
    for t in range(1, steps + 1):
        g = grad(p)
        rho = rho_inf - 2 * t * b2**t / (1 - b2**t)
        for i in range(4):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            mh = m[i] / (1 - b1**t)
            if rho > 4:
                r = math.sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho))
                p[i] -= lr * r * mh / (math.sqrt(v[i] / (1 - b2**t)) + eps)
            else:
                p[i] -= lr * mh
        out.append(p[:])
    return out


def adafactor_2x2(steps, lr=0.01, decay=0.8, eps=1e-30, clip=1.0):
    """p is a row-major 2x2 matrix with factored second moments."""
    p, row, col, out = P0[:], [0.0, 0.0], [0.0, 0.0], []
    for t in range(1, steps + 1):
        g = grad(p)
        beta = 1 - t ** (-decay)
        sq = [x * x for x in g]
        row = [beta * row[r] + (1 - beta) * (sq[2 * r] + sq[2 * r + 1]) for r in range(2)]
        col = [beta * col[j] + (1 - beta) * (sq[j] + sq[2 + j]) for j in range(2)]
        total = sum(row)
        vhat = [row[r] * col[j] / total for r in range(2) for j in range(2)]
        u = [x / math.sqrt(vh + eps) for x, vh in zip(g, vhat)]
        rms = math.sqrt(sum(x * x for x in u) / 4)
        d = max(1.0, rms / clip)
        p = [x - lr * y / d for x, y in zip(p, u)]
        out.append(p[:])
    return out


for name, trace in [("ADAMW", adamw(5)), ("RADAM", radam(10)), ("ADAFACTOR", adafactor_2x2(3))]:
    print(f"const {name}: [[f64; 4]; {len(trace)}] = [")
    for p in trace:
        print("    [" + ", ".join(repr(x) for x in p) + "],")
    print("];")
