"""Closed-form bound values at 40 digits, straight from the formulas."""
from mpmath import mp, mpf, log, exp, ceil, cbrt

mp.dps = 40


def theoretical(q, R, L, C):
    b = log(2 / mpf(q))
    return exp(C * R * R * min(log(L), R * b) * b)


def gamma(delta, q, R, C):
    q = mpf(q)
    thr = C * R * R / q ** (C * R)
    if delta >= thr:
        return 1 + exp(-delta * q ** (C * R) / (C * R * R))
    return (2 / q) ** (C * R * R)


def icbrt_ceil(l):
    n = int(round(l ** (1.0 / 3)))
    while n ** 3 < l:
        n += 1
    while n > 1 and (n - 1) ** 3 >= l:
        n -= 1
    return n


def recursion(q, R, L, C):
    q = mpf(q)
    b = log(2 / q)
    thr = exp(C * R * b)
    l, acc, it, stalled = L, mpf(0), 0, False
    while l > thr:
        N = icbrt_ceil(l)
        nxt = (l + 1) // 2 + N * N
        if nxt >= l:
            stalled = True
            break
        acc += log(1 + mpf(1) / N) + log(gamma(N, q, R, C))
        it += 1
        l = nxt
    acc += C * R ** 3 * b * b
    return acc, it, l, stalled


def block_hit(q, R, delta, k):
    return 1 - (1 - mpf(q) ** k) ** (mpf(delta) / (4 * R + 3))


def p_inc(q, R, delta):
    return block_hit(q, R, delta, 4 * R + 2) ** 4


def meeting(T, q, R, delta):
    b = block_hit(q, R, delta, 4 * R + 2) ** (8 * R + 8)
    A = 1 - b
    return exp(-T) * mpf(T) ** (9 * R) + exp(-T * (1 - A ** (mpf(1) / (9 * R)))), A


if __name__ == "__main__":
    print("theoretical(q=1,R=1,L=4,C=1) =", theoretical(1, 1, 4, 1))
    print("theoretical(q=.5,R=1,L=4,C=1) =", theoretical(0.5, 1, 4, 1))
    print("theoretical(q=.3,R=2,L=50,C=0.7) =", theoretical(0.3, 2, 50, 0.7))
    print("gamma(1; q=1,R=1,C=1) =", gamma(1, 1, 1, 1))
    print("gamma(0; q=.5,R=1,C=1) =", gamma(0, 0.5, 1, 1))
    print("gamma(10; q=.5,R=1,C=1) =", gamma(10, 0.5, 1, 1))
    print("recursion(q=.5,R=1,L=1e6,C=1) =", recursion(0.5, 1, 10 ** 6, 1))
    print("recursion(q=.5,R=1,L=3,C=1) =", recursion(0.5, 1, 3, 1))
    print("recursion(q=.2,R=1,L=1e6,C=3) =", recursion(0.2, 1, 10 ** 6, 3))
    print("p_inc(q=.5,R=1,delta=7) =", p_inc(0.5, 1, 7), "tail(4) =", 1 - p_inc(0.5, 1, 7) ** 4)
    print("meeting(T=100,q=.5,R=1,delta=50) =", meeting(100, 0.5, 1, 50))
    print("meeting(T=10,q=1,R=1,delta=3) =", meeting(10, 1, 1, 3))
