#!/usr/bin/env python3
"""Reference values for the unit tests, evaluated at 50 significant digits.

Run: python3 tests/oracles/derive_values.py
The C++ tests hard-code the printed numbers.
"""
from mpmath import mp, mpf, log, log10, sqrt, pi

mp.dps = 50


def path_loss_db(d_m, f_ghz):
    return mpf("32.4") + 20 * log10(mpf(f_ghz)) + 20 * log10(mpf(d_m))


def noise_w_per_hz(dbm_hz):
    return mpf(10) ** ((mpf(dbm_hz) - 30) / 10)


def rate(bw, p, g, n0):
    return bw * log(1 + p * g / (n0 * bw)) / log(2)


def expert_flops(m, mh, eta):
    return 4 * m * mh + 2 * mh * m + eta * mh + mh


def cosine(w, t):
    dot = sum(mpf(a) * mpf(b) for a, b in zip(w, t))
    return dot / (sqrt(sum(mpf(a) ** 2 for a in w)) * sqrt(sum(mpf(b) ** 2 for b in t)))


def show(name, value):
    print(f"{name:32s} {mp.nstr(value, 20)}")


show("path_loss(100 m, 3.5 GHz) dB", path_loss_db(100, "3.5"))
show("path_loss(10 m, 3.5 GHz) dB", path_loss_db(10, "3.5"))
show("mean_amplitude(100 m)", mpf(10) ** (-path_loss_db(100, "3.5") / 20))
show("rayleigh sigma(100 m)", mpf(10) ** (-path_loss_db(100, "3.5") / 20) / sqrt(pi / 2))

n0 = noise_w_per_hz(-174)
bw = mpf("12.5e6")
g = mpf("1e-9")
r_down = rate(bw, 10, g, n0)
r_up = rate(bw, mpf("0.2"), g, n0)
show("downlink rate bit/s", r_down)
show("uplink rate bit/s", r_up)

flops = expert_flops(4096, 14336, 4)
show("expert_flops default", flops)

bits = 16 * 4096
comm = bits / r_down + bits / r_up
comp = flops / mpf("5e12")
show("token comm_s", comm)
show("token comp_s", comp)
show("token total_s", comm + comp)

show("cosine((0.7,0.3),(2,8))", cosine([mpf("0.7"), mpf("0.3")], [2, 8]))
