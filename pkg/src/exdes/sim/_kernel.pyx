# cython: boundscheck=False, wraparound=False, cdivision=False, language_level=3
"""Compiled thermal stepping kernel.

Hot inner loop of the simulator: sequential hysteresis makes each step depend
on the previous one, so this cannot be vectorised. The arithmetic mirrors
``_kernel_py.run_thermal`` operation for operation, and the extension is
built with ``-ffp-contract=off``, so both kernels are bit-identical.
"""

BACKEND = "cython"


def run_thermal(Py_ssize_t start, Py_ssize_t stop, double dt_s,
                double[::1] temps, int comp_on,
                double[::1] amb, unsigned char[:, ::1] door, double[::1] cool_mult,
                double[::1] caps, double[::1] k_doors, double[::1] shares,
                double k_leak, double k_cool,
                double[::1] t_high, double[::1] t_low,
                double[:, ::1] out_temps, unsigned char[::1] out_on):
    """Advance the per-chamber Euler model over steps [start, stop).

    See the pure-Python twin for the step semantics. `temps` is mutated to
    the final state; returns the final compressor flag.
    """
    cdef Py_ssize_t n_ch = temps.shape[0]
    cdef Py_ssize_t i, c
    cdef int on = comp_on
    cdef bint all_low
    cdef double cool, a, tc, d, q

    for i in range(start, stop):
        if on:
            all_low = True
            for c in range(n_ch):
                if not (temps[c] < t_low[c]):
                    all_low = False
                    break
            if all_low:
                on = 0
        else:
            for c in range(n_ch):
                if temps[c] > t_high[c]:
                    on = 1
                    break
        out_on[i] = <unsigned char> on
        cool = k_cool * cool_mult[i] if on else 0.0
        a = amb[i]
        for c in range(n_ch):
            tc = temps[c]
            out_temps[c, i] = tc
            d = a - tc
            q = k_leak * d + k_doors[c] * d * door[c, i] - cool * shares[c]
            temps[c] = tc + (dt_s / caps[c]) * q

    return on
