"""Pure-Python thermal stepping kernel.

Fallback for environments without the compiled extension. The arithmetic is
written operation-for-operation identically to ``_kernel.pyx`` (and that
extension is compiled with FP contraction off), so both kernels produce
bit-identical trajectories; tests assert exact equality.
"""

BACKEND = "pure-python"


def run_thermal(start, stop, dt_s, temps, comp_on, amb, door, cool_mult,
                caps, k_doors, shares, k_leak, k_cool,
                t_high, t_low, out_temps, out_on):
    """Advance the per-chamber Euler model over steps [start, stop).

    Per step i the thermostat decides first (on when any chamber is above its
    upper limit, off when all are below their lower limits), the pre-update
    state is recorded at index i, then each chamber integrates
    ``C*dT/dt = k_leak*(Ta-T) + k_door*(Ta-T)*door - k_cool*share*on`` over dt.

    `temps` is mutated to the final state; returns the final compressor flag.
    """
    n_ch = len(temps)
    span = stop - start
    amb_l = amb[start:stop].tolist()
    cool_l = cool_mult[start:stop].tolist()
    door_l = [door[c, start:stop].tolist() for c in range(n_ch)]
    caps_l = caps.tolist()
    k_doors_l = k_doors.tolist()
    shares_l = shares.tolist()
    t_high_l = t_high.tolist()
    t_low_l = t_low.tolist()
    temps_l = [float(t) for t in temps]
    out_t = [[0.0] * span for _ in range(n_ch)]
    out_o = [0] * span
    on = int(comp_on)
    k_leak = float(k_leak)
    k_cool = float(k_cool)
    dt_s = float(dt_s)

    for j in range(span):
        if on:
            all_low = True
            for c in range(n_ch):
                if not (temps_l[c] < t_low_l[c]):
                    all_low = False
                    break
            if all_low:
                on = 0
        else:
            for c in range(n_ch):
                if temps_l[c] > t_high_l[c]:
                    on = 1
                    break
        out_o[j] = on
        cool = k_cool * cool_l[j] if on else 0.0
        a = amb_l[j]
        for c in range(n_ch):
            tc = temps_l[c]
            out_t[c][j] = tc
            d = a - tc
            q = k_leak * d + k_doors_l[c] * d * door_l[c][j] - cool * shares_l[c]
            temps_l[c] = tc + (dt_s / caps_l[c]) * q

    for c in range(n_ch):
        out_temps[c, start:stop] = out_t[c]
        temps[c] = temps_l[c]
    out_on[start:stop] = out_o
    return on
