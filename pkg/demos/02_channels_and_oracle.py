"""
Noise channels checked against brute force
==========================================

Each PI-level channel map (collective and individual decay, dephasing,
pumping, and spin loss) is compared with the exact channel on the full
2^N Hilbert space for small N.
"""

from spinqec.oracle import verify_channel_maps, verify_loss_dephasing_equivalence

for n in range(2, 7):
    rep = verify_channel_maps(n)
    print(f"N={n}: worst map error {rep['max_map_error']:.1e}")

# losing a spin and re-appending it in a random state acts like dephasing
rep = verify_loss_dephasing_equivalence(4)
print(f"rate factor {rep['rate_factor']:.3f}, deviation {rep['normalized_deviation']:.1e}")
