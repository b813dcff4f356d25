"""A single mollified vortex ring translating along its axis.

Run with ``python demos/vortex_ring.py``.  The ring keeps its shape while
its center moves at the self-induced speed predicted by the convolution
of the kernel with the ring's own current.
"""

import numpy as np

from filaments import CurveFamily, FilamentCurrent, MollifiedBiotSavart, convolve, simulate_filaments

M, T, dt = 64, 1.0, 0.01
s = 2 * np.pi * np.arange(M) / M
ring = np.stack([np.cos(s), np.sin(s), np.zeros(M)], 1)
family = CurveFamily(ring[None], [1.0], True)
kernel = MollifiedBiotSavart(0.5)

path = simulate_filaments(family, kernel, T, dt)
speed = convolve(kernel, FilamentCurrent(family), ring[0], deriv=0)[0][2]
center = path.positions[:, 0].mean(axis=1)
radius = np.linalg.norm(path.positions[-1, 0, :, :2] - center[-1, :2], axis=1)

print(f"predicted axial speed   {speed:+.6f}")
print(f"measured axial speed    {(center[-1, 2] - center[0, 2]) / T:+.6f}")
print(f"radius after t={T}:     {radius.min():.8f} .. {radius.max():.8f}")
