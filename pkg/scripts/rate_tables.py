#!/usr/bin/env python3
"""Closed-form rate tables: N_Gamma, saturation intensities, depumping and photon budget."""
from e2readout.atom import MHZ, load_constants
from e2readout.rates import (CS_E2_ANCHOR, DetectionChain, depump_probability, depump_rate, detection_budget,
                             n_gamma, saturation_intensity, scattering_rate)

for sp in ("cs", "rb87"):
    c = load_constants(sp)
    print(f"{sp:5s} N_Gamma d2 {n_gamma(c, 'd2'):.4g}  cascade {n_gamma(c, 'cascade'):.4g}")

cs = load_constants("cs")
print("E2 I_sat (W/cm^2):", ", ".join(f"f''={f}: {saturation_intensity(f, 4, 'E2', cs, CS_E2_ANCHOR):.4g}"
                                      for f in (6, 5, 4, 3, 2)))
r = depump_rate(1.8, -0.4 * MHZ, cs)
print(f"depump rate {r:.4g} 1/s, probability in 200 ms {depump_probability(r, 0.2):.4g}")

g = cs.level("6p3/2").gamma
n = scattering_rate(2.5, -5.64 * g, g) * 70e-3
for chain in (DetectionChain(0.082, 0.8, 0.55), DetectionChain(0.28, 0.8, 0.5)):
    print(f"eta {chain.eta:.4g}: {detection_budget(chain, n):.0f} counts from {n:.0f} photons, "
          f"{detection_budget(chain, 100):.1f} from 100")
