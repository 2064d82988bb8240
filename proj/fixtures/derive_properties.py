#!/usr/bin/env python3
"""Derive densities for data/chemicals.csv by inverting the published amount tables.

Molecular weights are handbook values. Densities are solved from one reference
cell per chemical (volume_uL = moles * MW / density * 1e6) and rounded to four
decimals, then every other cell using that chemical is re-checked.
"""

MMOL_R2 = 0.75e-3
VOLUME_L = 0.002

# (name, MW, reference moles, reference volume uL)
INVERTED = [
    ("1-bromobutane", 137.02, MMOL_R2, 81.06),
    ("1-iodobutane", 184.02, MMOL_R2, 85.35),
    ("1-chlorobutane", 92.57, MMOL_R2, 78.01),
    ("3-bromopropene", 120.98, MMOL_R2, 64.46),
    ("benzyl bromide", 171.04, MMOL_R2, 86.86),
    ("3-bromobut-1-ene", 135.00, MMOL_R2, 76.70),
    ("3-bromobut-2-ene", 135.00, MMOL_R2, 75.57),
    ("2-bromoethyl cyanide", 133.98, MMOL_R2, 71.39),
    # esterification: R = [alcohol]/[acid], total 4 M, 2 mL
    ("methanol", 32.04, 4 * 2 / 3 * VOLUME_L, 216.03),
    ("ethanol", 46.07, 4 * 2 / 3 * VOLUME_L, 311.42),
    ("propanol", 60.10, 4 * 2 / 3 * VOLUME_L, 399.77),
    ("glycerol", 92.09, 4 * 2 / 3 * VOLUME_L, 389.49),
    ("acetic acid", 60.05, 4 * 1 / 3 * VOLUME_L, 152.65),
    ("propanoic acid", 74.08, 4 * 1 / 3 * VOLUME_L, 198.94),
]

# (name, MW, moles, expected uL) cells re-checked with the derived density
CHECKS = [
    ("methanol", 4 * 1 / 2 * VOLUME_L, 162.02),
    ("methanol", 4 * 1 / 3 * VOLUME_L, 108.02),
    ("ethanol", 4 * 1 / 2 * VOLUME_L, 233.56),
    ("ethanol", 4 * 1 / 3 * VOLUME_L, 155.71),
    ("propanol", 4 * 1 / 2 * VOLUME_L, 299.83),
    ("propanol", 4 * 1 / 3 * VOLUME_L, 199.88),
    ("glycerol", 4 * 1 / 2 * VOLUME_L, 292.12),
    ("glycerol", 4 * 1 / 3 * VOLUME_L, 194.74),
    ("acetic acid", 4 * 1 / 2 * VOLUME_L, 228.98),
    ("acetic acid", 4 * 2 / 3 * VOLUME_L, 305.31),
    ("propanoic acid", 4 * 1 / 2 * VOLUME_L, 298.41),
    ("propanoic acid", 4 * 2 / 3 * VOLUME_L, 397.88),
]


def main():
    derived = {}
    for name, mw, moles, ul in INVERTED:
        density = round(moles * mw / (ul * 1e-3), 4)
        derived[name] = (mw, density)
        print(f"{name},{mw},{density}")
    worst = 0.0
    for name, moles, ul in CHECKS:
        mw, density = derived[name]
        got = moles * mw / density * 1e3
        worst = max(worst, abs(got - ul))
        print(f"  check {name:16s} expected {ul:8.2f} got {got:8.3f}")
    print(f"worst deviation {worst:.3f} uL")


if __name__ == "__main__":
    main()
