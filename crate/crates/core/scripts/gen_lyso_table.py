#!/usr/bin/env python3
"""Regenerate data/lyso_attenuation.csv.

Photoelectric and incoherent (Compton) cross sections come from xraylib for
Lu1.9Y0.1SiO5 at 7.1 g/cm^3 up to 0.8 MeV. Above that the Compton column is
the free-electron Klein-Nishina cross section scaled to match xraylib at
0.8 MeV and the photoelectric column is extended log-log from 0.7-0.8 MeV.
Coherent scattering and pair production are not included in mu_total.
"""
import math
import sys

import xraylib

COMPOUND = "Lu1.9Y0.1SiO5"
DENSITY = 7.1  # g/cm^3
MC2_KEV = 510.99895
RE_CM = 2.8179403262e-13
LU_K_EDGE_KEV = 63.314


def kn_sigma(e_kev):
    k = e_kev / MC2_KEV
    l = math.log(1 + 2 * k)
    return 2 * math.pi * RE_CM**2 * (
        (1 + k) / k**2 * (2 * (1 + k) / (1 + 2 * k) - l / k)
        + l / (2 * k)
        - (1 + 3 * k) / (1 + 2 * k) ** 2
    )


def per_mm(cm2_per_g):
    return cm2_per_g * DENSITY / 10.0


def main():
    energies = sorted(
        set(
            [round(50.0 * (1500.0 / 50.0) ** (i / 63), 3) for i in range(64)]
            + [LU_K_EDGE_KEV - 0.004, LU_K_EDGE_KEV + 0.004, 184.0, 477.3, 661.7, 800.0]
        )
    )
    compt_800 = xraylib.CS_Compt_CP(COMPOUND, 800.0)
    photo_700 = xraylib.CS_Photo_CP(COMPOUND, 700.0)
    photo_800 = xraylib.CS_Photo_CP(COMPOUND, 800.0)
    slope = math.log(photo_800 / photo_700) / math.log(800.0 / 700.0)
    out = sys.stdout
    out.write("energy_mev,mu_total_mm,mu_photo_mm,mu_compton_mm\n")
    for e in energies:
        if e <= 800.0:
            photo = xraylib.CS_Photo_CP(COMPOUND, e)
            compt = xraylib.CS_Compt_CP(COMPOUND, e)
        else:
            photo = photo_800 * (e / 800.0) ** slope
            compt = compt_800 * kn_sigma(e) / kn_sigma(800.0)
        p, c = per_mm(photo), per_mm(compt)
        out.write(f"{e / 1000.0:.6f},{p + c:.6e},{p:.6e},{c:.6e}\n")


if __name__ == "__main__":
    main()
