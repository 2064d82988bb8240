#!/usr/bin/env python3
"""Write fixtures/<exp>/stub.json: a scripted multi-agent session that ends
with the ground-truth final steps of that experiment."""

import json
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent

TOOL_CALLS = {
    "exp1": [("get_chem_volume", {"chemical_name": "naphthalene", "mass_mg": 5})],
    "exp2": [("get_chem_volume", {"chemical_name": "lithium perchlorate", "mass_mg": 20})],
    "exp3": [
        ("find_the_concentration_of_n_percent_solution", {"solution_name": "28% ammonia"}),
        ("find_the_volume_corresponding_to_moles", {"chemical_name": "benzaldehyde", "moles": 0.0005}),
    ],
    "exp4": [
        ("find_chemical_amounts_in_a_solution",
         {"total_molarity": 4, "molar_ratio": 0.5, "chemical_1": "acetic acid", "chemical_2": "methanol",
          "volume_L": 0.002}),
    ],
    "exp5": [
        ("find_chemical_amounts_in_a_solution",
         {"total_molarity": 4, "molar_ratio": 1, "chemical_1": "acetic acid", "chemical_2": "ethanol",
          "volume_L": 0.002}),
    ],
}


def stub(exp):
    steps = (ROOT / exp / "steps.txt").read_text().strip()
    calls = [{"name": n, "arguments": a} for n, a in TOOL_CALLS[exp]]
    return {
        "on_exhausted": "repeat_last",
        "route": ["Understand_And_Refine", "Chemical_Calculations", "Vial_Arrangement", "Processing_Steps",
                  "Final_Steps"],
        "agent": [
            "I will prepare the procedure described. Should I proceed with the chemicals and amounts as stated?",
            {"content": "", "tool_calls": calls},
            "The amounts follow from the tool results above.",
            "Each composition gets its own vial, filling rows from A1.",
            "Processing steps follow the additions, with every stir or vortex reset to zero after its delay.",
            "Here are the final steps.\n" + steps,
        ],
        "self_check": ["NO_CHANGES"],
    }


def main():
    for exp in TOOL_CALLS:
        (ROOT / exp / "stub.json").write_text(json.dumps(stub(exp), indent=2) + "\n")


if __name__ == "__main__":
    main()
