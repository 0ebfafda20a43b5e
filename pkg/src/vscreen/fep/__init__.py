from .awh import AlchemicalModel, AwhResult, NonFiniteEnergy, awh_estimate, awh_run
from .campaign import (
    CompoundPair,
    EmptySamples,
    FreeEnergyResult,
    NotEnoughLigands,
    SemController,
    abfe_estimate,
    pair_compounds,
    read_results,
    run_until_sem,
    standard_error,
    write_results,
)
from .mcs import McsMapping, TooLarge, mapped_bond_count, mcs

__all__ = [
    "AlchemicalModel",
    "AwhResult",
    "CompoundPair",
    "EmptySamples",
    "FreeEnergyResult",
    "McsMapping",
    "NonFiniteEnergy",
    "NotEnoughLigands",
    "SemController",
    "TooLarge",
    "abfe_estimate",
    "awh_estimate",
    "awh_run",
    "mapped_bond_count",
    "mcs",
    "pair_compounds",
    "read_results",
    "run_until_sem",
    "standard_error",
    "write_results",
]
