"""Bilateral counterparty risk on a CDS under a margin agreement.

Monte Carlo engine for CVA, UCVA, DVA, SVA and exposure profiles with
CIR-driven common-shock defaults.
"""

from .cds import ContractSpec, build_clean_curve, clean_price, fair_spread, protection_leg, risky_annuity, upfront_convert
from .collateral import MarginAgreement, MarginState, collateral_at, effective_collateral, margin_update
from .config import CaseTable, RunConfig, load_config
from .copula import ShockStructure, group_intensities, sample_first_default, survival
from .errors import CdsXvaError, ConfigError, MarginStateError, PricingError, SimulationFault
from .exposure import (
    ExposureReport,
    SpreadReport,
    closeout_cashflow,
    cva0_mc,
    epe_ene_curves,
    forward_cva,
    pfe_sample,
    risky_spread_and_sva,
    run_cases,
)
from .factors import CirParams, FactorRegime, TimeGrid, affine_transform, cir_moments, simulate_factors

__version__ = "0.1.0"
