"""Almost-sure behaviour of maxima of i.i.d. integer-valued samples.

Exact tails and threshold sequences (:mod:`dist_core`), closed-form block
event probabilities (:mod:`oracle`), a record jump-chain simulator
(:mod:`record_sim`) and a symbolic classifier for the limsup/liminf
offsets (:mod:`asymptotics`).
"""

from .asymptotics import (
    AsymptoticReport,
    Mode,
    RateRegime,
    RegimeKind,
    Verdict,
    classify_lower,
    classify_upper,
    full_report,
    liminf_offset,
    limsup_offset,
)
from .dist_core import (
    Geometric,
    LogTime,
    PmfTable,
    Poisson,
    block_start,
    from_spec,
    hazard_increment,
    iterated_log,
    log_tail,
    threshold_sequence,
)
from .oracle import EventFamily, expected_hits, hit_probability_exact, max_cdf, max_pmf
from .record_sim import SimConfig, block_hits, run_ensemble, simulate_record_path

__version__ = "0.1.0"
