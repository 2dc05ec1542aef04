"""Joint downlink/uplink AP association and beamforming for cloud RAN.

Subpackages:
    scenario    network configuration, placement, channel sampling
    conic       second-order cone programming (interior-point solver)
    beamform    SINR evaluation, uplink power control, conic problem builders
    algorithms  association algorithms (group-sparse, relaxed-integer, baselines)
    harness     Monte Carlo experiment driver, aggregation, emitters
"""

from . import algorithms, beamform, conic, harness, scenario

__all__ = ["algorithms", "beamform", "conic", "harness", "scenario"]
__version__ = "0.1.0"
