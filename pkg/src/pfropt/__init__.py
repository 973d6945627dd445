"""Robust transient-stability-constrained dispatch with power flow routers.

Subpackage map:

- ``network``, ``caseio``: case model, validation, text case format
- ``admittance``: terminal indexing, router-aware admittance assembly, faults
- ``powerflow``: Newton power flow on the routed network
- ``scenarios``: prediction intervals, sampling bounds, scenario reduction
- ``dynamics``: classical multi-machine time-domain simulation
- ``sime``: single-machine equivalent margins, sensitivities, stability cuts
- ``conic``: ADMM solver for quadratic conic programs with PSD blocks
- ``sdp``: the relaxed dispatch program and rank-1 recovery
- ``pipeline``: offline database construction and online dispatch
- ``estimators``: scikit-learn style wrappers around the pipeline
"""

__version__ = "0.1.0"

from .network import NetworkCase, validate_case  # noqa: F401
from .caseio import load_case, load_bundled, save_case  # noqa: F401
