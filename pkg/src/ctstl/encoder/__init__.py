from ..scenario import EncodingConfig
from .bounds import TermExtremes, term_extremes, term_window_min
from .build import Encoding, PlanResult, build_miqp, check_big_m, plan
from .cbf import (CbfWindowRecord, EcbfSpec, ecbf_spec, encode_cbf_window, encode_ecbf,
                  relative_degree, zcbf_spec)
from .formula import FormulaEncoder, encode_formula
from .grid import align_time_grid

__all__ = [
    "EncodingConfig", "TermExtremes", "term_extremes", "term_window_min", "Encoding",
    "PlanResult", "build_miqp", "check_big_m", "plan", "CbfWindowRecord", "EcbfSpec",
    "ecbf_spec", "encode_cbf_window", "encode_ecbf", "relative_degree", "zcbf_spec",
    "FormulaEncoder", "encode_formula", "align_time_grid",
]
