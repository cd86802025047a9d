"""Dense numerical kernels: eigenvalues, matrix exponential, QP and LMI solvers."""

from .expm import discretize_zoh, expm
from .lmi import LmiCertificate, LmiProblem, LmiSolution, certify, solve_lmi
from .qp import DenseQp, QpResult, kkt_residuals, solve_qp
from .symmetric import SymMatrix, sym_eig

__all__ = [
    "DenseQp",
    "LmiCertificate",
    "LmiProblem",
    "LmiSolution",
    "QpResult",
    "SymMatrix",
    "certify",
    "discretize_zoh",
    "expm",
    "kkt_residuals",
    "solve_lmi",
    "solve_qp",
    "sym_eig",
]
