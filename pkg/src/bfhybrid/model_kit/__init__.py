from .base import (
    EmpiricalStats,
    FdReport,
    FisherBlocks,
    Model,
    ParamSpace,
    empirical_stats,
    expected_stats,
    fd_check,
    fisher_information,
    hessian_matrix,
    numeric_expectation,
    score_vector,
)
from .bundled import (
    GaussianMixture,
    bvnormal,
    exprate,
    exprates,
    gauss1,
    gauss2,
    get_model,
    mixture,
    mvn,
    poisson,
)
from .io import CsvData, ingest_csv
from .symbolic import SymbolicModel
