"""Early stopping for races of parallel training runs.

Each run's validation-error curve is fitted by a Bayesian ensemble of
parametric curve families; the predicted error at the budget horizon drives
halt / continue decisions.
"""

from .criteria import (
    HaltPolicy,
    RaceSnapshot,
    ThresholdSpec,
    apply_guards,
    compute_threshold,
    decide,
    normal_upper_tail,
    select_k,
)
from .curve_models import (
    FAMILY_IDS,
    EnsembleSample,
    ModelFamily,
    eval_ensemble,
    eval_minimized,
    eval_model,
    get_family,
    init_params,
    make_families,
)
from .errors import (
    DomainError,
    FormatError,
    InsufficientDataError,
    NotFoundError,
    ProtocolError,
    RunRaceError,
)
from .inference import (
    InferenceConfig,
    LearningCurve,
    Prediction,
    check_validity,
    fit_curve,
    log_likelihood,
    log_prior,
    mh_sample,
    predict_at,
    prob_below,
)
from .race import (
    CurveFitter,
    RaceConfig,
    RaceReport,
    RaceState,
    detect_fail,
    gen_synthetic,
    run_race,
    step,
    sweep,
)
from .advisory import AdvisoryServer
from .formats import ReportDocument, TraceSet, emit_report, emit_trace, parse_report, parse_trace

__version__ = "0.1.0"
