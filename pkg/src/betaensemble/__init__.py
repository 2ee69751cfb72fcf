from betaensemble.basis import (
    GramMatrix,
    Realization,
    SectionBasis,
    bergman_function,
    bergman_integral,
    build_basis,
    dimension,
    gram,
    lp_difference,
    orthonormal_basis,
    orthonormalize,
    weighted_row,
)
from betaensemble.config import ExperimentConfig, load_config, parse_config
from betaensemble.detcore import (
    Configuration,
    DetState,
    FeketeBudget,
    FeketeResult,
    bm_constant,
    bm_fit,
    fekete_search,
    logdet,
    sigma,
    tau2,
    update_row,
)
from betaensemble.domain import (
    AmbientModel,
    BaseMeasure,
    Box,
    Cap,
    Density,
    Weight,
    WeightedDomain,
    contains,
    metric_log_weight,
    sample_base,
)
from betaensemble.exceptions import (
    BasisException,
    BetaEnsembleException,
    ConfigException,
    DetCoreException,
    DomainException,
    MetricsException,
    MissingInputException,
    SamplingException,
    SingularGramException,
)
from betaensemble.harness import (
    Harness,
    HarnessEvent,
    HarnessEventType,
    cmd_diag,
    cmd_fekete,
    cmd_ldp,
    cmd_sample,
)
from betaensemble.metrics import (
    EmpiricalMeasure,
    EquilibriumRef,
    TestDictionary,
    dist_gamma,
    equilibrium_ref,
    ldp_fit,
    wasserstein1,
)
from betaensemble.quadrature import QuadratureSpec
from betaensemble.records import RunRecord
from betaensemble.sampler import (
    ChainState,
    EnsembleSpec,
    dpp_sample,
    lbb_check,
    mcmc_step,
    run_chain,
)

__all__ = [
    i.__name__
    for i in [
        AmbientModel,
        Box,
        Cap,
        Weight,
        Density,
        WeightedDomain,
        BaseMeasure,
        contains,
        metric_log_weight,
        sample_base,
        QuadratureSpec,
        Realization,
        SectionBasis,
        GramMatrix,
        dimension,
        build_basis,
        weighted_row,
        gram,
        orthonormalize,
        orthonormal_basis,
        bergman_function,
        bergman_integral,
        lp_difference,
        Configuration,
        DetState,
        FeketeBudget,
        FeketeResult,
        logdet,
        update_row,
        fekete_search,
        sigma,
        bm_constant,
        bm_fit,
        tau2,
        EnsembleSpec,
        ChainState,
        mcmc_step,
        run_chain,
        dpp_sample,
        lbb_check,
        EmpiricalMeasure,
        TestDictionary,
        EquilibriumRef,
        dist_gamma,
        wasserstein1,
        equilibrium_ref,
        ldp_fit,
        ExperimentConfig,
        load_config,
        parse_config,
        RunRecord,
        Harness,
        HarnessEvent,
        HarnessEventType,
        cmd_fekete,
        cmd_sample,
        cmd_ldp,
        cmd_diag,
        BetaEnsembleException,
        DomainException,
        BasisException,
        SingularGramException,
        DetCoreException,
        SamplingException,
        MetricsException,
        ConfigException,
        MissingInputException,
    ]
]
