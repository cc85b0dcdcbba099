from ._pysemid import (  # noqa: F401
    PipelineConfig,
    PipelineVariant,
    balance_loss,
    bias_metrics,
    hr_at_k,
    ndcg_at_k,
    reweight,
    rq_fit,
    run_all,
    stage_analyze,
    stage_evaluate,
    stage_gen_data,
    stage_rebalance,
    stage_report,
    stage_tokenize,
    stage_train,
)

__all__ = [
    "PipelineConfig",
    "PipelineVariant",
    "balance_loss",
    "bias_metrics",
    "hr_at_k",
    "ndcg_at_k",
    "reweight",
    "rq_fit",
    "run_all",
    "stage_analyze",
    "stage_evaluate",
    "stage_gen_data",
    "stage_rebalance",
    "stage_report",
    "stage_tokenize",
    "stage_train",
]
