"""Homogeneity and popularity bias of Web platforms measured from click logs."""

from webbias.bias import (
    AppBiasSummary,
    BiasScore,
    ClickSample,
    LorenzCurve,
    aggregate_app,
    correlate_biases,
    homogeneity_bias,
    lorenz_curve,
    popularity_bias,
    score_sample,
)
from webbias.clicks import (
    CategoryMap,
    ClickRecord,
    ClickTable,
    assign_application,
    filter_news,
    parse_click_log,
    read_click_log,
)
from webbias.graph import (
    DomainGraph,
    PageRankVector,
    PercentileTable,
    compute_pagerank,
    load_edge_list,
    rank_percentiles,
)
from webbias.null_model import (
    TrafficGraph,
    WalkerConfig,
    baseline_biases,
    build_traffic_graph,
    simulate_walkers,
)
from webbias.sampling import ClickStore, SampleSpec, sample_fixed_count, sample_time_window
from webbias.scaling import fit_rank_distribution, fit_traffic_scaling, traffic_by_domain
from webbias.user_mix import compute_mix, hexbin, ternary_project

__version__ = "0.1.0"
