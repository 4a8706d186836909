//! Experiment harness and post-hoc analyses: seeded suites, sweeps,
//! manifests, dominant values of pooled attention, clustering of
//! consistency vectors and case-study exports.

pub mod cluster;
pub mod experiment;
pub mod linalg;
pub mod reports;
pub mod stats;

pub use cluster::{kmeans, v_measure, KMeans, VMeasure, KMEANS_RESTARTS};
pub use experiment::{
    config_hash, metrics_csv, removal_csv, removal_label, run_ablation_suite, run_modality_removal, run_sweep,
    split_flat_config, summary_csv, sweep_label, train_and_test, variant_label, with_override, write_json, write_text,
    DataSource, ExperimentSpec, Manifest, MeanStd, RemovalAxis, RunFailure, RunReport, Runner, SeedResult, Suite,
    SweepAxis, Trained,
};
pub use linalg::{dominant_eigenvalue, dominant_value_with, pca_2d, Dominant, Pca2};
pub use reports::{
    case_study_export, class_of, cluster_consistency, consistency_boxplot_data, Boxplot, CaseStep, CaseStudy,
    Clustering, EigenRow, Ranked,
};
pub use stats::{mean_std, standardized_difference, summarize, t_test, Summary, TTest};
