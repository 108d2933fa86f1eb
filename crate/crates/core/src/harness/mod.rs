// SPDX-License-Identifier: MIT OR Apache-2.0

//! Datasets, accuracy and efficiency evaluation, and reports.

pub mod dataset;
pub mod eval;
pub mod report;
pub mod synthetic;

pub use dataset::{load_dataset, parse_dataset, subsample, DatasetFormat, GoldRef, QaSample, MAX_SAMPLES};
pub use eval::{benchmark, evaluate, evaluate_accuracy, judge, Benchmark, EvalOptions, EvalReport, Method, SampleRecord};
pub use report::{render_heatmap, render_report, ReportStyle};
pub use synthetic::synthetic_suite;
