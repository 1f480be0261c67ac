//! Classification and shape metrics, the nearest-neighbour and random
//! baselines, and serializable evaluation reports.

mod baselines;
mod metrics;
mod report;

pub use baselines::{nn_baseline_material, nn_baseline_shape, random_baseline, RandomBaseline};
pub use metrics::{accuracy, confusion, macro_f1, per_class_f1, ClassScore, Confusion};
pub use report::{aggregate, read_reports, AggregateRow, EvalReport, MetricRow, Task};
