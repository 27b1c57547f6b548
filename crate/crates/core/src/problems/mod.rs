//! Built-in benchmark problems and their data.

pub mod dataset;
pub mod hyperclean;
pub mod logreg;
pub mod toy;

pub use dataset::{
    corrupt_labels, load_csv, load_libsvm, make_synthetic_classification, parse_csv, parse_libsvm,
    Dataset, Features, Row, SyntheticSpec,
};
pub use hyperclean::{make_hyperclean, HyperCleanProblem};
pub use logreg::{make_logreg, LogRegHpo};
pub use toy::{make_toy, QuadraticToy};
