//! Fixtures shared by the benchmarks under benches/.

use grape_core::config::DataSource;
use grape_core::dataset::Corpus;
use grape_core::model::{PVariant, ParameterSet};
use grape_core::traineval::initial_parameters;
use grape_core::RunConfig;

/// Default-sized synthetic corpus (500 users, 2000 candidate items, three
/// indicators) with freshly initialized default-sized parameters.
pub fn fixture() -> (RunConfig, Corpus, ParameterSet) {
    let mut cfg = RunConfig::default();
    cfg.data.source = DataSource::Synthetic;
    let corpus = cfg.corpus().expect("synthetic corpus");
    let params = initial_parameters(&corpus, &cfg.model, PVariant::PGrape, cfg.seed).expect("parameters");
    (cfg, corpus, params)
}
