//! Cross-validate all four settings on a freshly generated synthetic corpus.
//!
//! Usage: `cargo run --release -p plexity --example synthetic_cv [data_seed] [fold_seed]`
//! A partial pipeline configuration can be passed as JSON in `PLEXITY_PIPELINE`.

use std::time::Instant;

use plexity::corpus::SentenceStore;
use plexity::ensemble::make_fold_plan;
use plexity::evalmetrics::{cross_validate_many, render_cv_table, Setting};
use plexity::pipeline::{CorpusContext, Pipeline, PipelineConfig};
use plexity::synth::{generate, SynthConfig};

fn main() -> plexity::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("numeric seed"));
    let data_seed = args.next().unwrap_or(2022);
    let fold_seed = args.next().unwrap_or(7);
    let start = Instant::now();
    let data = generate(&SynthConfig {
        seed: data_seed,
        ..SynthConfig::default()
    })?;
    let mut store = SentenceStore::new();
    for (tag, lines) in &data.corpora {
        store.commit(lines.iter().map(|l| (l.clone(), tag.clone())).collect());
    }
    store.deduplicate();
    let mut config: PipelineConfig = match std::env::var("PLEXITY_PIPELINE") {
        Ok(json) => serde_json::from_str(&json)?,
        Err(_) => PipelineConfig::default(),
    };
    config.fold_seed = fold_seed;
    let ctx = CorpusContext::build(store, &config.archetypes)?;
    let excluded: Vec<&str> = data.train.iter().chain(&data.test).map(|l| l.text.as_str()).collect();
    let pipeline = Pipeline::new(&ctx, config.clone(), &data.train, &excluded)?;
    let plan = make_fold_plan(data.train.len(), config.n_folds, fold_seed)?;
    let reports = cross_validate_many(&Setting::ALL, &data.train, &plan, &pipeline)?;
    print!("{}", render_cv_table(&reports));
    for r in &reports {
        println!("{:<18} raw {:.4} mapped {:.4}", r.setting, r.rmse_raw, r.rmse_mapped);
    }
    eprintln!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
