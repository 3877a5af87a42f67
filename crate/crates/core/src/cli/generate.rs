use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use super::{create_file, ensure_dir, write_json};
use crate::error::Result;
use crate::matrix::format_f64;
use crate::synthgen::{generate, Law, NoiseKind, NoiseRegime, SynthConfig};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub d: usize,
    #[arg(long, default_value_t = 0.3)]
    pub omega: f64,
    #[arg(long, value_enum, default_value_t = NoiseRegime::Heteroskedastic)]
    pub regime: NoiseRegime,
    /// Rescale `v` to this norm instead of using its drawn norm.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Law of the consensus entries, e.g. `normal(0,1)`.
    #[arg(long)]
    pub v_law: Option<String>,
    #[arg(long)]
    pub sigma_law: Option<String>,
    #[arg(long)]
    pub f_law: Option<String>,
    #[arg(long)]
    pub c_law: Option<String>,
    #[arg(long, value_enum, default_value_t = NoiseKind::Gaussian)]
    pub noise: NoiseKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "uagg_data")]
    pub out_dir: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Default for GenerateArgs {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 100,
            omega: 0.3,
            regime: NoiseRegime::Heteroskedastic,
            lambda: None,
            v_law: None,
            sigma_law: None,
            f_law: None,
            c_law: None,
            noise: NoiseKind::Gaussian,
            seed: 0,
            out_dir: PathBuf::from("uagg_data"),
            config: None,
        }
    }
}

impl GenerateArgs {
    fn synth_config(&self) -> Result<SynthConfig> {
        let mut cfg = SynthConfig::new(self.n, self.d, self.omega, self.regime, self.seed);
        if let Some(s) = &self.v_law {
            cfg.v_law = s.parse::<Law>()?;
        }
        cfg.sigma_law = self.sigma_law.as_deref().map(str::parse).transpose()?;
        cfg.f_law = self.f_law.as_deref().map(str::parse).transpose()?;
        if let Some(s) = &self.c_law {
            cfg.c_law = s.parse()?;
        }
        cfg.lambda = self.lambda;
        cfg.noise = self.noise;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Writes `matrix.csv` (models as rows), `truth.csv` (`sample_id,value`) and `truth.json`.
pub fn run(args: GenerateArgs) -> Result<()> {
    let cfg = args.synth_config()?;
    let (y, truth) = generate(&cfg)?;
    ensure_dir(&args.out_dir)?;
    y.write_csv(create_file(&args.out_dir, "matrix.csv")?)?;
    let mut wtr = csv::Writer::from_writer(create_file(&args.out_dir, "truth.csv")?);
    wtr.write_record(["sample_id", "value"])?;
    for (id, v) in y.sample_ids().iter().zip(&truth.v) {
        wtr.write_record([id.as_str(), &format_f64(*v)])?;
    }
    wtr.flush()?;

    #[derive(Serialize)]
    struct Out<'a> {
        config: &'a SynthConfig,
        model_ids: &'a [String],
        u: Vec<f64>,
        truth: &'a crate::synthgen::GroundTruth,
    }
    let out = Out { config: &cfg, model_ids: y.model_ids(), u: truth.u().iter().copied().collect(), truth: &truth };
    write_json(&args.out_dir, "truth.json", &out)?;
    println!("wrote {} x {} matrix with {} informative models", cfg.d, cfg.n, truth.s);
    Ok(())
}
