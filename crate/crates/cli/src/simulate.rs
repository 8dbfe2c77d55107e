use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moe::experts::{simulate, SimOptions};

use crate::config::{parse_preset, RunConfig};
use crate::data::{dataset_to_table, read_table};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_csv, write_json};
use crate::paramsfile::{from_params, read_params, to_params};

/// Writes `data.csv`, `truth.csv` (1-based labels) and `params.json` to `--out`.
pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<String> {
    let seed = cfg.require_seed("simulate")?;
    let (data, labels, model, names) = match (&cfg.preset, &cfg.params) {
        (Some(name), None) => {
            let preset = parse_preset(name)?;
            let n = cfg.n.unwrap_or(preset.default_n());
            let (data, z) = preset.simulate(n, seed)?;
            let names: Vec<String> = preset.covariate_name().into_iter().map(String::from).collect();
            (data, z, preset.truth()?, names)
        }
        (None, Some(path)) => {
            let file = read_params(path)?;
            let model = from_params(&file)?;
            let x = match &cfg.data {
                Some(p) => {
                    let table = read_table(p)?;
                    let cols = file.covariates.iter().map(|c| table.column(c)).collect::<CliResult<Vec<_>>>()?;
                    let values = cols.iter().map(|&c| table.numeric_column(c)).collect::<CliResult<Vec<_>>>()?;
                    DMatrix::from_fn(table.rows.len(), cols.len(), |i, k| values[k][i])
                }
                None if file.covariates.is_empty() => {
                    let n = cfg.n.ok_or_else(|| CliError::input("--n is required when simulating from --params"))?;
                    DMatrix::zeros(n, 0)
                }
                None => {
                    return Err(CliError::input(format!(
                        "the parameters use covariates ({}); supply them with --data",
                        file.covariates.join(", ")
                    )))
                }
            };
            let opts = SimOptions { ballot_len: cfg.ballot_len, transitions: cfg.transitions };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (data, z) = simulate(&model, &x, opts, &mut rng)?;
            (data, z, model, file.covariates.clone())
        }
        _ => return Err(CliError::input("simulate needs exactly one of --preset and --params")),
    };
    ensure_dir(&cfg.out)?;
    let (header, rows) = dataset_to_table(&data, model.family(), &names);
    write_csv(&cfg.out.join("data.csv"), &header, &rows)?;
    let truth_rows: Vec<Vec<String>> = labels
        .labels()
        .iter()
        .enumerate()
        .map(|(i, z)| vec![(i + 1).to_string(), (z + 1).to_string()])
        .collect();
    write_csv(&cfg.out.join("truth.csv"), &["row".into(), "z".into()], &truth_rows)?;
    write_json(&cfg.out.join("params.json"), &to_params(&model, &names))?;
    Ok(format!("simulated {} observations into {}", data.n(), cfg.out.display()))
}
