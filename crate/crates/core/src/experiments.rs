//! Instance generation, single trials, and phase-transition grids.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::mpsc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DeconvError, Result};
use crate::lifting::{build_rows, LiftedMatrix, MeasurementRows, MeasurementSet, SparsityBasis};
use crate::parallel::Executor;
use crate::seed::{derive_seed, Role};
use crate::solver::{extract_rank1, rank1_distance, solve_blind_deconv, SolverConfig, DEFAULT_SUCCESS_THRESHOLD};
use crate::spectral::{circ_conv, dft, gaussian_vector, gen_generic_basis, gen_identity_subset_basis, gen_sparse_coeff, SparseCoeff};

/// How the coding matrices `C_n` are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// i.i.d. Gaussian coding, as in channel estimation with random codes.
    Gaussian,
    /// Random columns of the identity, so each input is `K`-sparse.
    IdentitySubset,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Gaussian => "gaussian",
            Scenario::IdentitySubset => "identity_subset",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Problem dimensions and the coding scenario.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// Sparsity `S` of `h`; `None` draws a dense impulse response.
    #[serde(rename = "S", default)]
    pub sparsity: Option<usize>,
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
}

fn default_scenario() -> Scenario {
    Scenario::Gaussian
}

impl InstanceSpec {
    pub fn dense(l: usize, k: usize, n: usize, scenario: Scenario) -> Self {
        Self { l, k, n, sparsity: None, scenario }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(DeconvError::Config("L: must be at least 1".into()));
        }
        if self.k == 0 || self.k > self.l {
            return Err(DeconvError::Config(format!("K: need 1 <= K <= L (K={}, L={})", self.k, self.l)));
        }
        if self.n == 0 {
            return Err(DeconvError::Config("N: must be at least 1".into()));
        }
        if let Some(s) = self.sparsity {
            if s == 0 || s > self.l {
                return Err(DeconvError::Config(format!("S: need 1 <= S <= L (S={s}, L={})", self.l)));
            }
        }
        Ok(())
    }

    /// Stream key shared by all scenarios with the same dimensions, so
    /// paired scenarios see the same `h`, `m`, and starting point.
    fn stream(&self, trial: u64) -> u64 {
        let mut key = 0x5EED_u64;
        for v in [self.l as u64, self.k as u64, self.n as u64, self.sparsity.map_or(0, |s| s as u64 + 1), trial] {
            key = derive_seed(key, v, Role::Custom(0));
        }
        key
    }
}

/// A complete problem statement with its ground truth.
#[derive(Debug, Clone)]
pub struct DeconvInstance {
    pub spec: InstanceSpec,
    pub rows: MeasurementRows,
    pub coding: Vec<DMatrix<f64>>,
    /// Unit-norm sparse coefficients of the impulse response.
    pub h: SparseCoeff,
    /// Unit-norm stacked message `m = [m_1; …; m_N]`.
    pub m: Vec<f64>,
    /// `w = B h`.
    pub w: Vec<f64>,
    /// `x_n = C_n m_n`.
    pub inputs: Vec<Vec<f64>>,
    pub yhat: MeasurementSet,
    /// `‖h‖·‖m‖` of the draw before normalization.
    pub raw_scale: f64,
}

impl DeconvInstance {
    pub fn m_block(&self, n: usize) -> &[f64] {
        &self.m[n * self.spec.k..(n + 1) * self.spec.k]
    }

    pub fn lifted_truth(&self) -> LiftedMatrix {
        let h = &self.h.values;
        LiftedMatrix::from_fn(self.spec.l, self.m.len(), |i, j| h[i] * self.m[j])
    }

    /// Largest relative deviation between the lifted observations and the
    /// DFT of the time-domain convolutions `w ⊛ x_n`.
    pub fn forward_check(&self) -> Result<f64> {
        let scale = self.yhat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for (n, x) in self.inputs.iter().enumerate() {
            let spectrum = dft(&circ_conv(&self.w, x)?)?;
            for (l, z) in spectrum.iter().enumerate() {
                worst = worst.max((self.yhat[(l, n)] - z).norm() / scale);
            }
        }
        Ok(worst)
    }
}

/// Draws the instance for `(master_seed, trial)`. `h` and `m` are normalized
/// to unit norm, so `‖h mᵀ‖_F = 1`.
pub fn generate_instance(spec: &InstanceSpec, master_seed: u64, trial: u64) -> Result<DeconvInstance> {
    spec.validate()?;
    let (l, k, nn) = (spec.l, spec.k, spec.n);
    let stream = spec.stream(trial);
    let mut h = gen_sparse_coeff(
        l,
        spec.sparsity.unwrap_or(l),
        derive_seed(master_seed, stream, Role::Impulse),
        spec.sparsity.is_none(),
    )?;
    let mut m: Vec<f64> = (0..nn)
        .flat_map(|n| gaussian_vector(k, derive_seed(master_seed, stream, Role::Message(n as u32))))
        .collect();
    let nh = h.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    h.values.iter_mut().for_each(|v| *v /= nh);
    m.iter_mut().for_each(|v| *v /= nm);

    let coding_stream = derive_seed(stream, spec.scenario as u64, Role::Custom(1));
    let bases = (0..nn)
        .map(|n| {
            let seed = derive_seed(master_seed, coding_stream, Role::Coding(n as u32));
            match spec.scenario {
                Scenario::Gaussian => gen_generic_basis(l, k, seed),
                Scenario::IdentitySubset => gen_identity_subset_basis(l, k, seed),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = build_rows(SparsityBasis::Identity, &bases)?;
    let yhat = rows.apply_a_factored(
        &DMatrix::from_column_slice(l, 1, &h.values),
        &DMatrix::from_column_slice(k * nn, 1, &m),
    )?;
    let w = h.values.clone();
    let inputs = bases
        .iter()
        .enumerate()
        .map(|(n, b)| (&b.columns * DVector::from_column_slice(&m[n * k..(n + 1) * k])).as_slice().to_vec())
        .collect();
    Ok(DeconvInstance {
        spec: spec.clone(),
        rows,
        coding: bases.into_iter().map(|b| b.columns).collect(),
        h,
        m,
        w,
        inputs,
        yhat,
        raw_scale: nh * nm,
    })
}

/// Solver settings used for phase grids: the defaults plus a small progress
/// tolerance so that rounds stop once the objective stalls.
pub fn grid_solver_config() -> SolverConfig {
    SolverConfig {
        progress_tol: 1e-10,
        ..SolverConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub instance: InstanceSpec,
    #[serde(default = "grid_solver_config")]
    pub solver: SolverConfig,
    /// Master seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trial: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_SUCCESS_THRESHOLD
}

/// One row of the trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cell_id: usize,
    pub trial: u64,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "S")]
    pub sparsity: Option<usize>,
    pub scenario: Scenario,
    pub seed: u64,
    pub success: bool,
    /// `‖X̂ − X₀‖_F` with `‖X₀‖_F = 1`.
    pub error: f64,
    pub sigma_ratio_h: f64,
    pub sigma_ratio_m: f64,
    pub rank_deficient: bool,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub forward_check: f64,
    pub seconds: f64,
    /// Set when the trial could not run; such trials count as failures.
    pub failure: Option<String>,
}

/// Generates an instance, solves it, and classifies the result. Errors are
/// recorded in the returned record rather than propagated.
pub fn run_trial(cfg: &TrialConfig) -> TrialRecord {
    run_trial_in_cell(cfg, 0)
}

fn run_trial_in_cell(cfg: &TrialConfig, cell_id: usize) -> TrialRecord {
    let spec = &cfg.instance;
    let start = Instant::now();
    let mut rec = TrialRecord {
        cell_id,
        trial: cfg.trial,
        l: spec.l,
        k: spec.k,
        n: spec.n,
        sparsity: spec.sparsity,
        scenario: spec.scenario,
        seed: cfg.seed,
        success: false,
        error: f64::NAN,
        sigma_ratio_h: f64::NAN,
        sigma_ratio_m: f64::NAN,
        rank_deficient: false,
        residual: f64::NAN,
        iterations: 0,
        converged: false,
        forward_check: f64::NAN,
        seconds: 0.0,
        failure: None,
    };
    let outcome = (|| -> Result<()> {
        let inst = generate_instance(spec, cfg.seed, cfg.trial)?;
        rec.forward_check = inst.forward_check()?;
        let solver = SolverConfig {
            seed: derive_seed(cfg.seed, spec.stream(cfg.trial), Role::Init),
            ..cfg.solver.clone()
        };
        let report = solve_blind_deconv(&inst.rows, &inst.yhat, &solver)?;
        let top = extract_rank1(&report.factors.h, &report.factors.m);
        rec.error = rank1_distance(top.sigma, top.u.as_slice(), top.v.as_slice(), &inst.h.values, &inst.m);
        rec.success = rec.error <= cfg.threshold;
        rec.sigma_ratio_h = report.sigma_ratio_h;
        rec.sigma_ratio_m = report.sigma_ratio_m;
        rec.rank_deficient = report.rank_deficient;
        rec.residual = report.residual;
        rec.iterations = report.iterations;
        rec.converged = report.converged;
        Ok(())
    })();
    if let Err(e) = outcome {
        rec.success = false;
        rec.failure = Some(e.to_string());
    }
    rec.seconds = start.elapsed().as_secs_f64();
    rec
}

/// Values along one grid axis: an explicit list, or logarithmically spaced
/// integers between `min` and `max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Values(Vec<usize>),
    Log {
        min: usize,
        max: usize,
        #[serde(default = "default_steps")]
        steps: usize,
    },
}

fn default_steps() -> usize {
    10
}

impl Axis {
    pub fn values(&self) -> Vec<usize> {
        let mut v = match self {
            Axis::Values(v) => v.clone(),
            Axis::Log { min, max, steps } => {
                let (lo, hi) = (*min.min(max) as f64, *min.max(max) as f64);
                if *steps <= 1 || lo == hi {
                    vec![lo as usize]
                } else {
                    (0..*steps)
                        .map(|i| (lo * (hi / lo).powf(i as f64 / (*steps - 1) as f64)).round() as usize)
                        .collect()
                }
            }
        };
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// A phase-transition grid: every combination of scenario, `L`, `K`, `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "L")]
    pub l: Axis,
    #[serde(rename = "K")]
    pub k: Axis,
    #[serde(rename = "N")]
    pub n: Axis,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<Scenario>,
    #[serde(rename = "S", default)]
    pub sparsity: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "grid_solver_config")]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_scenarios() -> Vec<Scenario> {
    vec![Scenario::Gaussian]
}

fn default_trials() -> usize {
    25
}

impl GridSpec {
    pub fn new(l: Vec<usize>, k: Vec<usize>, n: Vec<usize>) -> Self {
        Self {
            l: Axis::Values(l),
            k: Axis::Values(k),
            n: Axis::Values(n),
            scenarios: default_scenarios(),
            sparsity: None,
            trials: default_trials(),
            threshold: default_threshold(),
            solver: grid_solver_config(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [("L", &self.l), ("K", &self.k), ("N", &self.n)] {
            let v = axis.values();
            if v.is_empty() || v[0] == 0 {
                return Err(DeconvError::Config(format!("{name}: axis needs positive values")));
            }
        }
        if self.scenarios.is_empty() {
            return Err(DeconvError::Config("scenarios: at least one scenario is required".into()));
        }
        if self.trials == 0 {
            return Err(DeconvError::Config("trials: must be at least 1".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(DeconvError::Config("threshold: must be positive".into()));
        }
        self.solver.validate()
    }

    /// Cells in a fixed order; cells with `K > L` (or `S > L`) are left out.
    pub fn cells(&self) -> Vec<InstanceSpec> {
        let mut cells = Vec::new();
        for &scenario in &self.scenarios {
            for &k in &self.k.values() {
                for &l in &self.l.values() {
                    for &n in &self.n.values() {
                        let spec = InstanceSpec { l, k, n, sparsity: self.sparsity, scenario };
                        if spec.validate().is_ok() {
                            cells.push(spec);
                        } else {
                            log::warn!("skipping invalid cell L={l} K={k} N={n}");
                        }
                    }
                }
            }
        }
        cells
    }
}

/// Aggregated results of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell_id: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub scenario: Scenario,
    pub trials: usize,
    pub successes: usize,
    pub mean_error: f64,
    pub mean_seconds: f64,
}

impl CellResult {
    pub fn success_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    pub cells: Vec<CellResult>,
    pub records: Vec<TrialRecord>,
    /// Trials run by this call (excludes those restored from a checkpoint).
    pub executed_trials: usize,
    pub wall_seconds: f64,
}

fn load_checkpoint(path: &Path) -> Result<Vec<TrialRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TrialRecord>(&line) {
            Ok(r) => out.push(r),
            // A torn final line from an interrupted write is dropped.
            Err(e) => log::warn!("ignoring unreadable checkpoint line {}: {e}", i + 1),
        }
    }
    Ok(out)
}

/// Runs every `(cell, trial)` of the grid. Trial records are appended to
/// `checkpoint` as they finish; with `resume`, trials already present there
/// are not rerun.
pub fn phase_grid(spec: &GridSpec, exec: &Executor, checkpoint: Option<&Path>, resume: bool) -> Result<PhaseGrid> {
    spec.validate()?;
    let start = Instant::now();
    let cells = spec.cells();
    if cells.is_empty() {
        return Err(DeconvError::EmptyGrid);
    }
    let mut done: Vec<TrialRecord> = match (checkpoint, resume) {
        (Some(p), true) => load_checkpoint(p)?
            .into_iter()
            .filter(|r| {
                cells.get(r.cell_id).is_some_and(|c| {
                    c.l == r.l && c.k == r.k && c.n == r.n && c.scenario == r.scenario && c.sparsity == r.sparsity
                }) && r.seed == spec.seed
                    && (r.trial as usize) < spec.trials
            })
            .collect(),
        _ => Vec::new(),
    };
    let mut seen = HashSet::new();
    done.retain(|r| seen.insert((r.cell_id, r.trial)));
    let tasks: Vec<(usize, TrialConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(id, c)| (0..spec.trials as u64).map(move |t| (id, t, c)))
        .filter(|(id, t, _)| !seen.contains(&(*id, *t)))
        .map(|(id, t, c)| {
            (
                id,
                TrialConfig {
                    instance: c.clone(),
                    solver: spec.solver.clone(),
                    seed: spec.seed,
                    trial: t,
                    threshold: spec.threshold,
                },
            )
        })
        .collect();
    log::info!(
        "{} cells, {} trials to run ({} restored)",
        cells.len(),
        tasks.len(),
        done.len()
    );

    let mut writer = match checkpoint {
        Some(p) => {
            let file = if resume {
                OpenOptions::new().create(true).append(true).open(p)?
            } else {
                File::create(p)?
            };
            Some(BufWriter::new(file))
        }
        None => None,
    };
    let total = tasks.len();
    let (tx, rx) = mpsc::channel::<TrialRecord>();
    let fresh = std::thread::scope(|scope| {
        let collector = scope.spawn(move || {
            let mut finished = 0usize;
            for rec in rx {
                finished += 1;
                if let Some(w) = writer.as_mut() {
                    let line = serde_json::to_string(&rec).expect("trial record serializes");
                    if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                        log::warn!("checkpoint write failed: {e}");
                    }
                }
                log::debug!("trial {finished}/{total} done (cell {}, trial {})", rec.cell_id, rec.trial);
            }
        });
        let records = exec.map(&tasks, |(id, cfg)| {
            let rec = run_trial_in_cell(cfg, *id);
            let _ = tx.send(rec.clone());
            rec
        });
        drop(tx);
        collector.join().expect("collector thread");
        records
    });
    let executed_trials = fresh.len();
    let mut records = done;
    records.extend(fresh);
    records.sort_by_key(|r| (r.cell_id, r.trial));
    let cells = aggregate(&cells, &records);
    Ok(PhaseGrid {
        cells,
        records,
        executed_trials,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn aggregate(cells: &[InstanceSpec], records: &[TrialRecord]) -> Vec<CellResult> {
    let mut by_cell: BTreeMap<usize, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        by_cell.entry(r.cell_id).or_default().push(r);
    }
    cells
        .iter()
        .enumerate()
        .map(|(id, c)| {
            let rs = by_cell.get(&id).map(Vec::as_slice).unwrap_or(&[]);
            let trials = rs.len();
            let mean = |f: &dyn Fn(&TrialRecord) -> f64| {
                if trials == 0 {
                    f64::NAN
                } else {
                    rs.iter().map(|r| f(r)).sum::<f64>() / trials as f64
                }
            };
            CellResult {
                cell_id: id,
                l: c.l,
                k: c.k,
                n: c.n,
                scenario: c.scenario,
                trials,
                successes: rs.iter().filter(|r| r.success).count(),
                // Failed runs have no error estimate; count them as the
                // error of the zero estimate.
                mean_error: mean(&|r| if r.error.is_finite() { r.error } else { 1.0 }),
                mean_seconds: mean(&|r| r.seconds),
            }
        })
        .collect()
}

/// Writes the per-cell CSV table.
pub fn write_grid_csv(cells: &[CellResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell_id", "L", "K", "N", "scenario", "trials", "successes", "mean_error", "mean_seconds"])?;
    for c in cells {
        w.write_record([
            c.cell_id.to_string(),
            c.l.to_string(),
            c.k.to_string(),
            c.n.to_string(),
            c.scenario.to_string(),
            c.trials.to_string(),
            c.successes.to_string(),
            c.mean_error.to_string(),
            c.mean_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<CellResult>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Smallest `L` reaching a success rate of at least one half, for one
/// `(scenario, K, N)` column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub scenario: Scenario,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// `None` when no cell in the column reaches one half.
    #[serde(rename = "L")]
    pub l: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRate {
    pub cell_id: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub scenario: Scenario,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub cells: Vec<CellRate>,
    pub boundaries: Vec<Boundary>,
    /// Median of `L/K` over the columns with a defined boundary.
    pub boundary_ratio: Option<f64>,
    /// Sum of per-trial solve times.
    pub total_compute_seconds: f64,
}

pub fn summarize(cells: &[CellResult]) -> Result<GridSummary> {
    if cells.is_empty() {
        return Err(DeconvError::EmptyGrid);
    }
    let rates = cells
        .iter()
        .map(|c| CellRate {
            cell_id: c.cell_id,
            l: c.l,
            k: c.k,
            n: c.n,
            scenario: c.scenario,
            success_rate: c.success_rate(),
        })
        .collect();
    let mut columns: BTreeMap<(Scenario, usize, usize), Vec<&CellResult>> = BTreeMap::new();
    for c in cells {
        columns.entry((c.scenario, c.k, c.n)).or_default().push(c);
    }
    let boundaries: Vec<Boundary> = columns
        .into_iter()
        .map(|((scenario, k, n), col)| Boundary {
            scenario,
            k,
            n,
            l: col.iter().filter(|c| c.trials > 0 && c.success_rate() >= 0.5).map(|c| c.l).min(),
        })
        .collect();
    let mut ratios: Vec<f64> = boundaries.iter().filter_map(|b| b.l.map(|l| l as f64 / b.k as f64)).collect();
    ratios.sort_by(f64::total_cmp);
    let boundary_ratio = match ratios.len() {
        0 => None,
        n if n % 2 == 1 => Some(ratios[n / 2]),
        n => Some(0.5 * (ratios[n / 2 - 1] + ratios[n / 2])),
    };
    let total_compute_seconds = cells
        .iter()
        .filter(|c| c.trials > 0 && c.mean_seconds.is_finite())
        .map(|c| c.mean_seconds * c.trials as f64)
        .sum();
    Ok(GridSummary {
        cells: rates,
        boundaries,
        boundary_ratio,
        total_compute_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_is_normalized_and_consistent() {
        let spec = InstanceSpec::dense(16, 3, 4, Scenario::Gaussian);
        let inst = generate_instance(&spec, 1, 2).unwrap();
        assert!((inst.lifted_truth().norm() - 1.0).abs() < 1e-12);
        assert!(inst.forward_check().unwrap() < 1e-12);
        let sel = generate_instance(&InstanceSpec::dense(16, 3, 4, Scenario::IdentitySubset), 1, 2).unwrap();
        assert!(sel.forward_check().unwrap() < 1e-12);
        // Paired scenarios share the truth.
        assert_eq!(inst.h, sel.h);
        assert_eq!(inst.m, sel.m);
        for x in &sel.inputs {
            assert!(x.iter().filter(|v| **v != 0.0).count() <= 3);
        }
    }

    #[test]
    fn sparse_instance_has_requested_support() {
        let spec = InstanceSpec { sparsity: Some(3), ..InstanceSpec::dense(20, 2, 2, Scenario::Gaussian) };
        let inst = generate_instance(&spec, 5, 0).unwrap();
        assert_eq!(inst.h.sparsity(), 3);
        assert_eq!(inst.h.values.iter().filter(|v| **v != 0.0).count(), 3);
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let err = InstanceSpec::dense(4, 5, 1, Scenario::Gaussian).validate().unwrap_err();
        assert!(err.to_string().contains("K"));
    }

    #[test]
    fn trial_is_deterministic_and_succeeds_when_easy() {
        let cfg = TrialConfig {
            instance: InstanceSpec::dense(64, 2, 8, Scenario::Gaussian),
            solver: grid_solver_config(),
            seed: 3,
            trial: 1,
            threshold: DEFAULT_SUCCESS_THRESHOLD,
        };
        let a = run_trial(&cfg);
        let b = run_trial(&cfg);
        assert!(a.success, "{a:?}");
        assert_eq!((a.error, a.iterations, a.residual), (b.error, b.iterations, b.residual));
    }

    #[test]
    fn log_axis_is_sorted_and_deduplicated() {
        let a = Axis::Log { min: 10, max: 190, steps: 10 };
        let v = a.values();
        assert_eq!(v.first(), Some(&10));
        assert_eq!(v.last(), Some(&190));
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(Axis::Log { min: 1, max: 3, steps: 12 }.values(), vec![1, 2, 3]);
    }

    fn cell(id: usize, l: usize, k: usize, successes: usize) -> CellResult {
        CellResult {
            cell_id: id,
            l,
            k,
            n: 10,
            scenario: Scenario::Gaussian,
            trials: 25,
            successes,
            mean_error: 0.0,
            mean_seconds: 1.0,
        }
    }

    #[test]
    fn summary_boundaries() {
        let all = vec![cell(0, 100, 5, 25), cell(1, 200, 5, 25), cell(2, 100, 10, 25), cell(3, 200, 10, 25)];
        let s = summarize(&all).unwrap();
        assert!(s.boundaries.iter().all(|b| b.l == Some(100)));
        assert_eq!(s.total_compute_seconds, 100.0);
        let none = vec![cell(0, 100, 5, 0), cell(1, 200, 5, 12)];
        let s = summarize(&none).unwrap();
        assert_eq!(s.boundaries[0].l, None);
        assert_eq!(s.boundary_ratio, None);
        assert!(matches!(summarize(&[]), Err(DeconvError::EmptyGrid)));
    }
}
