//! Randomized-excitation training data: generation, persistence, and
//! segment sampling.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_control, Error, Result};
use crate::plant::{self, observe, plant_step, PlantParams, QoiSample};
use crate::scalar::{fmt17, Scalar};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Piecewise-constant excitation, one value per sample step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSignal<T> {
    pub values: Vec<T>,
    pub seed: u64,
}

/// i.i.d. `U[-1, 1]` controls, reproducible from `seed`.
pub fn random_excitation<T: Scalar>(n_step: usize, seed: u64) -> ExcitationSignal<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n_step)
        .map(|_| T::lit(rng.random_range(-1.0..=1.0)))
        .collect();
    ExcitationSignal { values, seed }
}

/// One recorded excitation/response history. `v[k]` is observed at
/// `t = k·dt` and `u[k]` is held over `[k·dt, (k+1)·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    /// Regime the trajectory was generated at; provenance only.
    pub r: T,
    pub v: Vec<QoiSample<T>>,
    pub u: Vec<T>,
    pub dt: T,
}

impl<T: Scalar> Trajectory<T> {
    pub fn n_step(&self) -> usize {
        self.u.len()
    }

    fn check(&self) -> Result<()> {
        if self.v.len() != self.u.len() + 1 {
            return Err(Error::Dimension {
                what: "trajectory observations vs controls + 1",
                expected: self.u.len() + 1,
                got: self.v.len(),
            });
        }
        for &u in &self.u {
            check_control(u.as_f64())?;
        }
        Ok(())
    }
}

/// Spins the plant up, then drives it with `signal` for `t_sim`.
pub fn generate_trajectory<T: Scalar>(
    params: &PlantParams<T>,
    signal: &ExcitationSignal<T>,
    t_sim: T,
    dt: T,
    t_spin: T,
) -> Result<Trajectory<T>> {
    let n_step = steps_in(t_sim, dt)?;
    if signal.values.len() != n_step {
        return Err(Error::Dimension {
            what: "excitation length vs T_sim/dt",
            expected: n_step,
            got: signal.values.len(),
        });
    }
    let spun = plant::spinup(params, t_spin, 1, dt)?;
    let mut state = spun.state;
    let mut v = Vec::with_capacity(n_step + 1);
    v.push(observe(params, &state));
    for &u in &signal.values {
        state = plant_step(params, &state, u, dt)?;
        v.push(observe(params, &state));
    }
    Ok(Trajectory {
        r: params.regime(),
        v,
        u: signal.values.clone(),
        dt,
    })
}

pub(crate) fn steps_in<T: Scalar>(duration: T, dt: T) -> Result<usize> {
    let ratio = (duration / dt).as_f64();
    let n = ratio.round();
    if !(n >= 1.0) || (ratio - n).abs() > 1e-9 * n {
        return Err(Error::Config(format!(
            "duration {duration} is not a positive multiple of the sample step {dt}"
        )));
    }
    Ok(n as usize)
}

/// How each trajectory's regime is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RegimeMode {
    /// Every trajectory at the same regime.
    Fixed { r: f64 },
    /// Each trajectory draws `r ~ U(lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

impl RegimeMode {
    /// Single fixed regime at r = 300.
    pub const FIXED_300: RegimeMode = RegimeMode::Fixed { r: 300.0 };
    /// Hidden regime drawn from U(100, 500).
    pub const UNIFORM_100_500: RegimeMode = RegimeMode::Uniform { lo: 100.0, hi: 500.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_sim: usize,
    pub t_sim: f64,
    pub dt: f64,
    pub regime: RegimeMode,
    pub master_seed: u64,
    pub t_spin: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_sim: 200,
            t_sim: 100.0,
            dt: plant::DEFAULT_DT,
            regime: RegimeMode::FIXED_300,
            master_seed: 0,
            t_spin: plant::DEFAULT_T_SPIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub dt: f64,
    pub t_sim: f64,
    pub n_step: usize,
    pub n_sim: usize,
    pub regime: RegimeMode,
    pub master_seed: u64,
    pub t_spin: f64,
    /// Per-trajectory regimes, recorded for audit.
    pub regimes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Regime and excitation seed for trajectory `index`. Each trajectory owns
/// its own ChaCha stream of the master seed, so generation order is irrelevant.
pub fn trajectory_draw(master_seed: u64, index: usize, mode: RegimeMode) -> (f64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    let r = match mode {
        RegimeMode::Fixed { r } => r,
        RegimeMode::Uniform { lo, hi } => rng.random_range(lo..hi),
    };
    (r, rng.next_u64())
}

/// Generates `n_sim` trajectories in parallel; output order and content are
/// fixed by the master seed.
pub fn generate_dataset<T: Scalar>(config: &DatasetConfig) -> Result<Dataset<T>> {
    if config.n_sim == 0 {
        return Err(Error::Config("n_sim must be ≥ 1".into()));
    }
    let n_step = steps_in(config.t_sim, config.dt)?;
    let trajectories = (0..config.n_sim)
        .into_par_iter()
        .map(|i| {
            let (r, seed) = trajectory_draw(config.master_seed, i, config.regime);
            let params = plant::make_plant(T::lit(r))?;
            let signal = random_excitation(n_step, seed);
            generate_trajectory(
                &params,
                &signal,
                T::lit(config.t_sim),
                T::lit(config.dt),
                T::lit(config.t_spin),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let regimes = trajectories.iter().map(|t| t.r.as_f64()).collect();
    Ok(Dataset {
        meta: DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            dt: config.dt,
            t_sim: config.t_sim,
            n_step,
            n_sim: config.n_sim,
            regime: config.regime,
            master_seed: config.master_seed,
            t_spin: config.t_spin,
            regimes,
        },
        trajectories,
    })
}

/// A training window: `n_M+1` observations, `n_M+n_R` controls, `n_R` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSegment<T> {
    pub v_window: Vec<QoiSample<T>>,
    pub controls: Vec<T>,
    pub targets: Vec<QoiSample<T>>,
}

impl<T> TrainingSegment<T> {
    pub fn n_memory(&self) -> usize {
        self.v_window.len() - 1
    }

    pub fn n_recurrent(&self) -> usize {
        self.targets.len()
    }
}

/// Slice of `trajectory` starting at `n0`.
pub fn segment_at<T: Scalar>(
    trajectory: &Trajectory<T>,
    n0: usize,
    n_m: usize,
    n_r: usize,
) -> Result<TrainingSegment<T>> {
    let n_l = n_m + 1 + n_r;
    let n_step = trajectory.n_step();
    if n_r == 0 || n_step < n_l || n0 > n_step - n_l {
        return Err(Error::Segment {
            needed: n0 + n_l,
            available: n_step,
        });
    }
    Ok(TrainingSegment {
        v_window: trajectory.v[n0..=n0 + n_m].to_vec(),
        controls: trajectory.u[n0..n0 + n_m + n_r].to_vec(),
        targets: trajectory.v[n0 + n_m + 1..=n0 + n_m + n_r].to_vec(),
    })
}

/// Draws `n0 ~ U{0, …, N_step − n_L}` and returns the segment there.
pub fn sample_segment<T: Scalar, R: Rng + ?Sized>(
    trajectory: &Trajectory<T>,
    n_m: usize,
    n_r: usize,
    rng: &mut R,
) -> Result<TrainingSegment<T>> {
    let n0 = sample_start(trajectory.n_step(), n_m, n_r, rng)?;
    segment_at(trajectory, n0, n_m, n_r)
}

/// Uniform initial index for a segment of length `n_M+1+n_R`.
pub fn sample_start<R: Rng + ?Sized>(n_step: usize, n_m: usize, n_r: usize, rng: &mut R) -> Result<usize> {
    let n_l = n_m + 1 + n_r;
    if n_r == 0 || n_step < n_l {
        return Err(Error::Segment {
            needed: n_l,
            available: n_step,
        });
    }
    Ok(rng.random_range(0..=n_step - n_l))
}

fn traj_file(index: usize) -> String {
    format!("traj_{index:05}.csv")
}

/// Writes `manifest.json` plus one CSV per trajectory into `dir`.
pub fn write_dataset<T: Scalar>(dataset: &Dataset<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&dataset.meta)
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    fs::write(&manifest, json + "\n").map_err(|e| Error::io(&manifest, e))?;
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        traj.check()?;
        let path = dir.join(traj_file(i));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&path, e);
        writeln!(w, "step,t,c_d,c_l,u").map_err(io)?;
        for (k, v) in traj.v.iter().enumerate() {
            let t = traj.dt.as_f64() * k as f64;
            let u = traj.u.get(k).map(|u| fmt17(u.as_f64())).unwrap_or_default();
            writeln!(
                w,
                "{k},{},{},{},{u}",
                fmt17(t),
                fmt17(v.c_d.as_f64()),
                fmt17(v.c_l.as_f64())
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], validating every record.
pub fn read_dataset<T: Scalar>(dir: &Path) -> Result<Dataset<T>> {
    let manifest = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&text).map_err(|e| Error::parse(&manifest, Some(e.line()), e.to_string()))?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {} (expected {DATASET_FORMAT_VERSION})",
            meta.format_version
        )));
    }
    if meta.regimes.len() != meta.n_sim {
        return Err(Error::parse(&manifest, None, "regimes list length differs from n_sim"));
    }
    let trajectories = (0..meta.n_sim)
        .map(|i| read_trajectory(&dir.join(traj_file(i)), i, &meta))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { meta, trajectories })
}

fn read_trajectory<T: Scalar>(path: &Path, index: usize, meta: &DatasetMeta) -> Result<Trajectory<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, None, format!("trajectory {index}: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, Some(1), format!("trajectory {index}: {e}")))?;
    if headers.iter().collect::<Vec<_>>() != ["step", "t", "c_d", "c_l", "u"] {
        return Err(Error::parse(path, Some(1), format!("trajectory {index}: unexpected header")));
    }
    let fail = |line: usize, msg: String| Error::parse(path, Some(line), format!("trajectory {index}: {msg}"));
    let num = |s: &str, line: usize, field: &str| -> Result<T> {
        s.trim()
            .parse::<f64>()
            .map(T::lit)
            .map_err(|e| fail(line, format!("field {field}: {e}")))
    };
    let mut v = Vec::with_capacity(meta.n_step + 1);
    let mut u = Vec::with_capacity(meta.n_step);
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| fail(line, e.to_string()))?;
        if rec.len() != 5 {
            return Err(fail(line, format!("expected 5 fields, found {}", rec.len())));
        }
        let step: usize = rec[0].trim().parse().map_err(|e| fail(line, format!("step: {e}")))?;
        if step != k {
            return Err(fail(line, format!("step index {step}, expected {k}")));
        }
        v.push(QoiSample::new(num(&rec[2], line, "c_d")?, num(&rec[3], line, "c_l")?));
        let last = k == meta.n_step;
        match (rec[4].trim().is_empty(), last) {
            (true, true) => {}
            (false, false) => {
                let uk = num(&rec[4], line, "u")?;
                check_control(uk.as_f64()).map_err(|e| fail(line, e.to_string()))?;
                u.push(uk);
            }
            (true, false) => return Err(fail(line, "missing control".into())),
            (false, true) => return Err(fail(line, "control on final row".into())),
        }
        if k > meta.n_step {
            return Err(fail(line, "more rows than n_step + 1".into()));
        }
    }
    if v.len() != meta.n_step + 1 || u.len() != meta.n_step {
        return Err(fail(
            v.len() + 1,
            format!("truncated: {} of {} rows", v.len(), meta.n_step + 1),
        ));
    }
    Ok(Trajectory {
        r: T::lit(meta.regimes[index]),
        v,
        u,
        dt: T::lit(meta.dt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_config() -> DatasetConfig {
        DatasetConfig {
            n_sim: 3,
            t_sim: 5.0,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn excitation_is_reproducible_and_bounded() {
        let a = random_excitation::<f64>(1000, 42);
        let b = random_excitation::<f64>(1000, 42);
        assert_eq!(a, b);
        assert!(a.values.iter().all(|u| (-1.0..=1.0).contains(u)));
        assert_ne!(a, random_excitation::<f64>(1000, 43));
    }

    #[test]
    fn excitation_moments() {
        let s = random_excitation::<f64>(100_000, 7);
        let n = s.values.len() as f64;
        let mean = s.values.iter().sum::<f64>() / n;
        let var = s.values.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!(var > 0.32 && var < 0.35, "var {var}");
    }

    #[test]
    fn trajectory_bookkeeping() {
        let p = plant::make_plant(300.0).unwrap();
        let s = random_excitation(1000, 1);
        let t = generate_trajectory(&p, &s, 100.0, 0.1, 100.0).unwrap();
        assert_eq!(t.n_step(), 1000);
        assert_eq!(t.v.len(), 1001);
        let again = generate_trajectory(&p, &s, 100.0, 0.1, 100.0).unwrap();
        assert_eq!(t, again);
        let short = random_excitation(10, 1);
        assert!(generate_trajectory(&p, &short, 100.0, 0.1, 100.0).is_err());
    }

    #[test]
    fn fixed_mode_uses_one_regime() {
        let d: Dataset<f64> = generate_dataset(&small_config()).unwrap();
        assert!(d.trajectories.iter().all(|t| t.r == 300.0));
        assert_eq!(d.meta.n_step, 50);
    }

    #[test]
    fn segment_layout() {
        let p = plant::make_plant(300.0).unwrap();
        let t = generate_trajectory(&p, &random_excitation(100, 3), 10.0, 0.1, 100.0).unwrap();
        let seg = segment_at(&t, 5, 20, 3).unwrap();
        assert_eq!(seg.v_window, t.v[5..26]);
        assert_eq!(seg.controls, t.u[5..28]);
        assert_eq!(seg.targets, t.v[26..29]);
        // n_L = 24, so the last valid start is N_step − 24.
        assert!(segment_at(&t, 100 - 24, 20, 3).is_ok());
        assert!(segment_at(&t, 100 - 23, 20, 3).is_err());
        let one = segment_at(&t, 0, 4, 1).unwrap();
        assert_eq!(one.targets.len(), 1);
    }

    #[test]
    fn segment_error_on_short_trajectory() {
        let p = plant::make_plant(300.0).unwrap();
        let t = generate_trajectory(&p, &random_excitation(10, 3), 1.0, 0.1, 100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_segment(&t, 20, 3, &mut rng), Err(Error::Segment { .. })));
    }

    #[test]
    fn round_trip_and_rejections() {
        let d: Dataset<f64> = generate_dataset(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&d, dir.path()).unwrap();
        let back: Dataset<f64> = read_dataset(dir.path()).unwrap();
        assert_eq!(d, back);

        // Out-of-range control.
        let f = dir.path().join("traj_00001.csv");
        let text = fs::read_to_string(&f).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        let mut fields: Vec<String> = lines[3].split(',').map(str::to_owned).collect();
        fields[4] = "1.5".into();
        lines[3] = fields.join(",");
        fs::write(&f, lines.join("\n") + "\n").unwrap();
        let err = read_dataset::<f64>(dir.path()).unwrap_err();
        assert!(err.to_string().contains("trajectory 1"), "{err}");

        // Truncated final record.
        write_dataset(&d, dir.path()).unwrap();
        let f = dir.path().join("traj_00002.csv");
        let text = fs::read_to_string(&f).unwrap();
        let cut: Vec<&str> = text.lines().collect();
        fs::write(&f, cut[..cut.len() - 1].join("\n") + "\n").unwrap();
        let err = read_dataset::<f64>(dir.path()).unwrap_err();
        match &err {
            Error::Parse { msg, .. } => assert!(msg.contains("trajectory 2"), "{msg}"),
            other => panic!("unexpected {other}"),
        }
    }

    proptest! {
        #[test]
        fn sampled_segments_stay_in_bounds(n_m in 0usize..=40, n_r in 1usize..=10, seed in any::<u64>()) {
            let n_step = 60;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n0 = sample_start(n_step, n_m, n_r, &mut rng).unwrap();
            prop_assert!(n0 + n_m + n_r < n_step + 1);
            prop_assert!(n0 + n_m + n_r <= n_step);
        }
    }
}
