//! On-the-fly closed-loop driver: the true plant advances once per sample
//! step, and the controller sees only the observed drag/lift and the
//! controls it applied.

use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fml::FlowMapModel;
use crate::harness::metrics::{cost_j, CostParams};
use crate::mpc::{mpc_act, MpcConfig, MpcPlanContext, PlantOracle};
use crate::plant::{self, observe, plant_step, probe, spinup, PlantParams, PlantState, QoiSample};
use crate::rl::{policy_act, smooth_action, state_from_history, PolicyModel, RlState};
use crate::scalar::{fmt17, Scalar};

/// Default transient excluded from reduction metrics.
pub const DEFAULT_T_SETTLE: f64 = 50.0;
/// Default closed-loop duration.
pub const DEFAULT_DURATION: f64 = 200.0;

pub const LOG_HEADER: &str = "t,c_d,c_l,u,cd_win,cl_win,J";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClosedLoopConfig {
    pub dt: f64,
    pub t_spin: f64,
    /// Spinup samples kept to pre-fill the controller's buffers.
    pub h0: usize,
    pub duration: f64,
    pub cost: CostParams,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            dt: plant::DEFAULT_DT,
            t_spin: plant::DEFAULT_T_SPIN,
            h0: plant::DEFAULT_H0,
            duration: DEFAULT_DURATION,
            cost: CostParams::default(),
        }
    }
}

/// Control law used in a closed-loop run.
#[derive(Debug, Clone)]
pub enum Controller<T> {
    /// `u ≡ 0`.
    None,
    /// Policy action passed through the exponential smoother.
    Drl {
        policy: PolicyModel<T>,
        alpha: T,
        /// Sample the Gaussian instead of using its mean.
        stochastic: bool,
        seed: u64,
    },
    /// Receding-horizon planning through the flow map.
    Mpc { model: FlowMapModel<T>, config: MpcConfig },
    /// Planning through a copy of the true plant. Reads the plant state, so
    /// it only measures the available control authority.
    OracleMpc { config: MpcConfig },
}

impl<T> Controller<T> {
    pub fn tag(&self) -> &'static str {
        match self {
            Controller::None => "none",
            Controller::Drl { .. } => "drl",
            Controller::Mpc { .. } => "mpc",
            Controller::OracleMpc { .. } => "oracle-mpc",
        }
    }
}

/// Run metadata stored next to the CSV series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopMeta {
    pub controller: String,
    pub regime: f64,
    pub seed: u64,
    pub config: ClosedLoopConfig,
    /// Plant steps taken inside controller calls (oracle only).
    pub controller_plant_steps: u64,
    /// Free-form snapshot of the controller settings.
    pub controller_config: serde_json::Value,
}

/// Per-step record of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopLog {
    pub meta: ClosedLoopMeta,
    pub t: Vec<f64>,
    pub c_d: Vec<f64>,
    pub c_l: Vec<f64>,
    pub u: Vec<f64>,
    pub cd_win: Vec<f64>,
    pub cl_win: Vec<f64>,
    pub j: Vec<f64>,
    /// Spinup observations preceding the first logged row, oldest first.
    pub prefill: Vec<QoiSample<f64>>,
}

impl ClosedLoopLog {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.meta.config.dt
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut out = String::with_capacity(self.len() * 140);
        out.push_str(LOG_HEADER);
        out.push('\n');
        for k in 0..self.len() {
            let row = [self.t[k], self.c_d[k], self.c_l[k], self.u[k], self.cd_win[k], self.cl_win[k], self.j[k]];
            let cells: Vec<String> = row.iter().map(|&x| fmt17(x)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        std::fs::write(&csv_path, out).map_err(|e| Error::io(&csv_path, e))?;
        let meta_path = dir.join(format!("{stem}.json"));
        let sidecar = LogSidecar {
            meta: self.meta.clone(),
            prefill_cd: self.prefill.iter().map(|v| v.c_d).collect(),
            prefill_cl: self.prefill.iter().map(|v| v.c_l).collect(),
        };
        let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
    }

    /// Reads a log written by [`ClosedLoopLog::write`], given the CSV path.
    pub fn read(csv_path: &Path) -> Result<Self> {
        let meta_path = csv_path.with_extension("json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let sidecar: LogSidecar =
            serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, None, e.to_string()))?;
        let mut rdr = csv::Reader::from_path(csv_path).map_err(|e| Error::parse(csv_path, None, e.to_string()))?;
        let header = rdr
            .headers()
            .map_err(|e| Error::parse(csv_path, None, e.to_string()))?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if header != LOG_HEADER {
            return Err(Error::parse(csv_path, Some(0), format!("header {header:?}, expected {LOG_HEADER:?}")));
        }
        let mut cols: [Vec<f64>; 7] = Default::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(csv_path, Some(i + 1), e.to_string()))?;
            if rec.len() != 7 {
                return Err(Error::parse(csv_path, Some(i + 1), format!("{} fields, expected 7", rec.len())));
            }
            for (c, field) in rec.iter().enumerate() {
                let x: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(csv_path, Some(i + 1), format!("bad number {field:?}")))?;
                cols[c].push(x);
            }
        }
        let [t, c_d, c_l, u, cd_win, cl_win, j] = cols;
        if sidecar.prefill_cd.len() != sidecar.prefill_cl.len() {
            return Err(Error::parse(&meta_path, None, "prefill channels differ in length"));
        }
        Ok(Self {
            meta: sidecar.meta,
            t,
            c_d,
            c_l,
            u,
            cd_win,
            cl_win,
            j,
            prefill: sidecar
                .prefill_cd
                .iter()
                .zip(&sidecar.prefill_cl)
                .map(|(&d, &l)| QoiSample::new(d, l))
                .collect(),
        })
    }

    /// Mean of `series` over rows with `t > t_settle`.
    pub fn mean_after(&self, series: &[f64], t_settle: f64) -> Result<f64> {
        let vals: Vec<f64> = self.t.iter().zip(series).filter(|(t, _)| **t > t_settle).map(|(_, &x)| x).collect();
        if vals.is_empty() {
            return Err(Error::Empty("log rows after the settling time"));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogSidecar {
    meta: ClosedLoopMeta,
    prefill_cd: Vec<f64>,
    prefill_cl: Vec<f64>,
}

#[allow(clippy::large_enum_variant)]
enum Running<'a, T> {
    None,
    Drl {
        policy: &'a PolicyModel<T>,
        alpha: T,
        stochastic: bool,
        rng: ChaCha8Rng,
        state: RlState<T>,
    },
    Mpc {
        model: &'a FlowMapModel<T>,
        config: &'a MpcConfig,
        ctx: MpcPlanContext<T>,
    },
    Oracle {
        config: &'a MpcConfig,
        ctx: MpcPlanContext<T>,
        plant: PlantParams<T>,
    },
}

impl<T: Scalar> Running<'_, T> {
    /// Control for the current step. The oracle alone receives the plant state.
    fn act(&mut self, plant_state: &PlantState<T>, dt: T) -> Result<T> {
        match self {
            Running::None => Ok(T::zero()),
            Running::Drl { policy, alpha, stochastic, rng, state } => {
                let a = policy_act(policy, state, !*stochastic, rng)?;
                Ok(smooth_action(state.last_u, a, *alpha).max(-T::one()).min(T::one()))
            }
            Running::Mpc { model, config, ctx } => Ok(mpc_act(*model, ctx, config)?.0),
            Running::Oracle { config, ctx, plant } => {
                let oracle = PlantOracle { params: plant.clone(), state: *plant_state, dt };
                Ok(mpc_act(&oracle, ctx, config)?.0)
            }
        }
    }

    fn observe(&mut self, v: QoiSample<T>, u: T) {
        match self {
            Running::None => {}
            Running::Drl { state, .. } => state.record(v, u),
            Running::Mpc { ctx, .. } | Running::Oracle { ctx, .. } => ctx.observe(v, u),
        }
    }
}

fn snapshot<T: Scalar>(controller: &Controller<T>) -> serde_json::Value {
    match controller {
        Controller::None => serde_json::json!({}),
        Controller::Drl { policy, alpha, stochastic, seed } => serde_json::json!({
            "n_M": policy.n_memory(),
            "alpha": alpha.as_f64(),
            "stochastic": stochastic,
            "seed": seed,
        }),
        Controller::Mpc { model, config } => serde_json::json!({
            "n_M": model.n_memory(),
            "mpc": config,
        }),
        Controller::OracleMpc { config } => serde_json::json!({ "mpc": config }),
    }
}

/// Spins the plant up, then runs `duration / dt` control steps.
pub fn run_closed_loop<T: Scalar>(
    params: &PlantParams<T>,
    controller: &Controller<T>,
    config: &ClosedLoopConfig,
    seed: u64,
) -> Result<ClosedLoopLog> {
    let dt = T::lit(config.dt);
    let n_steps = crate::data::steps_in(config.duration, config.dt)?;
    let window = config.cost.window_samples(config.dt)?;
    let omega_l = T::lit(config.cost.omega_l);
    let regime = params.regime().as_f64();
    if config.h0 < window {
        return Err(Error::InsufficientHistory(format!(
            "spinup history of {} samples cannot pre-fill a {window}-sample cost window",
            config.h0
        )));
    }
    let hist = spinup(params, T::lit(config.t_spin), config.h0, dt)?;

    let mut running = match controller {
        Controller::None => Running::None,
        Controller::Drl { policy, alpha, stochastic, seed } => Running::Drl {
            policy,
            alpha: *alpha,
            stochastic: *stochastic,
            rng: ChaCha8Rng::seed_from_u64(*seed),
            state: state_from_history(&hist.v, policy.n_memory(), window)?,
        },
        Controller::Mpc { model, config: mpc } => {
            if (model.dt().as_f64() - config.dt).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "model sample step {} differs from closed-loop step {}",
                    model.dt(),
                    config.dt
                )));
            }
            Running::Mpc {
                model,
                config: mpc,
                ctx: MpcPlanContext::from_history(&hist.v, &hist.u, model.n_memory(), window)?,
            }
        }
        Controller::OracleMpc { config: mpc } => Running::Oracle {
            config: mpc,
            ctx: MpcPlanContext::from_history(&hist.v, &hist.u, 1, window)?,
            plant: params.clone(),
        },
    };
    let oracle = matches!(controller, Controller::OracleMpc { .. });

    let mut cd_buf: VecDeque<T> = hist.v[hist.v.len() - window..].iter().map(|v| v.c_d).collect();
    let mut cl_buf: VecDeque<T> = hist.v[hist.v.len() - window..].iter().map(|v| v.c_l).collect();
    let mut state = hist.state;
    let mut v = *hist.v.last().expect("h0 ≥ 1");
    let mut log = ClosedLoopLog {
        meta: ClosedLoopMeta {
            controller: controller.tag().to_string(),
            regime,
            seed,
            config: *config,
            controller_plant_steps: 0,
            controller_config: snapshot(controller),
        },
        t: Vec::with_capacity(n_steps),
        c_d: Vec::with_capacity(n_steps),
        c_l: Vec::with_capacity(n_steps),
        u: Vec::with_capacity(n_steps),
        cd_win: Vec::with_capacity(n_steps),
        cl_win: Vec::with_capacity(n_steps),
        j: Vec::with_capacity(n_steps),
        prefill: hist.v[..hist.v.len() - 1]
            .iter()
            .map(|s| QoiSample::new(s.c_d.as_f64(), s.c_l.as_f64()))
            .collect(),
    };

    for n in 0..n_steps {
        let steps_before = probe::plant_steps();
        let reads_before = probe::regime_reads();
        let u = running.act(&state, dt)?;
        let ctrl_steps = probe::plant_steps() - steps_before;
        if probe::regime_reads() != reads_before {
            return Err(Error::Contract(format!("controller read the regime parameter at step {n}")));
        }
        if ctrl_steps != 0 && !oracle {
            return Err(Error::Contract(format!("controller advanced the plant {ctrl_steps} times at step {n}")));
        }
        log.meta.controller_plant_steps += ctrl_steps;

        let cd: Vec<T> = cd_buf.iter().copied().collect();
        let cl: Vec<T> = cl_buf.iter().copied().collect();
        let len = T::from_usize_lossy(window);
        log.t.push(n as f64 * config.dt);
        log.c_d.push(v.c_d.as_f64());
        log.c_l.push(v.c_l.as_f64());
        log.u.push(u.as_f64());
        log.cd_win.push((cd.iter().copied().sum::<T>() / len).as_f64());
        log.cl_win.push((cl.iter().copied().sum::<T>() / len).as_f64());
        log.j.push(cost_j(&cd, &cl, omega_l)?.as_f64());

        let before = probe::plant_steps();
        state = plant_step(params, &state, u, dt)?;
        debug_assert_eq!(probe::plant_steps() - before, 1);
        v = observe(params, &state);
        if !v.is_finite() {
            return Err(Error::Diverged(format!("plant observation non-finite at step {n}")));
        }
        running.observe(v, u);
        cd_buf.pop_front();
        cd_buf.push_back(v.c_d);
        cl_buf.pop_front();
        cl_buf.push_back(v.c_l);
    }
    Ok(log)
}

/// Percentage reduction of the mean windowed drag after `t_settle`.
pub fn drag_reduction(baseline: &ClosedLoopLog, controlled: &ClosedLoopLog, t_settle: f64) -> Result<f64> {
    if (baseline.dt() - controlled.dt()).abs() > 1e-12 || baseline.len() != controlled.len() {
        return Err(Error::Dimension {
            what: "closed-loop log grids",
            expected: baseline.len(),
            got: controlled.len(),
        });
    }
    let base = baseline.mean_after(&baseline.cd_win, t_settle)?;
    let ctrl = controlled.mean_after(&controlled.cd_win, t_settle)?;
    Ok(crate::harness::metrics::reduction_pct(base, ctrl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::moving_average;
    use crate::plant::make_plant;

    fn short() -> ClosedLoopConfig {
        ClosedLoopConfig { duration: 20.0, ..Default::default() }
    }

    #[test]
    fn baseline_reproduces_uncontrolled_plant() {
        let p = make_plant(300.0).unwrap();
        let log = run_closed_loop(&p, &Controller::None, &short(), 0).unwrap();
        assert_eq!(log.len(), 200);
        assert!(log.u.iter().all(|&u| u == 0.0));
        let mut s = spinup(&p, 100.0, 1, 0.1).unwrap().state;
        for k in 0..log.len() {
            let v = observe(&p, &s);
            assert_eq!(v.c_d, log.c_d[k]);
            assert_eq!(v.c_l, log.c_l[k]);
            s = plant_step(&p, &s, 0.0, 0.1).unwrap();
        }
        assert!((log.cd_win[0] - 1.30).abs() < 0.01);
    }

    #[test]
    fn windowed_columns_match_post_hoc_average() {
        let p = make_plant(300.0).unwrap();
        let log = run_closed_loop(&p, &Controller::<f64>::OracleMpc { config: MpcConfig { iterations: 3, ..Default::default() } }, &short(), 0).unwrap();
        let cd: Vec<f64> = log.prefill.iter().map(|v| v.c_d).chain(log.c_d.iter().copied()).collect();
        let cl: Vec<f64> = log.prefill.iter().map(|v| v.c_l).chain(log.c_l.iter().copied()).collect();
        let off = log.prefill.len();
        let (mcd, mcl) = (moving_average(&cd, 5.0, 0.1).unwrap(), moving_average(&cl, 5.0, 0.1).unwrap());
        for k in 0..log.len() {
            assert!((mcd[off + k] - log.cd_win[k]).abs() < 1e-12);
            assert!((mcl[off + k] - log.cl_win[k]).abs() < 1e-12);
            assert!((log.j[k] - (log.cd_win[k] + 0.2 * log.cl_win[k].abs())).abs() < 1e-12);
        }
        assert!(log.meta.controller_plant_steps > 0);
    }

    #[test]
    fn reduction_arithmetic_and_log_round_trip() {
        let p = make_plant(300.0).unwrap();
        let base = run_closed_loop(&p, &Controller::None, &short(), 0).unwrap();
        assert_eq!(drag_reduction(&base, &base, 5.0).unwrap(), 0.0);
        let mut ctrl = base.clone();
        ctrl.cd_win.iter_mut().for_each(|x| *x = 1.0);
        let mut flat = base.clone();
        flat.cd_win.iter_mut().for_each(|x| *x = 1.3);
        assert!((drag_reduction(&flat, &ctrl, 5.0).unwrap() - 23.076923076923077).abs() < 1e-9);
        let mut short_log = base.clone();
        short_log.t.pop();
        assert!(drag_reduction(&base, &short_log, 5.0).is_err());

        let dir = tempfile::tempdir().unwrap();
        base.write(dir.path(), "run").unwrap();
        let back = ClosedLoopLog::read(&dir.path().join("run.csv")).unwrap();
        assert_eq!(back, base);
    }
}
