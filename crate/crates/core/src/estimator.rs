//! Augmented dimension-reduced sliding-window estimator.
//!
//! Each tick re-estimates the last `tw + 1` states by weighted least squares
//! over three residual groups: prior anchoring, IMU-driven state transfer,
//! and the stacked sensor measurements. The state sequence is constrained to
//! a low-order polynomial in time, shrinking the normal equations from
//! `6(tw+1)` to `6(kt+1)` unknowns; the unconstrained solver is retained as
//! the reference implementation and for `kt = tw` both coincide.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::{ConfidenceEngine, ConfidenceInputs, WeightMode, WeightSet};
use crate::dynamics::{average_input, discretize, DynamicsParams, ImuSample, RelativeState, StateTransition};
use crate::sensors::{assemble_observation, uwb_direction, MeasurementBundle, ObservationMatrix, SensorId};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("sequence length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("window times must be strictly increasing")]
    NonIncreasingTimes,
    #[error("polynomial order {kt} exceeds window width {tw}")]
    OrderTooHigh { kt: usize, tw: usize },
    #[error("normal equations rank-deficient even after regularization")]
    RankDeficient,
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
}

/// Sliding window configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Window width in ticks (the window holds `tw + 1` states).
    pub tw: usize,
    /// Polynomial fitting order.
    pub kt: usize,
    /// Tick period (s).
    pub dt: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { tw: 8, kt: 3, dt: 0.04 }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.kt > self.tw {
            return Err(EstimatorError::OrderTooHigh { kt: self.kt, tw: self.tw });
        }
        Ok(())
    }
}

/// Per-tick diagonal weights in stacked order.
#[derive(Debug, Clone, Copy)]
pub struct TickWeights {
    pub prior: Vector6<f64>,
    pub transfer: Vector6<f64>,
    pub measurement: SVector<f64, 8>,
}

impl TickWeights {
    pub fn from_weight_set(w: &WeightSet) -> Self {
        Self { prior: w.prior, transfer: w.transfer, measurement: w.measurement_diag() }
    }
}

/// The stacked window system `E = E_x x - E_alpha alpha` with its diagonal
/// weight. Row groups: priors (6n), transfers (6(n-1)), measurements (8n).
#[derive(Debug, Clone)]
pub struct WindowProblem {
    pub e_x: DMatrix<f64>,
    pub e_alpha: DMatrix<f64>,
    pub w: DVector<f64>,
    pub alpha: DVector<f64>,
    pub times: Vec<f64>,
}

impl WindowProblem {
    pub fn n_ticks(&self) -> usize {
        self.times.len()
    }

    /// Right-hand side `E_alpha * alpha`.
    pub fn target(&self) -> DVector<f64> {
        &self.e_alpha * &self.alpha
    }

    /// Quadratic objective at a stacked state sequence.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let e = &self.e_x * x - self.target();
        e.iter().zip(self.w.iter()).map(|(ei, wi)| wi * ei * ei).sum()
    }
}

/// Assembles the stacked window system from per-tick sequences. States are
/// `n = len(priors)` ticks, transfers span the `n - 1` intervals.
pub fn build_problem(
    priors: &[Vector6<f64>],
    inputs: &[Vector3<f64>],
    transitions: &[StateTransition],
    observations: &[ObservationMatrix],
    measurements: &[SVector<f64, 8>],
    weights: &[TickWeights],
    times: &[f64],
) -> Result<WindowProblem, EstimatorError> {
    let n = priors.len();
    let check = |what: &'static str, got: usize, expected: usize| {
        if got != expected {
            Err(EstimatorError::LengthMismatch { what, got, expected })
        } else {
            Ok(())
        }
    };
    check("inputs", inputs.len(), n.saturating_sub(1))?;
    check("transitions", transitions.len(), n.saturating_sub(1))?;
    check("observations", observations.len(), n)?;
    check("measurements", measurements.len(), n)?;
    check("weights", weights.len(), n)?;
    check("times", times.len(), n)?;
    if times.windows(2).any(|p| p[1] <= p[0]) {
        return Err(EstimatorError::NonIncreasingTimes);
    }

    let n_x = 6 * n;
    let n_u = 3 * (n - 1);
    let n_y = 8 * n;
    let rows = n_x + 6 * (n - 1) + n_y;

    let mut e_x = DMatrix::zeros(rows, n_x);
    let mut e_alpha = DMatrix::zeros(rows, n_x + n_u + n_y);
    let mut w = DVector::zeros(rows);
    let mut alpha = DVector::zeros(n_x + n_u + n_y);

    // Prior rows: identity against the prior block of alpha.
    for k in 0..n {
        for d in 0..6 {
            e_x[(6 * k + d, 6 * k + d)] = 1.0;
            e_alpha[(6 * k + d, 6 * k + d)] = 1.0;
            w[6 * k + d] = weights[k].prior[d];
            alpha[6 * k + d] = priors[k][d];
        }
    }

    // Transfer rows: x_k - A_{k-1} x_{k-1} - B_{k-1} u_{k-1}.
    for j in 0..n - 1 {
        let row0 = n_x + 6 * j;
        let st = &transitions[j];
        e_x.view_mut((row0, 6 * j), (6, 6)).copy_from(&(-st.a));
        for d in 0..6 {
            e_x[(row0 + d, 6 * (j + 1) + d)] = 1.0;
            w[row0 + d] = weights[j + 1].transfer[d];
        }
        e_alpha.view_mut((row0, n_x + 3 * j), (6, 3)).copy_from(&st.b);
        for d in 0..3 {
            alpha[n_x + 3 * j + d] = inputs[j][d];
        }
    }

    // Measurement rows: C_k x_k against the stacked measurement block.
    for k in 0..n {
        let row0 = n_x + 6 * (n - 1) + 8 * k;
        e_x.view_mut((row0, 6 * k), (8, 6)).copy_from(&observations[k].c);
        for d in 0..8 {
            e_alpha[(row0 + d, n_x + n_u + 8 * k + d)] = 1.0;
            w[row0 + d] = weights[k].measurement[d];
            alpha[n_x + n_u + 8 * k + d] = measurements[k][d];
        }
    }

    Ok(WindowProblem { e_x, e_alpha, w, alpha, times: times.to_vec() })
}

/// Block polynomial basis mapping `6(kt+1)` coefficients to the stacked
/// window states. Times are centered at the window start and scaled by its
/// duration before exponentiation, which keeps the Vandermonde blocks well
/// conditioned; the fitted states are invariant to this reparametrization.
#[derive(Debug, Clone)]
pub struct PolynomialBasis {
    pub tau: DMatrix<f64>,
    pub kt: usize,
    pub t0: f64,
    pub scale: f64,
}

pub fn polynomial_basis(times: &[f64], kt: usize) -> Result<PolynomialBasis, EstimatorError> {
    let n = times.len();
    if times.windows(2).any(|p| p[1] <= p[0]) {
        return Err(EstimatorError::NonIncreasingTimes);
    }
    if kt + 1 > n {
        return Err(EstimatorError::OrderTooHigh { kt, tw: n.saturating_sub(1) });
    }
    let t0 = times[0];
    let scale = (times[n - 1] - t0).max(f64::MIN_POSITIVE);
    let cols = 6 * (kt + 1);
    let mut tau = DMatrix::zeros(6 * n, cols);
    for (k, &t) in times.iter().enumerate() {
        let s = (t - t0) / scale;
        let mut power = 1.0;
        for order in 0..=kt {
            for d in 0..6 {
                tau[(6 * k + d, d * (kt + 1) + order)] = power;
            }
            power *= s;
        }
    }
    Ok(PolynomialBasis { tau, kt, t0, scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Ok,
    /// Normal equations failed; the prior sequence was propagated instead.
    SolverFailure,
}

/// Result of one window solve.
#[derive(Debug, Clone)]
pub struct EstimatorOutput {
    /// Posterior sequence over the window.
    pub states: Vec<Vector6<f64>>,
    /// Propagated prior at the newest tick.
    pub prior: Vector6<f64>,
    /// Reduced polynomial coefficients (scaled-time basis), when the reduced
    /// path ran. `states` equals `tau * coeffs` exactly.
    pub coeffs: Option<DVector<f64>>,
    /// Weight snapshot at the newest tick.
    pub weights: WeightSet,
    /// Wall time of the solve pipeline (ms).
    pub solve_ms: f64,
    pub status: SolveStatus,
    /// Range direction was degenerate this tick (UWB row disabled).
    pub uwb_degenerate: bool,
}

impl EstimatorOutput {
    pub fn current(&self) -> RelativeState {
        RelativeState::from_vector(self.states.last().expect("non-empty window"))
    }
}

/// Condition threshold above which Tikhonov regularization is added.
const COND_LIMIT: f64 = 1e12;

fn solve_spd(normal: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, EstimatorError> {
    let eig = nalgebra::SymmetricEigen::new(normal.clone());
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    let cond = if min_ev > 0.0 { max_ev / min_ev } else { f64::INFINITY };

    let mut m = normal.clone();
    if cond > COND_LIMIT {
        let lambda = 1e-9 * normal.trace() / normal.nrows() as f64;
        for i in 0..m.nrows() {
            m[(i, i)] += lambda;
        }
    }
    match m.cholesky() {
        Some(chol) => Ok(chol.solve(rhs)),
        None => Err(EstimatorError::RankDeficient),
    }
}

fn weighted_normal(e: &DMatrix<f64>, w: &DVector<f64>, target: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    // E^T diag(w) E and E^T diag(w) target, scaling rows once.
    let mut we = e.clone();
    for (mut row, wi) in we.row_iter_mut().zip(w.iter()) {
        row *= *wi;
    }
    let normal = e.transpose() * &we;
    let mut wt = target.clone();
    for (ti, wi) in wt.iter_mut().zip(w.iter()) {
        *ti *= *wi;
    }
    let rhs = e.transpose() * wt;
    (normal, rhs)
}

fn split_states(x: &DVector<f64>) -> Vec<Vector6<f64>> {
    (0..x.len() / 6)
        .map(|k| Vector6::from_column_slice(&x.as_slice()[6 * k..6 * k + 6]))
        .collect()
}

/// Exact weighted least-squares minimizer over the full window dimension.
pub fn solve_full(p: &WindowProblem) -> Result<Vec<Vector6<f64>>, EstimatorError> {
    let (normal, rhs) = weighted_normal(&p.e_x, &p.w, &p.target());
    let x = solve_spd(&normal, &rhs)?;
    Ok(split_states(&x))
}

/// Dimension-reduced solve through the polynomial basis, returning both the
/// stacked states and the monomial-basis coefficients (scaled time). The
/// normal equations are formed in an orthonormalized span of the basis; the
/// fitted states are identical and the conditioning does not pick up the
/// Vandermonde factor twice.
pub fn solve_reduced(
    p: &WindowProblem,
    basis: &PolynomialBasis,
) -> Result<(Vec<Vector6<f64>>, DVector<f64>), EstimatorError> {
    let qr = basis.tau.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let e_q = &p.e_x * &q;
    let (normal, rhs) = weighted_normal(&e_q, &p.w, &p.target());
    let y = solve_spd(&normal, &rhs)?;
    let x = &q * &y;
    let coeffs = r
        .solve_upper_triangular(&y)
        .ok_or(EstimatorError::RankDeficient)?;
    Ok((split_states(&x), coeffs))
}

/// Ablation switches applied inside the per-tick pipeline.
#[derive(Debug, Clone, Default)]
pub struct EstimatorOptions {
    pub mode: WeightMode,
    /// Sensors excluded from fusion entirely.
    pub killed: Vec<SensorId>,
}

#[derive(Debug, Clone)]
struct TickData {
    t: f64,
    bundle: MeasurementBundle,
    /// Input over the interval ending at this tick.
    u: Vector3<f64>,
    transition: StateTransition,
    weights: TickWeights,
    prior: Vector6<f64>,
}

/// The per-tick estimation pipeline: confidence evaluation, window shift,
/// observation relinearization, block assembly, reduced solve.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub window: WindowConfig,
    dynamics: DynamicsParams,
    confidence: ConfidenceEngine,
    options: EstimatorOptions,
    ticks: VecDeque<TickData>,
    posteriors: Vec<Vector6<f64>>,
    last_u: Vector3<f64>,
    last_rho: Vector3<f64>,
    initialized: bool,
}

impl Estimator {
    pub fn new(
        window: WindowConfig,
        dynamics: DynamicsParams,
        confidence_params: crate::confidence::ConfidenceParams,
        options: EstimatorOptions,
    ) -> Result<Self, EstimatorError> {
        window.validate()?;
        let engine = ConfidenceEngine::new(confidence_params, options.mode, options.killed.clone());
        Ok(Self {
            window,
            dynamics,
            confidence: engine,
            options,
            ticks: VecDeque::new(),
            posteriors: Vec::new(),
            last_u: Vector3::zeros(),
            last_rho: Vector3::new(1.0, 0.0, 0.0),
            initialized: false,
        })
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Prior for the newest tick: the propagated newest posterior, or a
    /// bundle-derived bootstrap on the first tick.
    pub fn newest_prior(&self, u: &Vector3<f64>, st: &StateTransition, bundle: &MeasurementBundle) -> Vector6<f64> {
        match self.posteriors.last() {
            Some(last) => st.a * last + st.b * u,
            None => bootstrap_state(bundle),
        }
    }

    /// One estimation tick. `x_bar` is the planner reference used by the
    /// confidence evaluation; `reference_available` marks it stale when
    /// absent.
    pub fn step(
        &mut self,
        t: f64,
        bundle: &MeasurementBundle,
        imu_batch: &[ImuSample],
        x_bar: &Vector6<f64>,
        reference_available: bool,
    ) -> EstimatorOutput {
        let started = Instant::now();

        let transition = discretize(&self.dynamics).expect("validated at construction");
        let u = if imu_batch.is_empty() {
            self.last_u
        } else {
            average_input(imu_batch, &self.dynamics)
        };
        self.last_u = u;

        // Window shift: previous posteriors become the priors of the
        // overlapping ticks, the newest prior is propagated forward.
        let new_prior = self.newest_prior(&u, &transition, bundle);
        if self.ticks.len() == self.window.tw + 1 {
            self.ticks.pop_front();
            if !self.posteriors.is_empty() {
                self.posteriors.remove(0);
            }
        }
        for (tick, post) in self.ticks.iter_mut().zip(self.posteriors.iter()) {
            tick.prior = *post;
        }

        // Range linearization from the propagated prior.
        let prior_position = Vector3::new(new_prior[0], new_prior[1], new_prior[2]);
        let (rho, uwb_degenerate) = match uwb_direction(&prior_position) {
            Ok(d) => {
                self.last_rho = d;
                (d, false)
            }
            Err(_) => (self.last_rho, true),
        };

        // Confidence evaluation at the newest tick.
        let inputs = ConfidenceInputs {
            u,
            bundle,
            rho,
            x_bar: *x_bar,
            x_check: new_prior,
            reference_available,
        };
        let mut weight_set = self.confidence.update(&inputs);
        let mut weights = TickWeights::from_weight_set(&weight_set);
        // Invalid rows are removed outright, on top of the confidence result.
        if !bundle.uwb_valid || uwb_degenerate {
            weights.measurement[0] = 0.0;
        }
        if !bundle.opt_valid {
            for d in 1..4 {
                weights.measurement[d] = 0.0;
            }
        }
        if !bundle.alt_valid {
            weights.measurement[4] = 0.0;
        }
        if !bundle.cam_valid {
            for d in 5..8 {
                weights.measurement[d] = 0.0;
            }
        }
        weight_set.uwb = weights.measurement[0];
        weight_set.optical = Vector3::new(weights.measurement[1], weights.measurement[2], weights.measurement[3]);
        weight_set.altimeter = weights.measurement[4];
        weight_set.camera = Vector3::new(weights.measurement[5], weights.measurement[6], weights.measurement[7]);

        self.ticks.push_back(TickData {
            t,
            bundle: *bundle,
            u,
            transition,
            weights,
            prior: new_prior,
        });
        self.initialized = true;

        // Assemble sequences from the window, relinearizing every tick's
        // range row along its current prior.
        let n = self.ticks.len();
        let mut priors = Vec::with_capacity(n);
        let mut inputs_seq = Vec::with_capacity(n - 1);
        let mut transitions = Vec::with_capacity(n - 1);
        let mut observations = Vec::with_capacity(n);
        let mut measurements = Vec::with_capacity(n);
        let mut tick_weights = Vec::with_capacity(n);
        let mut times = Vec::with_capacity(n);
        for (j, tick) in self.ticks.iter().enumerate() {
            priors.push(tick.prior);
            if j > 0 {
                inputs_seq.push(tick.u);
                transitions.push(tick.transition.clone());
            }
            let p_prior = Vector3::new(tick.prior[0], tick.prior[1], tick.prior[2]);
            let rho_k = uwb_direction(&p_prior).unwrap_or(self.last_rho);
            observations.push(assemble_observation(&rho_k));
            measurements.push(stack_measurement(&tick.bundle));
            tick_weights.push(tick.weights);
            times.push(tick.t);
        }

        let problem = build_problem(
            &priors,
            &inputs_seq,
            &transitions,
            &observations,
            &measurements,
            &tick_weights,
            &times,
        )
        .expect("window sequences are constructed consistently");

        let kt_eff = self.window.kt.min(n - 1);
        let solve = polynomial_basis(&times, kt_eff)
            .and_then(|basis| solve_reduced(&problem, &basis));

        let (states, coeffs, status) = match solve {
            Ok((states, coeffs)) if states.iter().all(|s| s.iter().all(|v| v.is_finite())) => {
                (states, Some(coeffs), SolveStatus::Ok)
            }
            _ => {
                log::warn!("window solve failed at t = {t:.3}; propagating prior sequence");
                (priors.clone(), None, SolveStatus::SolverFailure)
            }
        };
        self.posteriors = states.clone();

        EstimatorOutput {
            states,
            prior: new_prior,
            coeffs,
            weights: weight_set,
            solve_ms: started.elapsed().as_secs_f64() * 1e3,
            status,
            uwb_degenerate,
        }
    }

    pub fn options(&self) -> &EstimatorOptions {
        &self.options
    }
}

/// Stacked measurement vector in row order [UWB; OPT(3); ALT; CAM(3)].
pub fn stack_measurement(b: &MeasurementBundle) -> SVector<f64, 8> {
    SVector::<f64, 8>::from_column_slice(&[
        b.uwb_range,
        b.opt_velocity.x,
        b.opt_velocity.y,
        b.opt_velocity.z,
        b.alt,
        b.cam_position.x,
        b.cam_position.y,
        b.cam_position.z,
    ])
}

/// First-tick state bootstrap from whatever channels are valid: camera
/// position, else altimeter z with the range projected into the x axis.
fn bootstrap_state(bundle: &MeasurementBundle) -> Vector6<f64> {
    let p = if bundle.cam_valid {
        bundle.cam_position
    } else {
        let z = if bundle.alt_valid { bundle.alt } else { 0.0 };
        let x = if bundle.uwb_valid {
            (bundle.uwb_range * bundle.uwb_range - z * z).max(0.0).sqrt()
        } else {
            0.0
        };
        Vector3::new(x, 0.0, z)
    };
    let v = if bundle.opt_valid { bundle.opt_velocity } else { Vector3::zeros() };
    Vector6::new(p.x, p.y, p.z, v.x, v.y, v.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn dynamics() -> DynamicsParams {
        DynamicsParams::new(Vector3::new(0.2, 0.2, 0.2), 0.04, 9.81).unwrap()
    }

    fn uniform_weights(n: usize) -> Vec<TickWeights> {
        (0..n)
            .map(|_| TickWeights {
                prior: Vector6::from_element(0.1),
                transfer: Vector6::from_element(0.7),
                measurement: SVector::<f64, 8>::from_element(0.7),
            })
            .collect()
    }

    struct RandomWindow {
        priors: Vec<Vector6<f64>>,
        inputs: Vec<Vector3<f64>>,
        transitions: Vec<StateTransition>,
        observations: Vec<ObservationMatrix>,
        measurements: Vec<SVector<f64, 8>>,
        weights: Vec<TickWeights>,
        times: Vec<f64>,
        truth: Vec<Vector6<f64>>,
    }

    /// A window whose measurements and transfers are exactly consistent with
    /// a propagated truth sequence.
    fn consistent_window(rng: &mut StdRng, n: usize, noisy: bool) -> RandomWindow {
        let params = dynamics();
        let st = discretize(&params).unwrap();
        let mut truth = Vec::with_capacity(n);
        let mut inputs = Vec::new();
        let mut x = Vector6::new(
            rng.random_range(0.5..2.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.3..1.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.2..0.2),
        );
        truth.push(x);
        for _ in 1..n {
            let u = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            x = st.a * x + st.b * u;
            inputs.push(u);
            truth.push(x);
        }
        let mut observations = Vec::new();
        let mut measurements = Vec::new();
        for state in &truth {
            let p = Vector3::new(state[0], state[1], state[2]);
            let rho = uwb_direction(&p).unwrap();
            let obs = assemble_observation(&rho);
            let full = obs.c * state;
            let mut y = SVector::<f64, 8>::zeros();
            y.copy_from(&full);
            if noisy {
                for d in 0..8 {
                    y[d] += rng.random_range(-0.02..0.02);
                }
            }
            observations.push(obs);
            measurements.push(y);
        }
        let priors: Vec<Vector6<f64>> = truth
            .iter()
            .map(|s| {
                if noisy {
                    s + Vector6::from_fn(|_, _| rng.random_range(-0.05..0.05))
                } else {
                    *s
                }
            })
            .collect();
        let times: Vec<f64> = (0..n).map(|k| k as f64 * params.dt).collect();
        let transitions = vec![st; n - 1];
        RandomWindow {
            priors,
            inputs,
            transitions,
            observations,
            measurements,
            weights: uniform_weights(n),
            times,
            truth,
        }
    }

    fn problem_from(w: &RandomWindow) -> WindowProblem {
        build_problem(
            &w.priors,
            &w.inputs,
            &w.transitions,
            &w.observations,
            &w.measurements,
            &w.weights,
            &w.times,
        )
        .unwrap()
    }

    #[test]
    fn problem_dimensions_for_minimal_window() {
        // tw = 1: two ticks, rows 6*2 + 6 + 8*2 = 34, columns 12.
        let mut rng = StdRng::seed_from_u64(1);
        let w = consistent_window(&mut rng, 2, false);
        let p = problem_from(&w);
        assert_eq!(p.e_x.nrows(), 34);
        assert_eq!(p.e_x.ncols(), 12);
        assert_eq!(p.e_alpha.nrows(), 34);
        assert_eq!(p.e_alpha.ncols(), 12 + 3 + 16);
        assert_eq!(p.w.len(), 34);
    }

    #[test]
    fn residual_matches_per_term_oracle() {
        // Hand-evaluate each residual group for a random window and compare
        // against the stacked E_x x - E_alpha alpha.
        let mut rng = StdRng::seed_from_u64(2);
        let w = consistent_window(&mut rng, 4, true);
        let p = problem_from(&w);
        let n = 4;

        // Evaluate at an arbitrary candidate sequence.
        let x: DVector<f64> = DVector::from_fn(6 * n, |_, _| rng.random_range(-1.0..1.0));
        let stacked = &p.e_x * &x - p.target();

        let states: Vec<Vector6<f64>> =
            (0..n).map(|k| Vector6::from_column_slice(&x.as_slice()[6 * k..6 * k + 6])).collect();
        // Prior rows.
        for k in 0..n {
            let expected = states[k] - w.priors[k];
            for d in 0..6 {
                assert_relative_eq!(stacked[6 * k + d], expected[d], epsilon = 1e-12);
            }
        }
        // Transfer rows.
        for j in 0..n - 1 {
            let expected =
                states[j + 1] - (w.transitions[j].a * states[j] + w.transitions[j].b * w.inputs[j]);
            for d in 0..6 {
                assert_relative_eq!(stacked[6 * n + 6 * j + d], expected[d], epsilon = 1e-12);
            }
        }
        // Measurement rows.
        for k in 0..n {
            let expected = w.observations[k].c * states[k] - w.measurements[k];
            for d in 0..8 {
                assert_relative_eq!(stacked[6 * n + 6 * (n - 1) + 8 * k + d], expected[d], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn build_problem_rejects_length_mismatch() {
        let mut rng = StdRng::seed_from_u64(3);
        let w = consistent_window(&mut rng, 3, false);
        let err = build_problem(
            &w.priors,
            &w.inputs[..1],
            &w.transitions,
            &w.observations,
            &w.measurements,
            &w.weights,
            &w.times,
        )
        .unwrap_err();
        assert!(matches!(err, EstimatorError::LengthMismatch { what: "inputs", .. }));
    }

    #[test]
    fn basis_shapes_and_rank() {
        let times: Vec<f64> = (0..9).map(|k| k as f64 * 0.04).collect();
        // kt = 0: single constant block per state dimension.
        let b0 = polynomial_basis(&times, 0).unwrap();
        assert_eq!(b0.tau.ncols(), 6);
        assert!(b0.tau.column(0).iter().step_by(6).all(|v| *v == 1.0));

        // Reduced dimension 24 versus full 54 for the default window.
        let b3 = polynomial_basis(&times, 3).unwrap();
        assert_eq!(b3.tau.ncols(), 24);
        assert_eq!(b3.tau.nrows(), 54);

        // kt = tw: square Vandermonde blocks, full column rank.
        let b8 = polynomial_basis(&times, 8).unwrap();
        assert_eq!(b8.tau.ncols(), 54);
        assert_eq!(b8.tau.rank(1e-10), 54);

        assert!(polynomial_basis(&[0.0, 0.0, 0.1], 1).is_err());
        assert!(polynomial_basis(&times, 9).is_err());
    }

    #[test]
    fn full_solver_recovers_consistent_truth() {
        let mut rng = StdRng::seed_from_u64(5);
        let w = consistent_window(&mut rng, 9, false);
        let p = problem_from(&w);
        let states = solve_full(&p).unwrap();
        for (s, t) in states.iter().zip(&w.truth) {
            assert!((s - t).amax() < 1e-8, "noiseless consistent window is a fixed point");
        }
    }

    #[test]
    fn prior_only_weights_return_priors() {
        let mut rng = StdRng::seed_from_u64(6);
        let mut w = consistent_window(&mut rng, 5, true);
        for tw in w.weights.iter_mut() {
            tw.transfer.fill(0.0);
            tw.measurement.fill(0.0);
        }
        let p = problem_from(&w);
        let states = solve_full(&p).unwrap();
        for (s, prior) in states.iter().zip(&w.priors) {
            assert!((s - prior).amax() < 1e-9);
        }
    }

    #[test]
    fn normal_equation_certificate_and_gradient() {
        let mut rng = StdRng::seed_from_u64(7);
        let w = consistent_window(&mut rng, 6, true);
        let p = problem_from(&w);
        let states = solve_full(&p).unwrap();
        let mut x = DVector::zeros(6 * 6);
        for (k, s) in states.iter().enumerate() {
            x.rows_mut(6 * k, 6).copy_from(s);
        }
        // E_x^T W (E_x x - E_alpha alpha) = 0.
        let resid = &p.e_x * &x - p.target();
        let mut wr = resid.clone();
        for (r, wi) in wr.iter_mut().zip(p.w.iter()) {
            *r *= *wi;
        }
        let cert = p.e_x.transpose() * wr;
        assert!(cert.amax() < 1e-8, "normal equation residual {}", cert.amax());

        // Finite-difference gradient of the objective vanishes at the optimum.
        let j0 = p.objective(&x);
        let h = 1e-6;
        for i in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let grad = (p.objective(&xp) - p.objective(&xm)) / (2.0 * h);
            assert!(grad.abs() < 1e-6 * (1.0 + j0), "gradient {grad} at {i}");
        }

        // Objective at the optimum does not exceed the prior sequence cost.
        let mut xprior = DVector::zeros(36);
        for (k, s) in w.priors.iter().enumerate() {
            xprior.rows_mut(6 * k, 6).copy_from(s);
        }
        assert!(p.objective(&x) <= p.objective(&xprior) + 1e-12);
    }

    #[test]
    fn reduced_equals_full_at_max_order() {
        let mut rng = StdRng::seed_from_u64(8);
        for n in [2usize, 4, 7, 9] {
            let w = consistent_window(&mut rng, n, true);
            let p = problem_from(&w);
            let full = solve_full(&p).unwrap();
            let basis = polynomial_basis(&w.times, n - 1).unwrap();
            let (reduced, _) = solve_reduced(&p, &basis).unwrap();
            for (f, r) in full.iter().zip(&reduced) {
                assert!((f - r).amax() < 1e-8, "n = {n}: {:.3e}", (f - r).amax());
            }
        }
    }

    #[test]
    fn cubic_truth_recovered_by_cubic_fit() {
        // States exactly cubic in time, kt = 3 reduced solve recovers them.
        let n = 9;
        let dt = 0.04;
        let times: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let coeff = |d: usize| match d {
            0 => [1.0, 0.5, -0.3, 0.2],
            1 => [-0.5, 0.8, 0.1, -0.4],
            2 => [0.6, -0.2, 0.05, 0.1],
            3 => [0.1, 0.3, -0.2, 0.15],
            4 => [-0.2, 0.1, 0.4, -0.1],
            _ => [0.05, -0.3, 0.2, 0.05],
        };
        let truth: Vec<Vector6<f64>> = times
            .iter()
            .map(|&t| {
                Vector6::from_fn(|d, _| {
                    let c = coeff(d);
                    c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t
                })
            })
            .collect();
        // Pure state-anchoring problem: priors equal truth, no transfer or
        // measurement content.
        let mut weights = uniform_weights(n);
        for w in weights.iter_mut() {
            w.transfer.fill(0.0);
            w.measurement.fill(0.0);
            w.prior.fill(1.0);
        }
        let st = discretize(&dynamics()).unwrap();
        let observations: Vec<ObservationMatrix> =
            (0..n).map(|_| assemble_observation(&Vector3::new(1.0, 0.0, 0.0))).collect();
        let p = build_problem(
            &truth,
            &vec![Vector3::zeros(); n - 1],
            &vec![st; n - 1],
            &observations,
            &vec![SVector::<f64, 8>::zeros(); n],
            &weights,
            &times,
        )
        .unwrap();
        let basis = polynomial_basis(&times, 3).unwrap();
        let (states, _) = solve_reduced(&p, &basis).unwrap();
        for (s, t) in states.iter().zip(&truth) {
            assert!((s - t).amax() < 1e-7, "cubic recovery error {:.3e}", (s - t).amax());
        }
    }

    #[test]
    fn constant_fit_is_weighted_mean() {
        // kt = 0 with prior-only anchoring: the window collapses to the
        // weighted mean of the priors.
        let n = 5;
        let times: Vec<f64> = (0..n).map(|k| k as f64 * 0.04).collect();
        let priors: Vec<Vector6<f64>> =
            (0..n).map(|k| Vector6::from_element(k as f64)).collect();
        let mut weights = uniform_weights(n);
        for w in weights.iter_mut() {
            w.transfer.fill(0.0);
            w.measurement.fill(0.0);
            w.prior.fill(1.0);
        }
        let st = discretize(&dynamics()).unwrap();
        let observations: Vec<ObservationMatrix> =
            (0..n).map(|_| assemble_observation(&Vector3::new(1.0, 0.0, 0.0))).collect();
        let p = build_problem(
            &priors,
            &vec![Vector3::zeros(); n - 1],
            &vec![st; n - 1],
            &observations,
            &vec![SVector::<f64, 8>::zeros(); n],
            &weights,
            &times,
        )
        .unwrap();
        let basis = polynomial_basis(&times, 0).unwrap();
        let (states, _) = solve_reduced(&p, &basis).unwrap();
        let mean = (0..n).map(|k| k as f64).sum::<f64>() / n as f64;
        for s in &states {
            assert_relative_eq!(s[0], mean, epsilon = 1e-9);
        }
    }

    /// Closed loop on a constant-acceleration line: the quadratic truth is
    /// exactly representable by the discrete model and the cubic fit, so the
    /// estimate converges to truth at solver precision.
    #[test]
    fn step_converges_on_exact_scenario() {
        let dt = 0.04;
        let params = DynamicsParams::new(Vector3::zeros(), dt, 9.81).unwrap();
        let window = WindowConfig { tw: 8, kt: 3, dt };
        let mut est = Estimator::new(
            window,
            params,
            crate::confidence::ConfidenceParams::defaults_for(8, &crate::sensors::SensorNoiseSpec::default()),
            EstimatorOptions::default(),
        )
        .unwrap();

        let u_true = Vector3::new(0.05, -0.02, 0.01);
        let p0 = Vector3::new(1.0, 0.4, 0.5);
        let v0 = Vector3::new(0.2, -0.1, 0.05);
        let truth_at = |t: f64| {
            let p = p0 + v0 * t + 0.5 * u_true * t * t;
            let v = v0 + u_true * t;
            (p, v)
        };

        let mut worst_after_warmup: f64 = 0.0;
        for k in 0..80 {
            let t = k as f64 * dt;
            let (p, v) = truth_at(t);
            let rho = p / p.norm();
            let bundle = MeasurementBundle {
                t,
                uwb_range: rho.dot(&p),
                uwb_valid: true,
                opt_velocity: v,
                opt_valid: true,
                alt: p.z,
                alt_valid: true,
                cam_position: p,
                cam_valid: true,
            };
            // Consistent IMU input for the zero-drag model.
            let a_body = (u_true + Vector3::new(0.0, 0.0, 9.81)) / 9.81;
            let imu = [ImuSample { a: a_body, q: crate::geometry::UnitQuat::identity(), t }];
            let x_bar = Vector6::new(p.x, p.y, p.z, v.x, v.y, v.z);
            let out = est.step(t, &bundle, &imu, &x_bar, true);
            assert_eq!(out.status, SolveStatus::Ok);
            let err = (out.current().p - p).norm() + (out.current().v - v).norm();
            if t > 2.0 {
                worst_after_warmup = worst_after_warmup.max(err);
            }
        }
        assert!(worst_after_warmup < 1e-6, "steady error {worst_after_warmup}");
    }

    #[test]
    fn window_shift_consistency() {
        // The prior fed at tick k+1 for overlapping indices is exactly the
        // posterior at tick k.
        let dt = 0.04;
        let params = dynamics();
        let mut est = Estimator::new(
            WindowConfig { tw: 4, kt: 2, dt },
            params,
            crate::confidence::ConfidenceParams::defaults_for(4, &crate::sensors::SensorNoiseSpec::default()),
            EstimatorOptions::default(),
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(17);
        let mut previous_states: Option<Vec<Vector6<f64>>> = None;
        for k in 0..12 {
            let t = k as f64 * dt;
            let bundle = MeasurementBundle {
                t,
                uwb_range: 1.0 + 0.1 * t,
                uwb_valid: true,
                opt_velocity: Vector3::new(rng.random_range(-0.2..0.2), 0.0, 0.0),
                opt_valid: true,
                alt: 0.5,
                alt_valid: true,
                cam_position: Vector3::new(1.0 + 0.1 * t, 0.0, 0.5),
                cam_valid: true,
            };
            let imu = [ImuSample {
                a: Vector3::new(0.0, 0.0, 1.0),
                q: crate::geometry::UnitQuat::identity(),
                t,
            }];
            let out = est.step(t, &bundle, &imu, &Vector6::zeros(), true);
            if let Some(prev) = previous_states {
                let full = est.ticks.len() == est.window.tw + 1 && prev.len() == est.window.tw + 1;
                let offset = if full { 1 } else { 0 };
                for (j, tick) in est.ticks.iter().enumerate().take(prev.len() - offset) {
                    assert_relative_eq!(tick.prior, prev[j + offset], epsilon = 0.0);
                }
            }
            previous_states = Some(out.states);
        }
    }

    #[test]
    fn solver_failure_propagates_priors() {
        // All weights zero except nothing: normal matrix singular; the step
        // must not panic and must fall back to the prior sequence.
        let dt = 0.04;
        let params = dynamics();
        let mut confidence =
            crate::confidence::ConfidenceParams::defaults_for(2, &crate::sensors::SensorNoiseSpec::default());
        confidence.prior_weight = 0.0;
        let mut est = Estimator::new(
            WindowConfig { tw: 2, kt: 1, dt },
            params,
            confidence,
            EstimatorOptions { mode: WeightMode::Adaptive, killed: vec![
                SensorId::Imu,
                SensorId::Uwb,
                SensorId::Optical,
                SensorId::Altimeter,
                SensorId::Camera,
            ] },
        )
        .unwrap();
        let bundle = MeasurementBundle {
            t: 0.0,
            uwb_range: 1.0,
            uwb_valid: false,
            opt_velocity: Vector3::zeros(),
            opt_valid: false,
            alt: 0.5,
            alt_valid: false,
            cam_position: Vector3::new(1.0, 0.0, 0.5),
            cam_valid: false,
        };
        let out = est.step(0.0, &bundle, &[], &Vector6::zeros(), false);
        assert_eq!(out.status, SolveStatus::SolverFailure);
        assert!(out.states.iter().all(|s| s.iter().all(|v| v.is_finite())));
    }
}
