//! Vehicle models as control-affine systems.
//!
//! Each vehicle obeys `ṗ = f₀(p) + F(p)·u` and is equivalently described by
//! the annihilating codistribution of its control distribution: a matrix
//! `Ω_K(p)` with `Ω_K·F = 0`, turning the motion model into linear
//! constraints on admissible velocities, `Ω_K(p)·ṗ = T_K(p)` where
//! `T_K = Ω_K·f₀` captures the drift.
//!
//! Four planar models are provided:
//!
//! | kind             | state          | inputs        | Ω_K rows |
//! |------------------|----------------|---------------|----------|
//! | `unicycle`       | (x, y, θ)      | v, ω          | 1        |
//! | `constant_speed` | (x, y, θ)      | ω             | 2        |
//! | `car_like`       | (x, y, θ, φ)   | drive, steer  | 2        |
//! | `integrator`     | (x, y)         | vx, vy        | 0        |
//!
//! Headings are stored unwrapped (not reduced mod 2π) so constraint
//! functions stay C¹ along trajectories; angle comparisons wrap explicitly
//! where needed.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};

/// Steering angles with |φ| above this bound are rejected (tan singularity
/// at ±π/2).
pub const CAR_STEER_LIMIT: f64 = std::f64::consts::FRAC_PI_2 - 1e-3;

/// The four supported vehicle kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VehicleKind {
    /// Nonholonomic unicycle: forward speed and heading rate inputs.
    Unicycle,
    /// Unicycle with fixed forward speed; the only input is the heading rate.
    ConstantSpeed,
    /// Rear-wheel-driving car with driving and steering velocity inputs.
    CarLike,
    /// Fully actuated planar point: velocity inputs in x and y.
    Integrator,
}

impl VehicleKind {
    /// Parse the scenario-file spelling of a kind.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "unicycle" => Ok(VehicleKind::Unicycle),
            "constant_speed" => Ok(VehicleKind::ConstantSpeed),
            "car_like" => Ok(VehicleKind::CarLike),
            "integrator" => Ok(VehicleKind::Integrator),
            other => Err(Error::UnknownKind(other.into())),
        }
    }

    /// Scenario-file spelling.
    pub fn name(&self) -> &'static str {
        match self {
            VehicleKind::Unicycle => "unicycle",
            VehicleKind::ConstantSpeed => "constant_speed",
            VehicleKind::CarLike => "car_like",
            VehicleKind::Integrator => "integrator",
        }
    }

    /// State-space dimension n.
    pub fn state_dim(&self) -> usize {
        match self {
            VehicleKind::Unicycle | VehicleKind::ConstantSpeed => 3,
            VehicleKind::CarLike => 4,
            VehicleKind::Integrator => 2,
        }
    }

    /// Number of control inputs l.
    pub fn control_dim(&self) -> usize {
        match self {
            VehicleKind::Unicycle | VehicleKind::CarLike | VehicleKind::Integrator => 2,
            VehicleKind::ConstantSpeed => 1,
        }
    }

    /// Names of the state coordinates, used for log headers.
    pub fn state_names(&self) -> &'static [&'static str] {
        match self {
            VehicleKind::Unicycle | VehicleKind::ConstantSpeed => &["x", "y", "theta"],
            VehicleKind::CarLike => &["x", "y", "theta", "phi"],
            VehicleKind::Integrator => &["x", "y"],
        }
    }

    /// Whether the state carries a heading angle θ (at index 2).
    pub fn has_heading(&self) -> bool {
        !matches!(self, VehicleKind::Integrator)
    }
}

impl fmt::Display for VehicleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An immutable vehicle model: drift field, control fields, annihilating
/// codistribution and its drift image.
///
/// Parameters are fixed at construction; all evaluators are pure functions
/// of the state, so a model can be shared freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleModel {
    kind: VehicleKind,
    /// Fixed forward speed, constant-speed kind only (m/s).
    speed: f64,
    /// Axle distance, car-like kind only (m).
    wheelbase: f64,
    params: BTreeMap<String, f64>,
}

/// Build a vehicle model of the given kind.
///
/// `constant_speed` requires a positive `v`; `car_like` requires a positive
/// `wheelbase`.
pub fn make_vehicle(kind: VehicleKind, params: &BTreeMap<String, f64>) -> Result<VehicleModel> {
    let require_positive = |name: &str| -> Result<f64> {
        let value = *params.get(name).ok_or_else(|| Error::MissingParam {
            kind: kind.name().into(),
            name: name.into(),
        })?;
        if value <= 0.0 {
            return Err(Error::NonPositiveParam {
                name: name.into(),
                value,
            });
        }
        Ok(value)
    };
    let (speed, wheelbase) = match kind {
        VehicleKind::ConstantSpeed => (require_positive("v")?, 0.0),
        VehicleKind::CarLike => (0.0, require_positive("wheelbase")?),
        _ => (0.0, 0.0),
    };
    Ok(VehicleModel {
        kind,
        speed,
        wheelbase,
        params: params.clone(),
    })
}

impl VehicleModel {
    pub fn kind(&self) -> VehicleKind {
        self.kind
    }

    /// State dimension n.
    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    /// Control dimension l.
    pub fn control_dim(&self) -> usize {
        self.kind.control_dim()
    }

    /// Number of codistribution rows, n − l.
    pub fn codim(&self) -> usize {
        self.state_dim() - self.control_dim()
    }

    /// Model parameters as given at construction.
    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    /// Fixed speed (constant-speed kind).
    pub fn speed(&self) -> f64 {
        self.speed
    }

    fn check_state(&self, vehicle: usize, p: &[f64]) -> Result<()> {
        if p.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: format!("state of a {} vehicle", self.kind),
                expected: self.state_dim(),
                got: p.len(),
            });
        }
        if self.kind == VehicleKind::CarLike && p[3].abs() > CAR_STEER_LIMIT {
            return Err(Error::InadmissibleState {
                vehicle,
                detail: format!(
                    "steering angle {:.4} outside |phi| <= {CAR_STEER_LIMIT:.4}",
                    p[3]
                ),
            });
        }
        Ok(())
    }

    /// Drift field f₀(p).
    pub fn drift(&self, p: &[f64]) -> Result<DVector<f64>> {
        self.check_state(usize::MAX, p)?;
        Ok(match self.kind {
            VehicleKind::Unicycle => DVector::zeros(3),
            VehicleKind::ConstantSpeed => {
                let theta = p[2];
                DVector::from_vec(vec![
                    self.speed * theta.cos(),
                    self.speed * theta.sin(),
                    0.0,
                ])
            }
            VehicleKind::CarLike => DVector::zeros(4),
            VehicleKind::Integrator => DVector::zeros(2),
        })
    }

    /// Control field matrix F(p) = [f₁ … f_l], one column per input.
    pub fn control_fields(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(usize::MAX, p)?;
        Ok(match self.kind {
            VehicleKind::Unicycle => {
                let theta = p[2];
                DMatrix::from_column_slice(3, 2, &[theta.cos(), theta.sin(), 0.0, 0.0, 0.0, 1.0])
            }
            VehicleKind::ConstantSpeed => DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
            VehicleKind::CarLike => {
                let (theta, phi) = (p[2], p[3]);
                DMatrix::from_column_slice(
                    4,
                    2,
                    &[
                        theta.cos(),
                        theta.sin(),
                        phi.tan() / self.wheelbase,
                        0.0,
                        0.0,
                        0.0,
                        0.0,
                        1.0,
                    ],
                )
            }
            VehicleKind::Integrator => DMatrix::identity(2, 2),
        })
    }

    /// Annihilating codistribution Ω_K(p), one row per velocity constraint.
    pub fn codistribution(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(usize::MAX, p)?;
        Ok(match self.kind {
            VehicleKind::Unicycle => {
                let theta = p[2];
                DMatrix::from_row_slice(1, 3, &[theta.sin(), -theta.cos(), 0.0])
            }
            VehicleKind::ConstantSpeed => {
                let theta = p[2];
                DMatrix::from_row_slice(
                    2,
                    3,
                    &[
                        theta.sin(),
                        -theta.cos(),
                        0.0,
                        theta.cos(),
                        theta.sin(),
                        0.0,
                    ],
                )
            }
            VehicleKind::CarLike => {
                let (theta, phi) = (p[2], p[3]);
                DMatrix::from_row_slice(
                    2,
                    4,
                    &[
                        (theta + phi).sin(),
                        -(theta + phi).cos(),
                        -self.wheelbase * phi.cos(),
                        0.0,
                        theta.sin(),
                        -theta.cos(),
                        0.0,
                        0.0,
                    ],
                )
            }
            VehicleKind::Integrator => DMatrix::zeros(0, 2),
        })
    }

    /// Drift image T_K(p) = Ω_K(p)·f₀(p), written in closed form.
    pub fn drift_image(&self, p: &[f64]) -> Result<DVector<f64>> {
        self.check_state(usize::MAX, p)?;
        Ok(match self.kind {
            VehicleKind::Unicycle => DVector::zeros(1),
            VehicleKind::ConstantSpeed => DVector::from_vec(vec![0.0, self.speed]),
            VehicleKind::CarLike => DVector::zeros(2),
            VehicleKind::Integrator => DVector::zeros(0),
        })
    }
}

/// Max-norm residual of the annihilation identities at state `p`:
/// `max(‖Ω_K·F‖∞, ‖Ω_K·f₀ − T_K‖∞)`.
pub fn verify_annihilation(model: &VehicleModel, p: &[f64]) -> Result<f64> {
    let omega = model.codistribution(p)?;
    let fields = model.control_fields(p)?;
    let drift = model.drift(p)?;
    let image = model.drift_image(p)?;
    if omega.nrows() == 0 {
        return Ok(0.0);
    }
    let a = (&omega * fields).abs().max();
    let b = (&omega * drift - image).abs().max();
    Ok(a.max(b))
}

/// Joint state of a vehicle group: per-vehicle blocks packed into one
/// vector, with offsets for slicing.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    data: DVector<f64>,
    offsets: Vec<usize>,
}

impl JointState {
    /// Pack per-vehicle states in vehicle order; block sizes must match the
    /// models.
    pub fn new(models: &[VehicleModel], flat: Vec<f64>) -> Result<Self> {
        let total: usize = models.iter().map(|m| m.state_dim()).sum();
        if flat.len() != total {
            return Err(Error::DimensionMismatch {
                what: "joint state".into(),
                expected: total,
                got: flat.len(),
            });
        }
        let mut offsets = Vec::with_capacity(models.len() + 1);
        let mut acc = 0;
        for m in models {
            offsets.push(acc);
            acc += m.state_dim();
        }
        offsets.push(acc);
        Ok(JointState {
            data: DVector::from_vec(flat),
            offsets,
        })
    }

    /// Same block layout as `self` but with new values.
    pub fn with_data(&self, data: DVector<f64>) -> Result<Self> {
        if data.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "joint state".into(),
                expected: self.dim(),
                got: data.len(),
            });
        }
        Ok(JointState {
            data,
            offsets: self.offsets.clone(),
        })
    }

    /// Total dimension N = Σ nᵢ.
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    /// Number of vehicles.
    pub fn vehicle_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Start offset of vehicle `i`'s block.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Dimension of vehicle `i`'s block.
    pub fn block_dim(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Vehicle `i`'s state block.
    pub fn block(&self, i: usize) -> DVectorView<'_, f64> {
        self.data
            .rows(self.offsets[i], self.offsets[i + 1] - self.offsets[i])
    }

    /// Vehicle `i`'s state block as a slice.
    pub fn block_slice(&self, i: usize) -> &[f64] {
        &self.data.as_slice()[self.offsets[i]..self.offsets[i + 1]]
    }

    /// The packed vector.
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    /// The packed values as a slice.
    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice()
    }
}

/// Stack the per-vehicle kinematic constraints into block form:
/// `Ω_K(P)` of size (Σ(nᵢ−lᵢ)) × N and the stacked drift image `T_K(P)`.
/// Row blocks follow vehicle order.
pub fn stack_kinematics(
    models: &[VehicleModel],
    state: &JointState,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_layout(models, state)?;
    let n_total = state.dim();
    let m_total: usize = models.iter().map(|m| m.codim()).sum();
    let mut omega = DMatrix::zeros(m_total, n_total);
    let mut rhs = DVector::zeros(m_total);
    let mut row = 0;
    for (i, model) in models.iter().enumerate() {
        let p = state.block_slice(i);
        let local = model.codistribution(p).map_err(|e| relabel_vehicle(e, i))?;
        let image = model.drift_image(p).map_err(|e| relabel_vehicle(e, i))?;
        let col = state.offset(i);
        omega
            .view_mut((row, col), (model.codim(), model.state_dim()))
            .copy_from(&local);
        rhs.rows_mut(row, model.codim()).copy_from(&image);
        row += model.codim();
    }
    Ok((omega, rhs))
}

/// Stacked drift `F₀(P)` and block-diagonal control-field matrix `F(P)`
/// (N × Σ lᵢ) for the whole group.
pub fn stack_fields(
    models: &[VehicleModel],
    state: &JointState,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_layout(models, state)?;
    let n_total = state.dim();
    let l_total: usize = models.iter().map(|m| m.control_dim()).sum();
    let mut drift = DVector::zeros(n_total);
    let mut fields = DMatrix::zeros(n_total, l_total);
    let mut col = 0;
    for (i, model) in models.iter().enumerate() {
        let p = state.block_slice(i);
        let f0 = model.drift(p).map_err(|e| relabel_vehicle(e, i))?;
        let f = model.control_fields(p).map_err(|e| relabel_vehicle(e, i))?;
        let row = state.offset(i);
        drift.rows_mut(row, model.state_dim()).copy_from(&f0);
        fields
            .view_mut((row, col), (model.state_dim(), model.control_dim()))
            .copy_from(&f);
        col += model.control_dim();
    }
    Ok((drift, fields))
}

fn check_layout(models: &[VehicleModel], state: &JointState) -> Result<()> {
    let total: usize = models.iter().map(|m| m.state_dim()).sum();
    if state.vehicle_count() != models.len() || state.dim() != total {
        return Err(Error::DimensionMismatch {
            what: "joint state layout".into(),
            expected: total,
            got: state.dim(),
        });
    }
    Ok(())
}

fn relabel_vehicle(e: Error, vehicle: usize) -> Error {
    match e {
        Error::InadmissibleState { detail, .. } => Error::InadmissibleState { vehicle, detail },
        other => other,
    }
}

/// Wrap an angle difference into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r > std::f64::consts::PI {
        r -= two_pi;
    } else if r <= -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn no_params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    fn param(name: &str, value: f64) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert(name.into(), value);
        m
    }

    #[test]
    fn dimensions_per_kind() {
        let cases = [
            (VehicleKind::Unicycle, no_params(), 3, 2),
            (VehicleKind::ConstantSpeed, param("v", 1.0), 3, 1),
            (VehicleKind::CarLike, param("wheelbase", 0.5), 4, 2),
            (VehicleKind::Integrator, no_params(), 2, 2),
        ];
        for (kind, params, n, l) in cases {
            let m = make_vehicle(kind, &params).unwrap();
            assert_eq!((m.state_dim(), m.control_dim()), (n, l));
        }
    }

    #[test]
    fn integrator_codistribution_is_empty() {
        let m = make_vehicle(VehicleKind::Integrator, &no_params()).unwrap();
        let omega = m.codistribution(&[0.3, -0.7]).unwrap();
        assert_eq!(omega.nrows(), 0);
        assert_eq!(omega.ncols(), 2);
        assert_eq!(m.drift_image(&[0.3, -0.7]).unwrap().len(), 0);
    }

    #[test]
    fn constant_speed_drift_image() {
        let m = make_vehicle(VehicleKind::ConstantSpeed, &param("v", 1.0)).unwrap();
        for p in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.9], [0.1, 0.2, -2.4]] {
            let image = m.drift_image(&p).unwrap();
            assert_eq!(image.as_slice(), &[0.0, 1.0]);
        }
        // v=2 at theta=pi/2: Omega_K f0 = [0, 2] = T_K
        let m2 = make_vehicle(VehicleKind::ConstantSpeed, &param("v", 2.0)).unwrap();
        let p = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let prod = m2.codistribution(&p).unwrap() * m2.drift(&p).unwrap();
        assert!((prod[0]).abs() < 1e-15);
        assert!((prod[1] - 2.0).abs() < 1e-15);
        assert!(verify_annihilation(&m2, &p).unwrap() < 1e-15);
    }

    #[test]
    fn unicycle_codistribution_at_zero_heading() {
        let m = make_vehicle(VehicleKind::Unicycle, &no_params()).unwrap();
        let omega = m.codistribution(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(omega.nrows(), 1);
        assert!((omega[(0, 0)] - 0.0).abs() < 1e-15);
        assert!((omega[(0, 1)] + 1.0).abs() < 1e-15);
        assert!((omega[(0, 2)] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            VehicleKind::from_name("bicycle"),
            Err(Error::UnknownKind(_))
        ));
        assert!(matches!(
            make_vehicle(VehicleKind::ConstantSpeed, &no_params()),
            Err(Error::MissingParam { .. })
        ));
        assert!(matches!(
            make_vehicle(VehicleKind::CarLike, &param("wheelbase", -0.5)),
            Err(Error::NonPositiveParam { .. })
        ));
    }

    #[test]
    fn car_steering_admissibility() {
        let m = make_vehicle(VehicleKind::CarLike, &param("wheelbase", 0.5)).unwrap();
        let bad = [0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2];
        assert!(matches!(
            m.codistribution(&bad),
            Err(Error::InadmissibleState { .. })
        ));
        let ok = [0.0, 0.0, 0.0, 1.4];
        assert!(m.codistribution(&ok).is_ok());
    }

    #[test]
    fn annihilation_randomized_all_kinds() {
        let mut rng = StdRng::seed_from_u64(7);
        let models = [
            make_vehicle(VehicleKind::Unicycle, &no_params()).unwrap(),
            make_vehicle(VehicleKind::ConstantSpeed, &param("v", 1.7)).unwrap(),
            make_vehicle(VehicleKind::CarLike, &param("wheelbase", 0.5)).unwrap(),
            make_vehicle(VehicleKind::Integrator, &no_params()).unwrap(),
        ];
        for model in &models {
            for _ in 0..200 {
                let p: Vec<f64> = (0..model.state_dim())
                    .map(|k| {
                        if model.kind() == VehicleKind::CarLike && k == 3 {
                            rng.random_range(-1.4..1.4)
                        } else {
                            rng.random_range(-5.0..5.0)
                        }
                    })
                    .collect();
                assert!(verify_annihilation(model, &p).unwrap() <= 1e-12);
                // full row rank of the codistribution
                let omega = model.codistribution(&p).unwrap();
                if omega.nrows() > 0 {
                    let svd = omega.svd(false, false);
                    let smin = svd.singular_values.iter().cloned().fold(f64::MAX, f64::min);
                    assert!(smin > 1e-9);
                }
            }
        }
    }

    #[test]
    fn stacked_dimensions_and_order() {
        let models = vec![
            make_vehicle(VehicleKind::ConstantSpeed, &param("v", 1.5)).unwrap(),
            make_vehicle(VehicleKind::Unicycle, &no_params()).unwrap(),
        ];
        let state = JointState::new(&models, vec![0.0, 0.0, 0.3, 1.0, 1.0, -0.2]).unwrap();
        let (omega, rhs) = stack_kinematics(&models, &state).unwrap();
        assert_eq!((omega.nrows(), omega.ncols()), (3, 6));
        assert_eq!(rhs.as_slice(), &[0.0, 1.5, 0.0]);
        // constant-speed rows live in the left block, unicycle row in the right
        assert_eq!(
            omega
                .view((0, 3), (2, 3))
                .iter()
                .filter(|v| **v != 0.0)
                .count(),
            0
        );
        assert_eq!(
            omega
                .view((2, 0), (1, 3))
                .iter()
                .filter(|v| **v != 0.0)
                .count(),
            0
        );

        let triple = vec![
            models[0].clone(),
            models[1].clone(),
            make_vehicle(VehicleKind::Integrator, &no_params()).unwrap(),
        ];
        let state = JointState::new(&triple, vec![0.0; 8]).unwrap();
        let (omega, _) = stack_kinematics(&triple, &state).unwrap();
        assert_eq!((omega.nrows(), omega.ncols()), (3, 8));
    }

    #[test]
    fn joint_state_block_access() {
        let models = vec![
            make_vehicle(VehicleKind::Unicycle, &no_params()).unwrap(),
            make_vehicle(VehicleKind::Integrator, &no_params()).unwrap(),
        ];
        let state = JointState::new(&models, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(state.dim(), 5);
        assert_eq!(state.block_slice(1), &[4.0, 5.0]);
        assert!(JointState::new(&models, vec![0.0; 4]).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
    }
}
