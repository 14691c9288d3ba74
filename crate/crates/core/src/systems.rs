//! Control systems `ẋ = g(t, x, u)`, `u ∈ U` with `U` an axis-aligned box, and
//! the two built-in example systems.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Right-hand side of a control system together with its partial derivatives.
///
/// Jacobians are written row-major: `jac_x` is `dim_x × dim_x`, `jac_u` is
/// `dim_x × dim_u`.
pub trait Dynamics<T: Scalar>: Send + Sync {
    fn eval(&self, t: T, x: &[T], u: &[T], out: &mut [T]);
    fn jac_x(&self, t: T, x: &[T], u: &[T], out: &mut [T]);
    fn jac_u(&self, t: T, x: &[T], u: &[T], out: &mut [T]);
}

#[derive(Clone)]
pub struct ControlSystem<T: Scalar> {
    name: String,
    dim_x: usize,
    dim_u: usize,
    t0: T,
    t_final: T,
    x0: Vec<T>,
    u_lower: Vec<T>,
    u_upper: Vec<T>,
    dynamics: Arc<dyn Dynamics<T>>,
}

impl<T: Scalar> fmt::Debug for ControlSystem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSystem")
            .field("name", &self.name)
            .field("dim_x", &self.dim_x)
            .field("dim_u", &self.dim_u)
            .field("t0", &self.t0)
            .field("t_final", &self.t_final)
            .field("x0", &self.x0)
            .field("u_lower", &self.u_lower)
            .field("u_upper", &self.u_upper)
            .finish()
    }
}

impl<T: Scalar> ControlSystem<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        t0: T,
        t_final: T,
        x0: Vec<T>,
        u_lower: Vec<T>,
        u_upper: Vec<T>,
        dynamics: Arc<dyn Dynamics<T>>,
    ) -> Result<Self> {
        if !(t0 < t_final) {
            return Err(Error::invalid(format!("t0 = {t0} must be < T = {t_final}")));
        }
        if u_lower.len() != u_upper.len() {
            return Err(Error::Dimension {
                expected: u_lower.len(),
                got: u_upper.len(),
            });
        }
        if let Some(k) = (0..u_lower.len()).find(|&k| !(u_lower[k] <= u_upper[k])) {
            return Err(Error::invalid(format!(
                "empty control box in coordinate {k}"
            )));
        }
        Ok(Self {
            name: name.into(),
            dim_x: x0.len(),
            dim_u: u_lower.len(),
            t0,
            t_final,
            x0,
            u_lower,
            u_upper,
            dynamics,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim_x(&self) -> usize {
        self.dim_x
    }
    pub fn dim_u(&self) -> usize {
        self.dim_u
    }
    pub fn t0(&self) -> T {
        self.t0
    }
    pub fn t_final(&self) -> T {
        self.t_final
    }
    pub fn x0(&self) -> &[T] {
        &self.x0
    }
    pub fn u_lower(&self) -> &[T] {
        &self.u_lower
    }
    pub fn u_upper(&self) -> &[T] {
        &self.u_upper
    }

    /// Step size of an `n`-step uniform discretisation of `[t0, T]`.
    pub fn step_size(&self, n: usize) -> T {
        (self.t_final - self.t0) / T::from_usize(n).unwrap_or_else(T::one)
    }

    pub fn control_midpoint(&self) -> Vec<T> {
        self.u_lower
            .iter()
            .zip(&self.u_upper)
            .map(|(&l, &u)| (l + u) * T::half())
            .collect()
    }

    /// Componentwise projection onto the control box.
    pub fn clamp_control(&self, u: &mut [T]) {
        for ((v, &l), &h) in u.iter_mut().zip(&self.u_lower).zip(&self.u_upper) {
            *v = v.max(l).min(h);
        }
    }

    pub fn check_control(&self, u: &[T]) -> Result<()> {
        if u.len() != self.dim_u {
            return Err(Error::Dimension {
                expected: self.dim_u,
                got: u.len(),
            });
        }
        for (coord, ((&v, &l), &h)) in u.iter().zip(&self.u_lower).zip(&self.u_upper).enumerate() {
            if !(v >= l && v <= h) {
                return Err(Error::ControlOutOfBox {
                    coord,
                    value: v.as_f64(),
                    lower: l.as_f64(),
                    upper: h.as_f64(),
                });
            }
        }
        Ok(())
    }

    fn check_state(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim_x {
            return Err(Error::Dimension {
                expected: self.dim_x,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `g(t, x, u)` after validating `u` against the control box.
    pub fn eval_dynamics(&self, t: T, x: &[T], u: &[T]) -> Result<Vec<T>> {
        self.check_state(x)?;
        self.check_control(u)?;
        let mut out = vec![T::zero(); self.dim_x];
        self.dynamics.eval(t, x, u, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation for inner loops; `u` is assumed admissible.
    #[inline]
    pub fn eval_into(&self, t: T, x: &[T], u: &[T], out: &mut [T]) {
        self.dynamics.eval(t, x, u, out);
    }

    #[inline]
    pub fn jac_x_into(&self, t: T, x: &[T], u: &[T], out: &mut [T]) {
        self.dynamics.jac_x(t, x, u, out);
    }

    #[inline]
    pub fn jac_u_into(&self, t: T, x: &[T], u: &[T], out: &mut [T]) {
        self.dynamics.jac_u(t, x, u, out);
    }

    pub fn jacobian_x(&self, t: T, x: &[T], u: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim_x * self.dim_x];
        self.dynamics.jac_x(t, x, u, &mut out);
        out
    }

    pub fn jacobian_u(&self, t: T, x: &[T], u: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim_x * self.dim_u];
        self.dynamics.jac_u(t, x, u, &mut out);
        out
    }
}

/// `ẋ1 = π x2`, `ẋ2 = −π u x1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Bilinear;

impl<T: Scalar> Dynamics<T> for Bilinear {
    fn eval(&self, _t: T, x: &[T], u: &[T], out: &mut [T]) {
        let pi = T::PI();
        out[0] = pi * x[1];
        out[1] = -pi * u[0] * x[0];
    }

    fn jac_x(&self, _t: T, _x: &[T], u: &[T], out: &mut [T]) {
        let pi = T::PI();
        out[0] = T::zero();
        out[1] = pi;
        out[2] = -pi * u[0];
        out[3] = T::zero();
    }

    fn jac_u(&self, _t: T, x: &[T], _u: &[T], out: &mut [T]) {
        out[0] = T::zero();
        out[1] = -T::PI() * x[0];
    }
}

/// `ẋ1 = x1(1 − |x1|) − x1 x2 + u1`, `ẋ2 = x1⁴ − ½ + u2`.
///
/// The derivative of `|x1|` uses `sign(0) = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Nonlinear;

fn sign0<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Scalar> Dynamics<T> for Nonlinear {
    fn eval(&self, _t: T, x: &[T], u: &[T], out: &mut [T]) {
        let (x1, x2) = (x[0], x[1]);
        out[0] = x1 * (T::one() - x1.abs()) - x1 * x2 + u[0];
        out[1] = x1.powi(4) - T::half() + u[1];
    }

    fn jac_x(&self, _t: T, x: &[T], _u: &[T], out: &mut [T]) {
        let (x1, x2) = (x[0], x[1]);
        // d/dx1 [x1 - x1|x1|] = 1 - 2|x1| (and sign(0) = 0 gives 1 at the kink)
        out[0] = T::one() - x1.abs() - x1 * sign0(x1) - x2;
        out[1] = -x1;
        out[2] = T::lit(4.0) * x1.powi(3);
        out[3] = T::zero();
    }

    fn jac_u(&self, _t: T, _x: &[T], _u: &[T], out: &mut [T]) {
        out[0] = T::one();
        out[1] = T::zero();
        out[2] = T::zero();
        out[3] = T::one();
    }
}

pub const BUILTIN_NAMES: [&str; 2] = ["bilinear", "nonlinear"];

/// Bilinear rotation system: `x0 = (−1, 0)`, `U = [0, 1]`, `[t0, T] = [0, 1]`.
pub fn builtin_bilinear<T: Scalar>() -> ControlSystem<T> {
    ControlSystem::new(
        "bilinear",
        T::zero(),
        T::one(),
        vec![-T::one(), T::zero()],
        vec![T::zero()],
        vec![T::one()],
        Arc::new(Bilinear),
    )
    .expect("valid builtin")
}

/// Nonlinear system with a topology-changing reachable set:
/// `x0 = (0, 0)`, `U = [−1/5, 1/5]²`, `[t0, T] = [0, 3.5]`.
pub fn builtin_nonlinear<T: Scalar>() -> ControlSystem<T> {
    let b = T::lit(0.2);
    ControlSystem::new(
        "nonlinear",
        T::zero(),
        T::lit(3.5),
        vec![T::zero(), T::zero()],
        vec![-b, -b],
        vec![b, b],
        Arc::new(Nonlinear),
    )
    .expect("valid builtin")
}

/// Registry lookup by name.
pub fn builtin<T: Scalar>(name: &str) -> Result<ControlSystem<T>> {
    match name {
        "bilinear" => Ok(builtin_bilinear()),
        "nonlinear" => Ok(builtin_nonlinear()),
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn bilinear_examples() {
        let s = builtin_bilinear::<f64>();
        assert_eq!(
            s.eval_dynamics(0.0, &[-1.0, 0.0], &[0.0]).unwrap(),
            vec![0.0, 0.0]
        );
        let g = s.eval_dynamics(0.0, &[-1.0, 0.0], &[1.0]).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - PI).abs() < 1e-15);
        assert_eq!(s.x0(), &[-1.0, 0.0]);
        assert_eq!((s.u_lower(), s.u_upper()), (&[0.0][..], &[1.0][..]));
        let jx = s.jacobian_x(0.3, &[0.4, -2.0], &[0.25]);
        assert_eq!(jx, vec![0.0, PI, -PI * 0.25, 0.0]);
    }

    #[test]
    fn nonlinear_examples() {
        let s = builtin_nonlinear::<f64>();
        assert_eq!(s.t_final(), 3.5);
        assert_eq!(
            s.eval_dynamics(0.0, &[0.0, 0.0], &[0.0, 0.0]).unwrap(),
            vec![0.0, -0.5]
        );
        assert_eq!(
            s.eval_dynamics(0.0, &[1.0, 0.0], &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.5]
        );
        // d/dx1 (x1(1-|x1|)) at -0.5 = 1 - 2*0.5 = 0
        let jx = s.jacobian_x(0.0, &[-0.5, 0.0], &[0.0, 0.0]);
        assert!(jx[0].abs() < 1e-15);
        let f = |x1: f64| x1 * (1.0 - x1.abs());
        let fd = (f(-0.5 + 1e-6) - f(-0.5 - 1e-6)) / 2e-6;
        assert!((fd - jx[0]).abs() < 1e-8);
        // kink: sign(0) = 0
        assert_eq!(s.jacobian_x(0.0, &[0.0, 0.0], &[0.0, 0.0])[0], 1.0);
    }

    #[test]
    fn control_outside_box_names_coordinate() {
        let s = builtin_nonlinear::<f64>();
        match s.eval_dynamics(0.0, &[0.0, 0.0], &[0.0, 0.3]) {
            Err(Error::ControlOutOfBox { coord, .. }) => assert_eq!(coord, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(builtin_bilinear::<f64>()
            .eval_dynamics(0.0, &[0.0, 0.0], &[-0.1])
            .is_err());
    }

    #[test]
    fn registry() {
        assert_eq!(builtin::<f64>("bilinear").unwrap().name(), "bilinear");
        assert!(matches!(
            builtin::<f64>("duffing"),
            Err(Error::UnknownSystem(_))
        ));
    }

    #[test]
    fn invalid_construction() {
        let dyn_: Arc<dyn Dynamics<f64>> = Arc::new(Bilinear);
        assert!(ControlSystem::new(
            "x",
            1.0,
            1.0,
            vec![0.0; 2],
            vec![0.0],
            vec![1.0],
            dyn_.clone()
        )
        .is_err());
        assert!(
            ControlSystem::new("x", 0.0, 1.0, vec![0.0; 2], vec![2.0], vec![1.0], dyn_).is_err()
        );
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for sys in [builtin_bilinear::<f64>(), builtin_nonlinear()] {
            let (dx, du) = (sys.dim_x(), sys.dim_u());
            for _ in 0..100 {
                let t = rng.gen_range(0.0..sys.t_final());
                let x: Vec<f64> = (0..dx).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let u: Vec<f64> = (0..du)
                    .map(|k| rng.gen_range(sys.u_lower()[k]..=sys.u_upper()[k]))
                    .collect();
                let jx = sys.jacobian_x(t, &x, &u);
                let ju = sys.jacobian_u(t, &x, &u);
                let step = 1e-6;
                for j in 0..dx {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[j] += step;
                    xm[j] -= step;
                    let gp = sys.eval_dynamics(t, &xp, &u).unwrap();
                    let gm = sys.eval_dynamics(t, &xm, &u).unwrap();
                    for i in 0..dx {
                        let fd = (gp[i] - gm[i]) / (2.0 * step);
                        assert!(
                            rel_err(fd, jx[i * dx + j]) < 1e-5,
                            "{}: dg{i}/dx{j}",
                            sys.name()
                        );
                    }
                }
                for j in 0..du {
                    let (mut up, mut um) = (u.clone(), u.clone());
                    up[j] += step;
                    um[j] -= step;
                    let mut gp = vec![0.0; dx];
                    let mut gm = vec![0.0; dx];
                    sys.eval_into(t, &x, &up, &mut gp);
                    sys.eval_into(t, &x, &um, &mut gm);
                    for i in 0..dx {
                        let fd = (gp[i] - gm[i]) / (2.0 * step);
                        assert!(
                            rel_err(fd, ju[i * du + j]) < 1e-5,
                            "{}: dg{i}/du{j}",
                            sys.name()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn evaluation_is_pure() {
        let s = builtin_nonlinear::<f64>();
        let a = s.eval_dynamics(0.1, &[0.3, -0.7], &[0.1, -0.2]).unwrap();
        let b = s.eval_dynamics(0.1, &[0.3, -0.7], &[0.1, -0.2]).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn works_in_single_precision() {
        let s = builtin_bilinear::<f32>();
        let g = s.eval_dynamics(0.0, &[-1.0, 0.0], &[1.0]).unwrap();
        assert!((g[1] - std::f32::consts::PI).abs() < 1e-6);
    }
}
