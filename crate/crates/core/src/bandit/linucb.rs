use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_context, check_eligible, BanditError, Decision, DEFAULT_ALPHA, DEFAULT_RIDGE};
use crate::kvtext::{KvCodec, KvDoc, KvError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinUcbState {
    pub dim: usize,
    pub alpha: f64,
    pub ridge: f64,
    pub design: Vec<DMatrix<f64>>,
    pub response: Vec<DVector<f64>>,
}

impl LinUcbState {
    pub fn new(n_arms: usize, dim: usize) -> Self {
        Self::with_params(n_arms, dim, DEFAULT_ALPHA, DEFAULT_RIDGE).expect("defaults are valid")
    }

    pub fn with_params(n_arms: usize, dim: usize, alpha: f64, ridge: f64) -> Result<Self, BanditError> {
        if n_arms == 0 || dim == 0 {
            return Err(BanditError::InvalidParameter("need at least one arm and one dimension".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) || !(ridge > 0.0 && ridge.is_finite()) {
            return Err(BanditError::InvalidParameter("alpha and ridge must be positive".into()));
        }
        Ok(LinUcbState {
            dim,
            alpha,
            ridge,
            design: vec![DMatrix::identity(dim, dim) * ridge; n_arms],
            response: vec![DVector::zeros(dim); n_arms],
        })
    }

    pub fn n_arms(&self) -> usize {
        self.design.len()
    }

    /// `(estimate, width)` for one arm: `x'A^-1 b` and `sqrt(x'A^-1 x)`.
    pub fn score(&self, arm: u32, context: &[f64]) -> Result<(f64, f64), BanditError> {
        check_context(context, self.dim)?;
        let a = arm as usize;
        if a >= self.n_arms() {
            return Err(BanditError::UnknownArm(arm));
        }
        let chol = self.design[a]
            .clone()
            .cholesky()
            .ok_or(BanditError::NotPositiveDefinite(arm))?;
        let x = DVector::from_column_slice(context);
        let theta = chol.solve(&self.response[a]);
        let ax = chol.solve(&x);
        Ok((x.dot(&theta), x.dot(&ax).max(0.0).sqrt()))
    }

    pub fn ucb(&self, arm: u32, context: &[f64]) -> Result<f64, BanditError> {
        let (est, width) = self.score(arm, context)?;
        Ok(est + self.alpha * width)
    }

    pub fn choose(&self, context: &[f64], eligible: &[u32]) -> Result<Decision, BanditError> {
        check_context(context, self.dim)?;
        let arms = check_eligible(eligible, self.n_arms())?;
        let mut best: Option<(u32, f64)> = None;
        for arm in arms {
            let u = self.ucb(arm, context)?;
            if best.is_none_or(|(_, b)| u > b) {
                best = Some((arm, u));
            }
        }
        let (arm_id, _) = best.expect("eligible is nonempty");
        Ok(Decision {
            arm_id,
            propensity: Some(1.0),
            context: context.to_vec(),
        })
    }

    pub fn update(&mut self, decision: &Decision, reward: f64) -> Result<(), BanditError> {
        check_context(&decision.context, self.dim)?;
        let a = decision.arm_id as usize;
        if a >= self.n_arms() {
            return Err(BanditError::UnknownArm(decision.arm_id));
        }
        if !reward.is_finite() {
            return Err(BanditError::NonFinite);
        }
        let x = DVector::from_column_slice(&decision.context);
        self.design[a] += &x * x.transpose();
        self.response[a] += reward * x;
        Ok(())
    }
}

impl KvCodec for LinUcbState {
    const KIND: &'static str = "linucb";

    fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::with_kind(Self::KIND);
        d.set("dim", self.dim);
        d.set("n_arms", self.n_arms());
        d.set("alpha", self.alpha);
        d.set("ridge", self.ridge);
        for (i, (a, b)) in self.design.iter().zip(&self.response).enumerate() {
            d.set_list(&format!("arm.{i}.design"), a.transpose().as_slice());
            d.set_list(&format!("arm.{i}.response"), b.as_slice());
        }
        d
    }

    fn from_kv(doc: &KvDoc) -> Result<Self, KvError> {
        let dim: usize = doc.get("dim")?;
        let n_arms: usize = doc.get("n_arms")?;
        let mut s = LinUcbState::with_params(n_arms, dim, doc.get("alpha")?, doc.get("ridge")?)
            .map_err(|e| KvError::BadValue { key: "alpha".into(), value: e.to_string() })?;
        for i in 0..n_arms {
            let key = format!("arm.{i}.design");
            let a: Vec<f64> = doc.get_list(&key)?;
            let b: Vec<f64> = doc.get_list(&format!("arm.{i}.response"))?;
            if a.len() != dim * dim || b.len() != dim {
                return Err(KvError::BadValue { key, value: format!("{} entries", a.len()) });
            }
            s.design[i] = DMatrix::from_row_slice(dim, dim, &a);
            s.response[i] = DVector::from_vec(b);
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dec(arm: u32, x: &[f64]) -> Decision {
        Decision { arm_id: arm, propensity: Some(1.0), context: x.to_vec() }
    }

    #[test]
    fn fresh_tie_goes_to_lowest_arm() {
        let s = LinUcbState::new(2, 1);
        assert_eq!(s.ucb(0, &[1.0]).unwrap(), 1.0);
        assert_eq!(s.choose(&[1.0], &[1, 0]).unwrap().arm_id, 0);
    }

    #[test]
    fn hand_computed_updates() {
        let mut s = LinUcbState::new(2, 1);
        s.update(&dec(0, &[1.0]), 1.0).unwrap();
        assert_eq!(s.design[0][(0, 0)], 2.0);
        assert_eq!(s.response[0][0], 1.0);
        assert_eq!(s.design[1][(0, 0)], 1.0);
        assert!((s.ucb(0, &[1.0]).unwrap() - (0.5 + 0.5f64.sqrt())).abs() < 1e-12);
        assert_eq!(s.choose(&[1.0], &[0, 1]).unwrap().arm_id, 0);

        let mut s = LinUcbState::new(2, 1);
        s.update(&dec(0, &[1.0]), 0.0).unwrap();
        assert!((s.ucb(0, &[1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.choose(&[1.0], &[0, 1]).unwrap().arm_id, 1);
    }

    #[test]
    fn errors() {
        let s = LinUcbState::new(2, 2);
        assert!(matches!(s.choose(&[1.0], &[0]), Err(BanditError::DimensionMismatch { .. })));
        assert_eq!(s.choose(&[1.0, 0.0], &[]), Err(BanditError::NoEligibleArms));
        assert_eq!(s.choose(&[1.0, 0.0], &[5]), Err(BanditError::UnknownArm(5)));
        assert_eq!(s.choose(&[f64::NAN, 0.0], &[0]), Err(BanditError::NonFinite));
    }

    #[test]
    fn kv_round_trip() {
        let mut s = LinUcbState::new(3, 2);
        s.update(&dec(1, &[1.0, 0.25]), 0.7).unwrap();
        s.update(&dec(2, &[0.5, -1.0]), 0.1).unwrap();
        assert_eq!(LinUcbState::from_kv_text(&s.to_kv_text()).unwrap(), s);
    }

    fn history() -> impl Strategy<Value = Vec<(Vec<f64>, f64)>> {
        proptest::collection::vec((proptest::collection::vec(-2.0f64..2.0, 2), -1.0f64..1.0), 0..25)
    }

    proptest! {
        #[test]
        fn width_never_grows_and_design_stays_pd(h in history(), probe in proptest::collection::vec(-2.0f64..2.0, 2)) {
            let mut s = LinUcbState::new(1, 2);
            let mut last = s.score(0, &probe).unwrap().1;
            for (x, r) in &h {
                s.update(&dec(0, x), *r).unwrap();
                let a = &s.design[0];
                prop_assert!((a - a.transpose()).abs().max() < 1e-12);
                prop_assert!(a.clone().cholesky().is_some());
                let w = s.score(0, &probe).unwrap().1;
                prop_assert!(w <= last + 1e-12);
                last = w;
            }
        }

        #[test]
        fn updates_commute(h in history()) {
            let mut fwd = LinUcbState::new(1, 2);
            let mut rev = LinUcbState::new(1, 2);
            for (x, r) in &h { fwd.update(&dec(0, x), *r).unwrap(); }
            for (x, r) in h.iter().rev() { rev.update(&dec(0, x), *r).unwrap(); }
            prop_assert!((&fwd.design[0] - &rev.design[0]).abs().max() < 1e-9);
            prop_assert!((&fwd.response[0] - &rev.response[0]).abs().max() < 1e-9);
        }

        #[test]
        fn shared_shifted_stream_keeps_argmax(h in history(), c in -3.0f64..3.0, probe in proptest::collection::vec(-2.0f64..2.0, 2)) {
            let mut base = LinUcbState::new(3, 2);
            let mut shifted = LinUcbState::new(3, 2);
            for (x, r) in &h {
                for arm in 0..3 {
                    base.update(&dec(arm, x), *r).unwrap();
                    shifted.update(&dec(arm, x), r + c).unwrap();
                }
            }
            prop_assert_eq!(
                base.choose(&probe, &[0, 1, 2]).unwrap().arm_id,
                shifted.choose(&probe, &[0, 1, 2]).unwrap().arm_id
            );
        }
    }
}
