use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_context, check_eligible, BanditError, Decision, DEFAULT_NOISE_VARIANCE, DEFAULT_RIDGE};
use crate::kvtext::{KvCodec, KvDoc, KvError};

pub const PROPENSITY_DRAWS: usize = 1000;

/// Linear-Gaussian Thompson sampling. Each arm's posterior is kept as its
/// precision `ridge*I + X'X/noise` and the sufficient statistic `X'y/noise`.
#[derive(Debug, Clone)]
pub struct TsState {
    pub dim: usize,
    pub ridge: f64,
    pub noise_variance: f64,
    pub precision: Vec<DMatrix<f64>>,
    pub weighted_response: Vec<DVector<f64>>,
    seed: u64,
    rng: ChaCha8Rng,
    /// Decisions made so far; also selects the stream for propensity re-draws.
    draws: u64,
}

impl PartialEq for TsState {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.ridge == other.ridge
            && self.noise_variance == other.noise_variance
            && self.precision == other.precision
            && self.weighted_response == other.weighted_response
            && self.seed == other.seed
            && self.draws == other.draws
            && self.rng.get_word_pos() == other.rng.get_word_pos()
    }
}

struct Posterior {
    mean: DVector<f64>,
    /// Upper factor `L'` with `precision = L L'`.
    upper: DMatrix<f64>,
}

impl TsState {
    pub fn new(n_arms: usize, dim: usize, seed: u64) -> Self {
        Self::with_params(n_arms, dim, DEFAULT_RIDGE, DEFAULT_NOISE_VARIANCE, seed).expect("defaults are valid")
    }

    pub fn with_params(
        n_arms: usize,
        dim: usize,
        ridge: f64,
        noise_variance: f64,
        seed: u64,
    ) -> Result<Self, BanditError> {
        if n_arms == 0 || dim == 0 {
            return Err(BanditError::InvalidParameter("need at least one arm and one dimension".into()));
        }
        if !(ridge > 0.0 && ridge.is_finite()) || !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(BanditError::InvalidParameter("ridge and noise variance must be positive".into()));
        }
        Ok(TsState {
            dim,
            ridge,
            noise_variance,
            precision: vec![DMatrix::identity(dim, dim) * ridge; n_arms],
            weighted_response: vec![DVector::zeros(dim); n_arms],
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
        })
    }

    pub fn n_arms(&self) -> usize {
        self.precision.len()
    }

    pub fn posterior_mean(&self, arm: u32) -> Result<DVector<f64>, BanditError> {
        Ok(self.posterior(arm)?.mean)
    }

    fn posterior(&self, arm: u32) -> Result<Posterior, BanditError> {
        let a = arm as usize;
        let chol = self.precision[a]
            .clone()
            .cholesky()
            .ok_or(BanditError::NotPositiveDefinite(arm))?;
        Ok(Posterior {
            mean: chol.solve(&self.weighted_response[a]),
            upper: chol.l().transpose(),
        })
    }

    fn sample_payoff(post: &Posterior, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> f64 {
        let z = DVector::from_fn(x.len(), |_, _| StandardNormal.sample(rng));
        let noise = post
            .upper
            .solve_upper_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
        x.dot(&(&post.mean + noise))
    }

    fn pick(posteriors: &[(u32, Posterior)], x: &DVector<f64>, rng: &mut ChaCha8Rng) -> u32 {
        let mut best: Option<(u32, f64)> = None;
        for (arm, post) in posteriors {
            let v = Self::sample_payoff(post, x, rng);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((*arm, v));
            }
        }
        best.expect("eligible is nonempty").0
    }

    /// Samples one weight vector per eligible arm and takes the best payoff.
    /// With `estimate_propensity`, the choice probability is estimated from
    /// [`PROPENSITY_DRAWS`] independent re-draws on a side stream, so the
    /// main decision sequence does not depend on the flag.
    pub fn choose(
        &mut self,
        context: &[f64],
        eligible: &[u32],
        estimate_propensity: bool,
    ) -> Result<Decision, BanditError> {
        check_context(context, self.dim)?;
        let arms = check_eligible(eligible, self.n_arms())?;
        let posteriors = arms
            .iter()
            .map(|&a| Ok((a, self.posterior(a)?)))
            .collect::<Result<Vec<_>, BanditError>>()?;
        let x = DVector::from_column_slice(context);
        let arm_id = Self::pick(&posteriors, &x, &mut self.rng);
        self.draws += 1;

        let propensity = estimate_propensity.then(|| {
            let mut side = ChaCha8Rng::seed_from_u64(self.seed);
            side.set_stream(self.draws);
            let hits = (0..PROPENSITY_DRAWS)
                .filter(|_| Self::pick(&posteriors, &x, &mut side) == arm_id)
                .count();
            hits.max(1) as f64 / PROPENSITY_DRAWS as f64
        });
        Ok(Decision {
            arm_id,
            propensity,
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
        self.precision[a] += (&x * x.transpose()) / self.noise_variance;
        self.weighted_response[a] += x * (reward / self.noise_variance);
        Ok(())
    }
}

impl KvCodec for TsState {
    const KIND: &'static str = "thompson";

    fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::with_kind(Self::KIND);
        d.set("dim", self.dim);
        d.set("n_arms", self.n_arms());
        d.set("ridge", self.ridge);
        d.set("noise_variance", self.noise_variance);
        d.set("seed", self.seed);
        d.set("draws", self.draws);
        d.set("word_pos", self.rng.get_word_pos());
        for (i, (p, r)) in self.precision.iter().zip(&self.weighted_response).enumerate() {
            d.set_list(&format!("arm.{i}.precision"), p.transpose().as_slice());
            d.set_list(&format!("arm.{i}.weighted_response"), r.as_slice());
        }
        d
    }

    fn from_kv(doc: &KvDoc) -> Result<Self, KvError> {
        let dim: usize = doc.get("dim")?;
        let n_arms: usize = doc.get("n_arms")?;
        let mut s = TsState::with_params(n_arms, dim, doc.get("ridge")?, doc.get("noise_variance")?, doc.get("seed")?)
            .map_err(|e| KvError::BadValue { key: "ridge".into(), value: e.to_string() })?;
        s.draws = doc.get("draws")?;
        s.rng.set_word_pos(doc.get("word_pos")?);
        for i in 0..n_arms {
            let key = format!("arm.{i}.precision");
            let p: Vec<f64> = doc.get_list(&key)?;
            let r: Vec<f64> = doc.get_list(&format!("arm.{i}.weighted_response"))?;
            if p.len() != dim * dim || r.len() != dim {
                return Err(KvError::BadValue { key, value: format!("{} entries", p.len()) });
            }
            s.precision[i] = DMatrix::from_row_slice(dim, dim, &p);
            s.weighted_response[i] = DVector::from_vec(r);
        }
        Ok(s)
    }
}
