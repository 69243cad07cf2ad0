//! Cosine similarity and the contrastive objectives used as semantic priors.
//!
//! All losses take raw (not necessarily normalized) query vectors, compare
//! them by cosine similarity and stabilize with log-sum-exp. Gradients with
//! respect to the query are analytic.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Embedding level of the hierarchical encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Low,
    Mid,
    High,
    Language,
}

impl Level {
    pub const IMAGE: [Level; 3] = [Level::Low, Level::Mid, Level::High];

    pub fn name(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Mid => "mid",
            Level::High => "high",
            Level::Language => "language",
        }
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Level::Low),
            "mid" => Ok(Level::Mid),
            "high" => Ok(Level::High),
            "language" => Ok(Level::Language),
            other => Err(Error::invalid(format!("unknown level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Single positive, denominator over negatives only.
    AsPrintedEq1,
    /// Single positive, positive included in the denominator.
    StandardInfonce,
    MultiPositiveEq3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Weights for the low, mid and high image levels.
    pub level_weights: [f64; 3],
    pub variant: Variant,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            level_weights: [0.005, 0.5, 1.0],
            variant: Variant::MultiPositiveEq3,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.temperature)?;
        if self.level_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("level weights must be non-negative"));
        }
        Ok(())
    }

    pub fn weight(&self, level: Level) -> f64 {
        match level {
            Level::Low => self.level_weights[0],
            Level::Mid => self.level_weights[1],
            Level::High => self.level_weights[2],
            Level::Language => 1.0,
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Similarities of `e` to each member plus `d sim / d e` helpers.
struct Sims {
    e_hat: Vec<f64>,
    e_norm: f64,
    members: Vec<Vec<f64>>,
    sims: Vec<f64>,
}

impl Sims {
    fn new(e: &[f64], members: &[&[f64]]) -> Result<Self> {
        let e_norm = norm(e);
        if e_norm == 0.0 || !e_norm.is_finite() {
            return Err(Error::invalid(
                "query embedding must be finite and non-zero",
            ));
        }
        let e_hat: Vec<f64> = e.iter().map(|v| v / e_norm).collect();
        let mut hats = Vec::with_capacity(members.len());
        let mut sims = Vec::with_capacity(members.len());
        for m in members {
            if m.len() != e.len() {
                return Err(Error::dim(format!(
                    "embedding of length {} vs query {}",
                    m.len(),
                    e.len()
                )));
            }
            let n = norm(m);
            if n == 0.0 {
                return Err(Error::invalid("zero vector in embedding set"));
            }
            let hat: Vec<f64> = m.iter().map(|v| v / n).collect();
            sims.push(e_hat.iter().zip(&hat).map(|(a, b)| a * b).sum());
            hats.push(hat);
        }
        Ok(Self {
            e_hat,
            e_norm,
            members: hats,
            sims,
        })
    }

    /// Chain rule from `dL/d sim_k` to `dL/de`.
    fn grad(&self, dsims: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.e_hat.len()];
        for (hat, (&d, &s)) in self.members.iter().zip(dsims.iter().zip(&self.sims)) {
            if d == 0.0 {
                continue;
            }
            for ((gi, h), eh) in g.iter_mut().zip(hat).zip(&self.e_hat) {
                *gi += d * (h - s * eh);
            }
        }
        g.iter_mut().for_each(|v| *v /= self.e_norm);
        g
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs.iter().copied());
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// Loss and gradient for the three variants, sharing one code path:
/// `−LSE(pos/τ) + LSE(denominator/τ)`.
fn contrastive_core(
    e: &[f64],
    positives: &[&[f64]],
    negatives: &[&[f64]],
    tau: f64,
    include_pos_in_denominator: bool,
) -> Result<(f64, Vec<f64>)> {
    check_tau(tau)?;
    if positives.is_empty() {
        return Err(Error::invalid("positive set is empty"));
    }
    if negatives.is_empty() {
        return Err(Error::invalid("negative set is empty"));
    }
    let all: Vec<&[f64]> = positives.iter().chain(negatives).copied().collect();
    let s = Sims::new(e, &all)?;
    let np = positives.len();
    let logits: Vec<f64> = s.sims.iter().map(|v| v / tau).collect();
    let pos = &logits[..np];
    let den: &[f64] = if include_pos_in_denominator {
        &logits
    } else {
        &logits[np..]
    };
    let loss = -log_sum_exp(pos.iter().copied()) + log_sum_exp(den.iter().copied());

    let mut dl = vec![0.0; logits.len()];
    for (d, p) in dl.iter_mut().zip(softmax(pos)) {
        *d -= p / tau;
    }
    let offset = if include_pos_in_denominator { 0 } else { np };
    for (i, q) in softmax(den).into_iter().enumerate() {
        dl[offset + i] += q / tau;
    }
    Ok((loss, s.grad(&dl)))
}

/// Single-positive loss with the negatives-only denominator.
pub fn infonce_as_printed(
    e: &[f64],
    positive: &[f64],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<f64> {
    infonce_as_printed_grad(e, positive, negatives, tau).map(|r| r.0)
}

pub fn infonce_as_printed_grad(
    e: &[f64],
    positive: &[f64],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let negs: Vec<&[f64]> = negatives.iter().map(Vec::as_slice).collect();
    contrastive_core(e, &[positive], &negs, tau, false)
}

/// Canonical InfoNCE: the positive also appears in the denominator.
pub fn infonce_standard(
    e: &[f64],
    positive: &[f64],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<f64> {
    let negs: Vec<&[f64]> = negatives.iter().map(Vec::as_slice).collect();
    contrastive_core(e, &[positive], &negs, tau, true).map(|r| r.0)
}

pub fn multi_positive(
    e: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<f64> {
    multi_positive_grad(e, positives, negatives, tau).map(|r| r.0)
}

pub fn multi_positive_grad(
    e: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let p: Vec<&[f64]> = positives.iter().map(Vec::as_slice).collect();
    let n: Vec<&[f64]> = negatives.iter().map(Vec::as_slice).collect();
    contrastive_core(e, &p, &n, tau, true)
}

/// Positive and negative embeddings at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorPair {
    pub level: Level,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

impl PriorPair {
    pub fn new(level: Level, positives: Vec<Vec<f64>>, negatives: Vec<Vec<f64>>) -> Result<Self> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::invalid("prior sets must be non-empty"));
        }
        let d = positives[0].len();
        if positives.iter().chain(&negatives).any(|v| v.len() != d) {
            return Err(Error::dim("prior embeddings differ in dimension"));
        }
        Ok(Self {
            level,
            positives,
            negatives,
        })
    }

    pub fn dim(&self) -> usize {
        self.positives[0].len()
    }

    /// Loss and query gradient under the given variant. Single-positive
    /// variants use the normalized positive centroid as the positive.
    pub fn loss_grad(&self, e: &[f64], tau: f64, variant: Variant) -> Result<(f64, Vec<f64>)> {
        match variant {
            Variant::MultiPositiveEq3 => {
                multi_positive_grad(e, &self.positives, &self.negatives, tau)
            }
            Variant::AsPrintedEq1 | Variant::StandardInfonce => {
                let c = centroid(&self.positives);
                let negs: Vec<&[f64]> = self.negatives.iter().map(Vec::as_slice).collect();
                contrastive_core(e, &[&c], &negs, tau, variant == Variant::StandardInfonce)
            }
        }
    }
}

/// Mean direction of a set of vectors (not normalized).
pub fn centroid(set: &[Vec<f64>]) -> Vec<f64> {
    let d = set.first().map_or(0, Vec::len);
    let mut c = vec![0.0; d];
    for v in set {
        for (a, b) in c.iter_mut().zip(v) {
            *a += b / set.len() as f64;
        }
    }
    c
}

/// `Σ_level weight · loss(e_level)` over the image levels present in
/// `embeddings`; every level with a non-zero weight needs a prior.
pub fn hierarchical_loss(
    embeddings: &[(Level, Vec<f64>)],
    priors: &[PriorPair],
    cfg: &ContrastiveConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (level, e) in embeddings {
        let w = cfg.weight(*level);
        if w == 0.0 {
            continue;
        }
        let prior = priors
            .iter()
            .find(|p| p.level == *level)
            .ok_or_else(|| Error::invalid(format!("no prior for level {}", level.name())))?;
        total += w * prior.loss_grad(e, cfg.temperature, cfg.variant)?.0;
    }
    Ok(total)
}

struct PriorLossOp {
    grad: Vec<f64>,
}

impl CustomOp for PriorLossOp {
    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        vec![Some(self.grad.iter().map(|g| g * grad[0]).collect())]
    }
}

/// Records the contrastive loss of embedding `e` against `prior` on `tape`.
pub fn prior_loss_on_tape<'a>(
    tape: &mut Tape<'a>,
    e: Var,
    prior: &Arc<PriorPair>,
    tau: f64,
    variant: Variant,
) -> Result<Var> {
    let (loss, grad) = prior.loss_grad(&tape.value(e).data, tau, variant)?;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            reason: "non-finite contrastive loss".into(),
        });
    }
    Ok(tape.custom(&[e], Tensor::scalar(loss), Box::new(PriorLossOp { grad })))
}

/// Batch supervised multi-positive loss: each row is a query whose
/// positives are the other rows with the same label and whose negatives are
/// the rows with a different label. Rows without a positive or negative are
/// skipped. Returns the mean loss and the gradient for every row.
pub fn supervised_contrastive(
    rows: &[Vec<f64>],
    labels: &[usize],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_tau(tau)?;
    if rows.len() != labels.len() {
        return Err(Error::dim("one label per row required"));
    }
    let b = rows.len();
    let norms: Vec<f64> = rows.iter().map(|r| norm(r)).collect();
    if norms.iter().any(|n| !(*n > 0.0) || !n.is_finite()) {
        return Err(Error::invalid("batch rows must be finite and non-zero"));
    }
    let hats: Vec<Vec<f64>> = rows
        .iter()
        .zip(&norms)
        .map(|(r, n)| r.iter().map(|v| v / n).collect())
        .collect();
    let d = rows[0].len();
    let mut sims = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            sims[i * b + j] = hats[i].iter().zip(&hats[j]).map(|(x, y)| x * y).sum();
        }
    }
    // dL/dsim_ij accumulated over anchors
    let mut ds = vec![0.0; b * b];
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..b {
        let pos: Vec<usize> = (0..b)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        let all: Vec<usize> = (0..b).filter(|&j| j != i).collect();
        if pos.is_empty() || pos.len() == all.len() {
            continue;
        }
        let lp: Vec<f64> = pos.iter().map(|&j| sims[i * b + j] / tau).collect();
        let la: Vec<f64> = all.iter().map(|&j| sims[i * b + j] / tau).collect();
        total += -log_sum_exp(lp.iter().copied()) + log_sum_exp(la.iter().copied());
        count += 1;
        for (&j, p) in pos.iter().zip(softmax(&lp)) {
            ds[i * b + j] -= p / tau;
        }
        for (&j, q) in all.iter().zip(softmax(&la)) {
            ds[i * b + j] += q / tau;
        }
    }
    if count == 0 {
        return Err(Error::invalid(
            "batch has no anchor with both positives and negatives",
        ));
    }
    let scale = 1.0 / count as f64;
    let mut grads = vec![vec![0.0; d]; b];
    for i in 0..b {
        // dL/dhat_i = Σ_j (ds_ij + ds_ji) hat_j
        let mut gh = vec![0.0; d];
        for j in 0..b {
            let c = (ds[i * b + j] + ds[j * b + i]) * scale;
            if c != 0.0 {
                for (g, h) in gh.iter_mut().zip(&hats[j]) {
                    *g += c * h;
                }
            }
        }
        let along: f64 = gh.iter().zip(&hats[i]).map(|(a, b)| a * b).sum();
        for ((g, gv), h) in grads[i].iter_mut().zip(&gh).zip(&hats[i]) {
            *g = (gv - along * h) / norms[i];
        }
    }
    Ok((total * scale, grads))
}

struct BatchLossOp {
    grads: Vec<Vec<f64>>,
}

impl CustomOp for BatchLossOp {
    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        self.grads
            .iter()
            .map(|g| Some(g.iter().map(|v| v * grad[0]).collect()))
            .collect()
    }
}

/// [`supervised_contrastive`] over one tape variable per row.
pub fn supervised_contrastive_on_tape<'a>(
    tape: &mut Tape<'a>,
    rows: &[Var],
    labels: &[usize],
    tau: f64,
) -> Result<Var> {
    let values: Vec<Vec<f64>> = rows.iter().map(|v| tape.value(*v).data.clone()).collect();
    let (loss, grads) = supervised_contrastive(&values, labels, tau)?;
    Ok(tape.custom(rows, Tensor::scalar(loss), Box::new(BatchLossOp { grads })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn fd_grad(f: impl Fn(&[f64]) -> f64, e: &[f64], h: f64) -> Vec<f64> {
        (0..e.len())
            .map(|i| {
                let mut p = e.to_vec();
                p[i] += h;
                let mut m = e.to_vec();
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
            .fold(0.0, f64::max)
    }

    #[test]
    fn cosine_anchors() {
        assert!((cosine_sim(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn loss_anchors() {
        let e = [1.0, 0.0];
        // equal similarities, one negative: ratio 1
        let l = infonce_as_printed(&e, &[0.6, 0.8], &[vec![0.6, -0.8]], 0.3).unwrap();
        assert!(l.abs() < 1e-15);
        let l = infonce_as_printed(&e, &[1.0, 0.0], &[vec![0.0, 1.0]], 1.0).unwrap();
        assert!((l + 1.0).abs() < 1e-15);
        let l = multi_positive(&e, &[vec![0.6, 0.8]], &[vec![0.6, -0.8]], 0.07).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let l = multi_positive(&e, &[vec![1.0, 0.0]], &[vec![0.0, 1.0]], 1.0).unwrap();
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!(matches!(
            multi_positive(&e, &[vec![1.0, 0.0]], &[vec![0.0, 1.0]], 0.0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = rand_vec(&mut rng, 6);
        let p: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 6)).collect();
        let n: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, 6)).collect();
        for tau in [0.07, 0.5] {
            let (_, g) = multi_positive_grad(&e, &p, &n, tau).unwrap();
            let fd = fd_grad(|x| multi_positive(x, &p, &n, tau).unwrap(), &e, 1e-6);
            assert!(rel_err(&g, &fd) < 1e-6, "{}", rel_err(&g, &fd));
            let (_, g) = infonce_as_printed_grad(&e, &p[0], &n, tau).unwrap();
            let fd = fd_grad(|x| infonce_as_printed(x, &p[0], &n, tau).unwrap(), &e, 1e-6);
            assert!(rel_err(&g, &fd) < 1e-6);
        }
    }

    #[test]
    fn batch_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..6).map(|_| rand_vec(&mut rng, 5)).collect();
        let labels = [0, 1, 0, 1, 1, 0];
        let (_, grads) = supervised_contrastive(&rows, &labels, 0.1).unwrap();
        for r in 0..rows.len() {
            let fd = fd_grad(
                |x| {
                    let mut rs = rows.clone();
                    rs[r] = x.to_vec();
                    supervised_contrastive(&rs, &labels, 0.1).unwrap().0
                },
                &rows[r],
                1e-6,
            );
            assert!(rel_err(&grads[r], &fd) < 1e-6);
        }
    }

    #[test]
    fn hierarchical_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let priors: Vec<PriorPair> = Level::IMAGE
            .iter()
            .map(|&l| {
                PriorPair::new(
                    l,
                    (0..2).map(|_| rand_vec(&mut rng, 4)).collect(),
                    (0..2).map(|_| rand_vec(&mut rng, 4)).collect(),
                )
                .unwrap()
            })
            .collect();
        let emb: Vec<(Level, Vec<f64>)> = Level::IMAGE
            .iter()
            .map(|&l| (l, rand_vec(&mut rng, 4)))
            .collect();
        let zero = ContrastiveConfig {
            level_weights: [0.0; 3],
            ..Default::default()
        };
        assert_eq!(hierarchical_loss(&emb, &priors, &zero).unwrap(), 0.0);
        let high_only = ContrastiveConfig {
            level_weights: [0.0, 0.0, 1.0],
            ..Default::default()
        };
        let direct =
            multi_positive(&emb[2].1, &priors[2].positives, &priors[2].negatives, 0.07).unwrap();
        assert_eq!(
            hierarchical_loss(&emb, &priors, &high_only).unwrap(),
            direct
        );
        assert!(hierarchical_loss(&emb, &priors[..2], &ContrastiveConfig::default()).is_err());
    }

    #[test]
    fn temperature_sharpening_on_fixture() {
        let e = [1.0, 0.0, 0.0];
        let p = vec![vec![0.9, 0.3, 0.0]];
        let n = vec![vec![0.2, 0.9, 0.1], vec![0.1, 0.2, 0.9]];
        let mut prev = f64::INFINITY;
        for tau in [1.0, 0.5, 0.2, 0.1, 0.07, 0.03] {
            let l = multi_positive(&e, &p, &n, tau).unwrap();
            assert!(l <= prev);
            prev = l;
        }
    }

    proptest! {
        #[test]
        fn positive_rescaling_leaves_losses_unchanged(
            e in proptest::collection::vec(-1.0f64..1.0, 4),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&e) > 1e-3);
            let p = vec![vec![0.3, -0.2, 0.9, 0.1]];
            let n = vec![vec![-0.5, 0.4, 0.1, 0.7], vec![0.2, 0.2, -0.8, 0.3]];
            let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
            let a = multi_positive(&e, &p, &n, 0.07).unwrap();
            let b = multi_positive(&scaled, &p, &n, 0.07).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            prop_assert!(a > 0.0);
        }

        #[test]
        fn monotone_in_similarities(sp in -0.9f64..0.9, sn in -0.9f64..0.9, d in 0.01f64..0.09) {
            let e = [1.0, 0.0];
            let at = |s: f64| vec![s, (1.0 - s * s).sqrt()];
            let base = multi_positive(&e, &[at(sp)], &[at(sn)], 0.07).unwrap();
            let more_pos = multi_positive(&e, &[at(sp + d)], &[at(sn)], 0.07).unwrap();
            let more_neg = multi_positive(&e, &[at(sp)], &[at(sn + d)], 0.07).unwrap();
            prop_assert!(more_pos < base);
            prop_assert!(more_neg > base);
        }
    }
}
