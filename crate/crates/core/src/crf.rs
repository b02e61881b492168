//! Linear-chain CRF with virtual START/STOP states.
//!
//! Transition scores live in a finite `(K+2)×(K+2)` tensor; structurally
//! forbidden transitions are kept in a separate mask and read as −∞. The
//! mask always forbids entering START and leaving STOP, and for BIO tag
//! sets also forbids every transition that would produce an invalid BIO
//! sequence.

use crate::corpus::Tag;
use crate::error::{Error, Result};
use crate::neural::{log_sum_exp, Tensor};
use crate::vocab::TagSet;

#[derive(Clone, Debug, PartialEq)]
pub struct Crf {
    n_tags: usize,
    allowed: Vec<bool>,
}

impl Crf {
    /// Every tag may follow every tag.
    pub fn unmasked(n_tags: usize) -> Self {
        let size = n_tags + 2;
        let mut allowed = vec![true; size * size];
        for i in 0..size {
            allowed[i * size + n_tags] = false; // into START
            allowed[(n_tags + 1) * size + i] = false; // out of STOP
        }
        Crf { n_tags, allowed }
    }

    /// Masks `O→I-T`, `START→I-T` and `B-U/I-U→I-T` for `U ≠ T`.
    pub fn bio(tagset: &TagSet) -> Self {
        let mut crf = Crf::unmasked(tagset.len());
        let size = crf.size();
        let start = crf.start();
        for (to, tag) in tagset.tags().iter().enumerate() {
            if !matches!(tag, Tag::I(_)) {
                continue;
            }
            crf.allowed[start * size + to] = false;
            for (from, prev) in tagset.tags().iter().enumerate() {
                if !tag.may_follow(Some(prev)) {
                    crf.allowed[from * size + to] = false;
                }
            }
        }
        crf
    }

    pub fn n_tags(&self) -> usize {
        self.n_tags
    }

    pub fn size(&self) -> usize {
        self.n_tags + 2
    }

    pub fn start(&self) -> usize {
        self.n_tags
    }

    pub fn stop(&self) -> usize {
        self.n_tags + 1
    }

    pub fn is_allowed(&self, from: usize, to: usize) -> bool {
        self.allowed[from * self.size() + to]
    }

    pub fn transitions_shape(&self) -> [usize; 2] {
        [self.size(), self.size()]
    }

    #[inline]
    fn t(&self, trans: &[f64], from: usize, to: usize) -> f64 {
        let k = from * self.size() + to;
        if self.allowed[k] {
            trans[k]
        } else {
            f64::NEG_INFINITY
        }
    }

    fn check(&self, trans: &Tensor, em: &[Vec<f64>]) -> Result<()> {
        if em.is_empty() {
            return Err(Error::Input("CRF over an empty sequence".into()));
        }
        if trans.data.len() != self.size() * self.size() {
            return Err(Error::Shape(format!(
                "transitions hold {} values, expected {}",
                trans.data.len(),
                self.size() * self.size()
            )));
        }
        for (t, row) in em.iter().enumerate() {
            if row.len() != self.n_tags {
                return Err(Error::Shape(format!(
                    "emission row {t} has {} scores, expected {}",
                    row.len(),
                    self.n_tags
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("emission row {t}")));
            }
        }
        Ok(())
    }

    /// Score of one tag path, −∞ if it uses a masked transition.
    pub fn path_score(&self, trans: &Tensor, em: &[Vec<f64>], path: &[usize]) -> f64 {
        let tr = &trans.data;
        let mut s = self.t(tr, self.start(), path[0]) + self.t(tr, path[path.len() - 1], self.stop());
        for (t, &y) in path.iter().enumerate() {
            s += em[t][y];
            if t > 0 {
                s += self.t(tr, path[t - 1], y);
            }
        }
        s
    }

    fn forward_alphas(&self, tr: &[f64], em: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.n_tags;
        let mut alphas = Vec::with_capacity(em.len());
        alphas.push((0..k).map(|y| self.t(tr, self.start(), y) + em[0][y]).collect::<Vec<_>>());
        let mut buf = vec![0.0; k];
        for row in &em[1..] {
            let prev = alphas.last().unwrap();
            let next = (0..k)
                .map(|y| {
                    for (yp, b) in buf.iter_mut().enumerate() {
                        *b = prev[yp] + self.t(tr, yp, y);
                    }
                    log_sum_exp(&buf) + row[y]
                })
                .collect();
            alphas.push(next);
        }
        alphas
    }

    fn final_scores(&self, tr: &[f64], last: &[f64]) -> Vec<f64> {
        last.iter().enumerate().map(|(y, a)| a + self.t(tr, y, self.stop())).collect()
    }

    /// log Σ over all unmasked tag paths of exp(path score).
    pub fn log_partition(&self, trans: &Tensor, em: &[Vec<f64>]) -> Result<f64> {
        self.check(trans, em)?;
        let alphas = self.forward_alphas(&trans.data, em);
        Ok(log_sum_exp(&self.final_scores(&trans.data, alphas.last().unwrap())))
    }

    fn check_gold(&self, trans: &Tensor, em: &[Vec<f64>], gold: &[usize]) -> Result<f64> {
        if gold.len() != em.len() {
            return Err(Error::Shape(format!("{} gold tags for {} positions", gold.len(), em.len())));
        }
        if let Some(&y) = gold.iter().find(|&&y| y >= self.n_tags) {
            return Err(Error::Input(format!("gold tag index {y} out of range")));
        }
        let s = self.path_score(trans, em, gold);
        if s == f64::NEG_INFINITY {
            return Err(Error::Input("gold path uses a masked (invalid BIO) transition".into()));
        }
        Ok(s)
    }

    /// Negative log-likelihood of `gold`.
    pub fn nll(&self, trans: &Tensor, em: &[Vec<f64>], gold: &[usize]) -> Result<f64> {
        self.check(trans, em)?;
        let g = self.check_gold(trans, em, gold)?;
        Ok(self.log_partition(trans, em)? - g)
    }

    /// Negative log-likelihood plus its gradient: transition gradients are
    /// accumulated into `d_trans`, emission gradients (marginals minus the
    /// gold one-hot) are returned.
    pub fn nll_backward(
        &self,
        trans: &Tensor,
        em: &[Vec<f64>],
        gold: &[usize],
        d_trans: &mut Tensor,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        self.check(trans, em)?;
        let gold_score = self.check_gold(trans, em, gold)?;
        let tr = &trans.data;
        let (n, k, size) = (em.len(), self.n_tags, self.size());
        let alphas = self.forward_alphas(tr, em);
        let log_z = log_sum_exp(&self.final_scores(tr, &alphas[n - 1]));

        let mut betas = vec![vec![0.0; k]; n];
        betas[n - 1] = (0..k).map(|y| self.t(tr, y, self.stop())).collect();
        let mut buf = vec![0.0; k];
        for t in (0..n - 1).rev() {
            for y in 0..k {
                for (yn, b) in buf.iter_mut().enumerate() {
                    *b = self.t(tr, y, yn) + em[t + 1][yn] + betas[t + 1][yn];
                }
                betas[t][y] = log_sum_exp(&buf);
            }
        }

        let dt = &mut d_trans.data;
        let mut d_em = vec![vec![0.0; k]; n];
        for t in 0..n {
            for y in 0..k {
                d_em[t][y] = (alphas[t][y] + betas[t][y] - log_z).exp();
            }
            d_em[t][gold[t]] -= 1.0;
        }
        for y in 0..k {
            dt[self.start() * size + y] += d_em[0][y];
            dt[y * size + self.stop()] += d_em[n - 1][y];
        }
        for t in 0..n - 1 {
            for y in 0..k {
                if alphas[t][y] == f64::NEG_INFINITY {
                    continue;
                }
                for yn in 0..k {
                    if !self.is_allowed(y, yn) {
                        continue;
                    }
                    let p = (alphas[t][y] + tr[y * size + yn] + em[t + 1][yn] + betas[t + 1][yn] - log_z).exp();
                    dt[y * size + yn] += p;
                }
            }
            dt[gold[t] * size + gold[t + 1]] -= 1.0;
        }
        Ok((log_z - gold_score, d_em))
    }

    /// Highest-scoring unmasked path. Ties go to the lowest tag index at
    /// every backpointer and at the final position.
    pub fn viterbi(&self, trans: &Tensor, em: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
        self.check(trans, em)?;
        let tr = &trans.data;
        let (n, k) = (em.len(), self.n_tags);
        let mut delta: Vec<f64> = (0..k).map(|y| self.t(tr, self.start(), y) + em[0][y]).collect();
        let mut back = vec![vec![0usize; k]; n];
        for t in 1..n {
            let mut next = vec![f64::NEG_INFINITY; k];
            for y in 0..k {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for (yp, d) in delta.iter().enumerate() {
                    let s = d + self.t(tr, yp, y);
                    if s > best {
                        best = s;
                        arg = yp;
                    }
                }
                next[y] = best + em[t][y];
                back[t][y] = arg;
            }
            delta = next;
        }
        let fin = self.final_scores(tr, &delta);
        let mut best = f64::NEG_INFINITY;
        let mut last = 0;
        for (y, s) in fin.iter().enumerate() {
            if *s > best {
                best = *s;
                last = y;
            }
        }
        if best == f64::NEG_INFINITY {
            return Err(Error::Input("no unmasked tag path".into()));
        }
        let mut path = vec![last; n];
        for t in (1..n).rev() {
            path[t - 1] = back[t][path[t]];
        }
        Ok((path, best))
    }
}

/// A CRF structure bundled with its transition scores.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    pub crf: Crf,
    pub transitions: Tensor,
}

impl CrfParams {
    pub fn zeros(crf: Crf) -> Self {
        let transitions = Tensor::zeros(&crf.transitions_shape());
        CrfParams { crf, transitions }
    }

    /// The transition matrix with masked entries set to −∞.
    pub fn masked_matrix(&self) -> Vec<Vec<f64>> {
        let size = self.crf.size();
        (0..size).map(|i| (0..size).map(|j| self.crf.t(&self.transitions.data, i, j)).collect()).collect()
    }

    pub fn log_partition(&self, em: &[Vec<f64>]) -> Result<f64> {
        self.crf.log_partition(&self.transitions, em)
    }

    pub fn nll(&self, em: &[Vec<f64>], gold: &[usize]) -> Result<f64> {
        self.crf.nll(&self.transitions, em, gold)
    }

    pub fn viterbi(&self, em: &[Vec<f64>]) -> Result<Vec<usize>> {
        Ok(self.crf.viterbi(&self.transitions, em)?.0)
    }

    pub fn path_score(&self, em: &[Vec<f64>], path: &[usize]) -> f64 {
        self.crf.path_score(&self.transitions, em, path)
    }
}
