use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::{sigmoid, Tensor};

/// Which embeddings a discriminator compares: `d(left(x), right(y))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePair {
    FF,
    RhoRho,
    PhiPhi,
    PsiPsi,
    PhiPsi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscKind {
    Bilinear,
    Cosine,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant {
    pub pair: FeaturePair,
    pub disc: DiscKind,
}

impl Default for Variant {
    fn default() -> Self {
        Self {
            pair: FeaturePair::PhiPsi,
            disc: DiscKind::Bilinear,
        }
    }
}

impl FeaturePair {
    pub const ALL: [FeaturePair; 5] = [
        FeaturePair::FF,
        FeaturePair::RhoRho,
        FeaturePair::PhiPhi,
        FeaturePair::PsiPsi,
        FeaturePair::PhiPsi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeaturePair::FF => "f_f",
            FeaturePair::RhoRho => "rho_rho",
            FeaturePair::PhiPhi => "phi_phi",
            FeaturePair::PsiPsi => "psi_psi",
            FeaturePair::PhiPsi => "phi_psi",
        }
    }

    /// Widths of the left and right embeddings, in units of `n`.
    pub fn widths(self) -> (usize, usize) {
        match self {
            FeaturePair::FF | FeaturePair::RhoRho => (1, 1),
            FeaturePair::PhiPhi => (2, 2),
            FeaturePair::PsiPsi => (3, 3),
            FeaturePair::PhiPsi => (2, 3),
        }
    }

    pub fn uses_graph(self) -> bool {
        self != FeaturePair::FF
    }
}

impl DiscKind {
    pub const ALL: [DiscKind; 3] = [DiscKind::Bilinear, DiscKind::Cosine, DiscKind::L2];

    pub fn name(self) -> &'static str {
        match self {
            DiscKind::Bilinear => "bilinear",
            DiscKind::Cosine => "cosine",
            DiscKind::L2 => "l2",
        }
    }
}

impl Variant {
    pub fn name(self) -> String {
        format!("{}:{}", self.pair.name(), self.disc.name())
    }

    /// The pair actually compared. Cosine and L2 need equal widths, so the
    /// mixed `phi_psi` pair compares `psi` with `psi` for them.
    pub fn effective_pair(self) -> FeaturePair {
        if self.pair == FeaturePair::PhiPsi && self.disc != DiscKind::Bilinear {
            FeaturePair::PsiPsi
        } else {
            self.pair
        }
    }

    pub fn all() -> Vec<Variant> {
        FeaturePair::ALL
            .iter()
            .flat_map(|&pair| DiscKind::ALL.iter().map(move |&disc| Variant { pair, disc }))
            .collect()
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name()
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    /// `pair:disc`, e.g. `phi_psi:bilinear`; a bare pair means bilinear.
    fn from_str(s: &str) -> Result<Self> {
        let (p, d) = s.split_once(':').unwrap_or((s, "bilinear"));
        let pair = FeaturePair::ALL
            .into_iter()
            .find(|x| x.name() == p)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature pair {p:?}")))?;
        let disc = DiscKind::ALL
            .into_iter()
            .find(|x| x.name() == d)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown discriminator {d:?}")))?;
        Ok(Variant { pair, disc })
    }
}

/// The four learnable `n x n` blocks of the vertex-to-graph discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub m12: Tensor,
    pub m21: Tensor,
    pub m22: Tensor,
    pub m23: Tensor,
}

fn quad(a: &[f64], m: &Tensor, b: &[f64]) -> f64 {
    let q = m.cols();
    a.iter()
        .enumerate()
        .map(|(i, &ai)| ai * m.data()[i * q..(i + 1) * q].iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

impl DiscriminatorParams {
    pub fn n(&self) -> usize {
        self.m12.rows()
    }

    /// `[[0, M12, 0], [M21, M22, M23]]`, `2n x 3n`.
    pub fn assemble(&self) -> Tensor {
        let n = self.n();
        let mut m = Tensor::zeros(&[2 * n, 3 * n]);
        for i in 0..n {
            for j in 0..n {
                m.set(i, n + j, self.m12.get(i, j));
                m.set(n + i, j, self.m21.get(i, j));
                m.set(n + i, n + j, self.m22.get(i, j));
                m.set(n + i, 2 * n + j, self.m23.get(i, j));
            }
        }
        m
    }

    fn check(&self, phi: &[f64], psi: &[f64]) -> Result<usize> {
        let n = self.n();
        if phi.len() != 2 * n || psi.len() != 3 * n {
            return Err(Error::shape(
                "discriminate",
                format!("phi has {} entries, psi has {}, expected {} and {}", phi.len(), psi.len(), 2 * n, 3 * n),
            ));
        }
        Ok(n)
    }

    /// `phi^T M psi` with the assembled matrix.
    pub fn logit_full(&self, phi: &[f64], psi: &[f64]) -> Result<f64> {
        self.check(phi, psi)?;
        Ok(quad(phi, &self.assemble(), psi))
    }

    /// The same logit as four block terms:
    /// `rho_x M12 rho_y + f_x M21 g_y + f_x M22 rho_y + f_x M23 f_y`.
    pub fn logit_blocks(&self, phi: &[f64], psi: &[f64]) -> Result<f64> {
        let n = self.check(phi, psi)?;
        let (rho_x, f_x) = phi.split_at(n);
        let (g_y, rest) = psi.split_at(n);
        let (rho_y, f_y) = rest.split_at(n);
        Ok(quad(rho_x, &self.m12, rho_y) + quad(f_x, &self.m21, g_y) + quad(f_x, &self.m22, rho_y) + quad(f_x, &self.m23, f_y))
    }

    pub fn discriminate(&self, phi: &[f64], psi: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit_blocks(phi, psi)?))
    }
}

/// `(1 + cos(a, b)) / 2`; 0.5 when either vector is zero.
pub fn cosine_score(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 || bb == 0.0 {
        return 0.5;
    }
    // sqrt(aa * aa) == aa exactly, so identical inputs score exactly 1
    (0.5 * (1.0 + dot / (aa * bb).sqrt())).clamp(0.0, 1.0)
}

/// `exp(-||a - b||)`.
pub fn l2_score(a: &[f64], b: &[f64]) -> f64 {
    (-a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    fn random_params(n: usize, seed: u64) -> DiscriminatorParams {
        let mut rng = rng_for(seed, "d");
        let mut m = || Tensor::matrix(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        DiscriminatorParams { m12: m(), m21: m(), m22: m(), m23: m() }
    }

    #[test]
    fn zero_blocks_give_half() {
        let z = Tensor::zeros(&[3, 3]);
        let d = DiscriminatorParams { m12: z.clone(), m21: z.clone(), m22: z.clone(), m23: z };
        assert_eq!(d.discriminate(&[1.0; 6], &[2.0; 9]).unwrap(), 0.5);
    }

    #[test]
    fn assembled_zero_blocks_stay_zero() {
        let d = random_params(3, 1);
        let m = d.assemble();
        for i in 0..3 {
            for j in (0..3).chain(6..9) {
                assert_eq!(m.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn scaling_pushes_toward_extremes() {
        let d = random_params(4, 2);
        let phi: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).sin()).collect();
        let psi: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).cos()).collect();
        let base = d.logit_blocks(&phi, &psi).unwrap();
        let mut last = d.discriminate(&phi, &psi).unwrap();
        for k in [10.0, 100.0, 1000.0] {
            let s = DiscriminatorParams {
                m12: d.m12.scale(k),
                m21: d.m21.scale(k),
                m22: d.m22.scale(k),
                m23: d.m23.scale(k),
            };
            let v = s.discriminate(&phi, &psi).unwrap();
            if base > 0.0 { assert!(v >= last) } else { assert!(v <= last) }
            last = v;
        }
        assert!(!(1e-6..=1.0 - 1e-6).contains(&last));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let d = random_params(2, 3);
        assert!(d.logit_blocks(&[1.0; 4], &[1.0; 5]).unwrap_err().to_string().contains("psi has 5"));
    }

    #[test]
    fn simple_scores() {
        assert_eq!(cosine_score(&[1.0, 2.0], &[1.0, 2.0]), 1.0);
        assert_eq!(l2_score(&[1.0, 2.0], &[1.0, 2.0]), 1.0);
        assert!((cosine_score(&[1.0, 0.0], &[-1.0, 0.0])).abs() < 1e-15);
    }

    #[test]
    fn variant_parsing() {
        let v: Variant = "rho_rho:cosine".parse().unwrap();
        assert_eq!(v, Variant { pair: FeaturePair::RhoRho, disc: DiscKind::Cosine });
        assert_eq!("phi_psi".parse::<Variant>().unwrap(), Variant::default());
        assert!("psi_phi:l2".parse::<Variant>().is_err());
        assert_eq!(Variant::all().len(), 15);
    }
}
