//! Black-box ownership verification.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::collision::{certify, Certificate};
use crate::error::{Error, Result};
use crate::gnn::GnnModel;
use crate::graph::Graph;
use crate::ldde::{ldde_on_pairs, signal_bit};
use crate::tensor::Matrix;
use crate::watermark::{bits_to_string, WatermarkKey, WatermarkRegistry};

/// Default decision threshold on Hamming similarity.
pub const DEFAULT_TAU: f64 = 0.75;

/// Tolerance on a returned probability row summing to one.
const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Fraction of positions where two bit strings agree.
pub fn hms(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Length(format!("bit strings of length {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Length("bit strings are empty".into()));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64)
}

/// Something that answers a graph query with one probability row per node.
pub trait PredictionProvider {
    fn predict(&self, g: &Graph) -> Result<Matrix>;
}

impl PredictionProvider for GnnModel {
    fn predict(&self, g: &Graph) -> Result<Matrix> {
        self.predict_proba(g)
    }
}

impl<P: PredictionProvider + ?Sized> PredictionProvider for &P {
    fn predict(&self, g: &Graph) -> Result<Matrix> {
        (**self).predict(g)
    }
}

/// Wraps a provider and counts the queries that reach it.
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: PredictionProvider> PredictionProvider for CountingProvider<P> {
    fn predict(&self, g: &Graph) -> Result<Matrix> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.predict(g)
    }
}

/// Checks that a provider's answer is one probability row per node.
pub fn validate_probabilities(probs: &Matrix, num_nodes: usize) -> Result<()> {
    if probs.rows() != num_nodes {
        return Err(Error::Protocol(format!("{} probability rows for {num_nodes} nodes", probs.rows())));
    }
    if probs.cols() < 2 {
        return Err(Error::Protocol(format!("{} classes per row; need at least two", probs.cols())));
    }
    for (i, row) in probs.iter_rows().enumerate() {
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Protocol(format!("row {i} holds a negative or non-finite probability")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Protocol(format!("row {i} sums to {total}")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationResult {
    pub is_copy: bool,
    /// Registry id, present exactly when `is_copy`.
    pub matched_id: Option<String>,
    /// The registered bits of the matched entry (never the extracted ones).
    pub matched_bits: Option<Vec<bool>>,
    /// Highest HMS over the registry.
    pub matched_hms: f64,
    pub extracted_bits: Vec<bool>,
    /// HMS against every registry entry, in registry order.
    pub scores: Vec<(String, f64)>,
    pub tau: f64,
    pub certificate: Certificate,
}

/// Queries `provider` once with the trigger graph, reads the key bits and
/// compares them with every registered string.
pub fn verify(
    provider: &dyn PredictionProvider,
    t: &Graph,
    key: &WatermarkKey,
    registry: &WatermarkRegistry,
    tau: f64,
) -> Result<VerificationResult> {
    if registry.is_empty() {
        return Err(Error::Usage("the watermark registry is empty".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
    }
    let strings = registry.watermarks()?;
    if let Some((id, bits)) = strings.iter().find(|(_, b)| b.len() != key.len()) {
        return Err(Error::Length(format!("registry entry `{id}` has {} bits, key has {} edges", bits.len(), key.len())));
    }
    let pairs = key.pairs(t)?;

    let probs = provider.predict(t)?;
    validate_probabilities(&probs, t.num_nodes())?;
    let extracted: Vec<bool> = ldde_on_pairs(&probs, t.features(), &pairs)?.into_iter().map(signal_bit).collect();

    let scores = strings
        .iter()
        .map(|(id, bits)| Ok((id.clone(), hms(&extracted, bits)?)))
        .collect::<Result<Vec<_>>>()?;
    // first entry wins ties
    let best = scores.iter().enumerate().fold(0, |best, (i, s)| if s.1 > scores[best].1 { i } else { best });
    let matched_hms = scores[best].1;
    let is_copy = matched_hms >= tau;
    Ok(VerificationResult {
        is_copy,
        matched_id: is_copy.then(|| scores[best].0.clone()),
        matched_bits: is_copy.then(|| strings[best].1.clone()),
        matched_hms,
        extracted_bits: extracted,
        scores,
        tau,
        certificate: certify(key.len(), tau, registry.all_bernoulli())?,
    })
}

impl VerificationResult {
    /// Plain-text report: decision, threshold, implied collision
    /// probability, extracted bits and the per-entry HMS table.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let decision = match &self.matched_id {
            Some(id) => format!("COPY of distribution `{id}`"),
            None => "not a copy".to_string(),
        };
        let _ = writeln!(s, "decision: {decision}");
        let _ = writeln!(s, "best hms: {:.4}", self.matched_hms);
        let _ = writeln!(s, "tau: {}", self.tau);
        match (self.certificate.alpha, self.certificate.caveat) {
            (Some(a), _) => {
                let _ = writeln!(s, "collision probability at tau: {a:.3e}");
            }
            (None, Some(c)) => {
                let _ = writeln!(s, "collision probability: not certified ({c})");
            }
            (None, None) => {}
        }
        if let Some(bits) = &self.matched_bits {
            let _ = writeln!(s, "registered bits: {}", bits_to_string(bits));
        }
        let _ = writeln!(s, "extracted bits:  {}", bits_to_string(&self.extracted_bits));
        let _ = writeln!(s, "\n| id | hms |\n|---|---|");
        for (id, h) in &self.scores {
            let _ = writeln!(s, "| {id} | {h:.4} |");
        }
        s
    }
}

/// One verified model with its ground truth.
#[derive(Clone, Debug)]
pub struct PopulationEntry {
    /// Distribution id the model was watermarked with; `None` for an
    /// independently trained model.
    pub expected_id: Option<String>,
    pub result: VerificationResult,
}

impl PopulationEntry {
    pub fn correct(&self) -> bool {
        match &self.expected_id {
            Some(id) => self.result.matched_id.as_deref() == Some(id.as_str()),
            None => !self.result.is_copy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PopulationMetrics {
    /// Fraction of all models whose decision (and matched id) is right.
    pub ova: f64,
    /// Fraction of independent models flagged as copies; 0 when there are none.
    pub fpr: f64,
    pub watermarked: usize,
    pub independent: usize,
}

pub fn population_metrics(entries: &[PopulationEntry]) -> Result<PopulationMetrics> {
    if entries.is_empty() {
        return Err(Error::Usage("population is empty".into()));
    }
    let correct = entries.iter().filter(|e| e.correct()).count();
    let independent: Vec<_> = entries.iter().filter(|e| e.expected_id.is_none()).collect();
    let flagged = independent.iter().filter(|e| e.result.is_copy).count();
    Ok(PopulationMetrics {
        ova: correct as f64 / entries.len() as f64,
        fpr: if independent.is_empty() { 0.0 } else { flagged as f64 / independent.len() as f64 },
        watermarked: entries.len() - independent.len(),
        independent: independent.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::row_softmax;
    use crate::gnn::{architecture, LayerKind};
    use crate::graph::generate_er;
    use crate::ldde::ldde_vector;
    use crate::rng::{gaussian_matrix, seeded};
    use crate::watermark::{gen_watermark, BitOrigin, WatermarkString};
    use rand::Rng;

    #[test]
    fn hms_basics() {
        let a = [true, false, true, true];
        let c: Vec<bool> = a.iter().map(|b| !b).collect();
        assert_eq!(hms(&a, &a).unwrap(), 1.0);
        assert_eq!(hms(&a, &c).unwrap(), 0.0);
        assert!(hms(&a, &a[..3]).is_err());
    }

    #[test]
    fn random_pairs_average_half() {
        let mut rng = seeded(5);
        let mut total = 0.0;
        for _ in 0..10_000 {
            let a: Vec<bool> = (0..200).map(|_| rng.random()).collect();
            let b: Vec<bool> = (0..200).map(|_| rng.random()).collect();
            total += hms(&a, &b).unwrap();
        }
        assert!((total / 10_000.0 - 0.5).abs() < 0.01);
    }

    /// Provider returning fixed probabilities.
    struct Fixed(Matrix);

    impl PredictionProvider for Fixed {
        fn predict(&self, _: &Graph) -> Result<Matrix> {
            Ok(self.0.clone())
        }
    }

    fn fixture() -> (Graph, Matrix, WatermarkKey, Vec<bool>) {
        let t = generate_er(30, 0.2, 4, 1).unwrap();
        let probs = row_softmax(&gaussian_matrix(&mut seeded(2), 30, 3));
        let key = WatermarkKey::new(t.name(), (0..t.num_edges()).step_by(3).take(16).collect()).unwrap();
        let v = ldde_vector(&probs, &t).unwrap();
        let bits = key.edge_indices.iter().map(|&i| signal_bit(v.values()[i])).collect();
        (t, probs, key, bits)
    }

    #[test]
    fn registry_match_reports_registered_string() {
        let (t, probs, key, bits) = fixture();
        let mut reg = WatermarkRegistry::new();
        for i in 0..100 {
            let w = if i == 42 { WatermarkString::new(bits.clone()).unwrap() } else { gen_watermark(16, 1000 + i).unwrap() };
            reg.register(format!("{i}"), &w, BitOrigin::Bernoulli, None).unwrap();
        }
        let provider = CountingProvider::new(Fixed(probs));
        let r = verify(&provider, &t, &key, &reg, DEFAULT_TAU).unwrap();
        assert_eq!(provider.calls(), 1);
        assert!(r.is_copy);
        assert_eq!(r.matched_id.as_deref(), Some("42"));
        assert_eq!(r.matched_hms, 1.0);
        assert_eq!(r.matched_bits.as_ref(), Some(&bits));
        assert_eq!(r.scores.len(), 100);
        assert!(r.report().contains("COPY of distribution `42`"));
    }

    #[test]
    fn reports_registered_not_extracted_bits() {
        let (t, probs, key, bits) = fixture();
        let mut near = bits.clone();
        near[0] = !near[0];
        let mut reg = WatermarkRegistry::new();
        reg.register("x", &WatermarkString::new(near.clone()).unwrap(), BitOrigin::Bernoulli, None).unwrap();
        let r = verify(&Fixed(probs), &t, &key, &reg, DEFAULT_TAU).unwrap();
        assert_eq!(r.matched_bits, Some(near));
        assert_eq!(r.extracted_bits, bits);
        assert_eq!(r.matched_hms, 15.0 / 16.0);
    }

    #[test]
    fn negative_and_error_paths() {
        let (t, probs, key, bits) = fixture();
        let flipped: Vec<bool> = bits.iter().map(|b| !b).collect();
        let mut reg = WatermarkRegistry::new();
        reg.register("f", &WatermarkString::new(flipped).unwrap(), BitOrigin::Custom, None).unwrap();
        let r = verify(&Fixed(probs.clone()), &t, &key, &reg, DEFAULT_TAU).unwrap();
        assert!(!r.is_copy && r.matched_id.is_none() && r.matched_bits.is_none());
        assert!(r.certificate.alpha.is_none());

        assert!(matches!(verify(&Fixed(probs.clone()), &t, &key, &WatermarkRegistry::new(), 0.75), Err(Error::Usage(_))));
        let short = probs.select_rows(&[0, 1]);
        assert!(matches!(verify(&Fixed(short), &t, &key, &reg, 0.75), Err(Error::Protocol(_))));
        let mut bad = probs;
        bad.row_mut(3)[0] += 0.5;
        assert!(matches!(verify(&Fixed(bad), &t, &key, &reg, 0.75), Err(Error::Protocol(_))));
    }

    #[test]
    fn in_process_model_provider() {
        let t = generate_er(25, 0.25, 3, 3).unwrap();
        let m = GnnModel::new(&architecture(LayerKind::NormalizedConv, 3, 6, 3, 2), 1).unwrap();
        let key = WatermarkKey::new(t.name(), vec![0, 1, 2, 3, 4, 5, 6, 7]).unwrap();
        let mut reg = WatermarkRegistry::new();
        reg.register("a", &gen_watermark(8, 0).unwrap(), BitOrigin::Bernoulli, None).unwrap();
        let a = verify(&m, &t, &key, &reg, 0.75).unwrap();
        let b = verify(&Fixed(m.predict_proba(&t).unwrap()), &t, &key, &reg, 0.75).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn population_counts() {
        let (t, probs, key, bits) = fixture();
        let mut reg = WatermarkRegistry::new();
        reg.register("w", &WatermarkString::new(bits.clone()).unwrap(), BitOrigin::Bernoulli, None).unwrap();
        let hit = verify(&Fixed(probs), &t, &key, &reg, 0.75).unwrap();
        let mut miss = hit.clone();
        miss.is_copy = false;
        miss.matched_id = None;
        let mut entries = vec![PopulationEntry { expected_id: Some("w".into()), result: hit.clone() }];
        for _ in 0..9 {
            entries.push(PopulationEntry { expected_id: None, result: miss.clone() });
        }
        entries.push(PopulationEntry { expected_id: None, result: hit });
        let m = population_metrics(&entries).unwrap();
        assert!((m.fpr - 0.1).abs() < 1e-15);
        assert!((m.ova - 10.0 / 11.0).abs() < 1e-15);
        assert!(population_metrics(&[]).is_err());
        let all_right = population_metrics(&entries[..10]).unwrap();
        assert_eq!((all_right.ova, all_right.fpr), (1.0, 0.0));
    }
}
