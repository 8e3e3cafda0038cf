//! Pixel-wise segmentation metrics.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Accuracy, sensitivity, specificity, Dice and Jaccard.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub ac: f64,
    pub se: f64,
    pub sp: f64,
    pub di: f64,
    pub ja: f64,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 5] = ["ac", "se", "sp", "di", "ja"];

    pub fn values(&self) -> [f64; 5] {
        [self.ac, self.se, self.sp, self.di, self.ja]
    }

    pub fn from_values([ac, se, sp, di, ja]: [f64; 5]) -> Self {
        Self { ac, se, sp, di, ja }
    }
}

fn as_bit<T: Real>(v: T, what: &str) -> Result<bool> {
    let v = v.to_f64();
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(Error::InvalidInput(format!(
            "{what} mask holds non-binary value {v}"
        )))
    }
}

pub fn confusion_counts<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::InvalidInput(format!(
            "prediction shape {:?} differs from ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (as_bit(p, "predicted")?, as_bit(g, "ground-truth")?) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Any metric whose denominator is zero is 1.0.
pub fn metrics_from_counts(c: &ConfusionCounts) -> Result<MetricsReport> {
    if c.total() == 0 {
        return Err(Error::InvalidInput("no pixels to score".into()));
    }
    Ok(MetricsReport {
        ac: ratio(c.tp + c.tn, c.total()),
        se: ratio(c.tp, c.tp + c.fn_),
        sp: ratio(c.tn, c.tn + c.fp),
        di: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        ja: ratio(c.tp, c.tp + c.fp + c.fn_),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEvaluation {
    /// Unweighted mean of the per-image reports.
    pub macro_avg: MetricsReport,
    /// Report of the pooled counts.
    pub micro_avg: MetricsReport,
    pub per_image: Vec<MetricsReport>,
    pub counts: Vec<ConfusionCounts>,
}

pub fn evaluate_dataset<T: Real>(pairs: &[(&Tensor<T>, &Tensor<T>)]) -> Result<DatasetEvaluation> {
    if pairs.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let counts = pairs
        .iter()
        .map(|(p, g)| confusion_counts(p, g))
        .collect::<Result<Vec<_>>>()?;
    let per_image = counts
        .iter()
        .map(metrics_from_counts)
        .collect::<Result<Vec<_>>>()?;
    let mut sums = [0.0; 5];
    for r in &per_image {
        for (s, v) in sums.iter_mut().zip(r.values()) {
            *s += v;
        }
    }
    let n = per_image.len() as f64;
    let pooled = counts
        .iter()
        .fold(ConfusionCounts::default(), |a, &b| a + b);
    Ok(DatasetEvaluation {
        macro_avg: MetricsReport::from_values(sums.map(|s| s / n)),
        micro_avg: metrics_from_counts(&pooled)?,
        per_image,
        counts,
    })
}

/// Three decimals with one trailing zero dropped: `0.980 → 0.98`, `1.000 → 1.00`.
pub fn format_value(v: f64) -> String {
    let s = format!("{v:.3}");
    match s.strip_suffix('0') {
        Some(short) => short.to_string(),
        None => s,
    }
}

/// Fixed-width table with columns AC SE SP DI JA, rows in the given order.
pub fn format_report(rows: &[(&str, MetricsReport)]) -> String {
    let width = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = format!("{:<width$}", "Method");
    for name in MetricsReport::NAMES {
        let _ = write!(out, "  {:>5}", name.to_uppercase());
    }
    out.push('\n');
    for (label, r) in rows {
        let _ = write!(out, "{label:<width$}");
        for v in r.values() {
            let _ = write!(out, "  {:>5}", format_value(v));
        }
        out.push('\n');
    }
    out
}

/// One `label.metric=value` line per metric, 6 decimals.
pub fn format_key_values(rows: &[(&str, MetricsReport)]) -> String {
    let mut out = String::new();
    for (label, r) in rows {
        for (name, v) in MetricsReport::NAMES.iter().zip(r.values()) {
            let _ = writeln!(out, "{label}.{name}={v:.6}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use proptest::prelude::*;

    fn mask(shape: &[usize], bits: &[u8]) -> Tensor {
        Tensor::from_vec(shape, bits.iter().map(|&b| b as f32).collect()).unwrap()
    }

    fn random_mask(rng: &mut RngState, s: usize, p: f64) -> Tensor {
        Tensor::from_vec(
            &[s, s, 1],
            (0..s * s)
                .map(|_| (rng.next_f64() < p) as u8 as f32)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn worked_example() {
        let c = confusion_counts(
            &mask(&[2, 2, 1], &[1, 1, 0, 0]),
            &mask(&[2, 2, 1], &[1, 0, 0, 0]),
        )
        .unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                tn: 2,
                fp: 1,
                fn_: 0
            }
        );
        let r = metrics_from_counts(&c).unwrap();
        assert_eq!((r.ac, r.se, r.ja), (0.75, 1.0, 0.5));
        assert!((r.sp - 2.0 / 3.0).abs() < 1e-12 && (r.di - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_inverted() {
        let gt = mask(&[2, 3, 1], &[1, 0, 1, 0, 0, 1]);
        let c = confusion_counts(&gt, &gt).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 3,
                tn: 3,
                fp: 0,
                fn_: 0
            }
        );
        assert_eq!(metrics_from_counts(&c).unwrap().values(), [1.0; 5]);
        let inv = gt.map(|v| 1.0 - v);
        let c = confusion_counts(&inv, &gt).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn empty_masks_are_vacuously_perfect() {
        let z: Tensor = Tensor::zeros(&[4, 4, 1]).unwrap();
        let r = metrics_from_counts(&confusion_counts(&z, &z).unwrap()).unwrap();
        assert_eq!(r.values(), [1.0; 5]);
    }

    #[test]
    fn errors() {
        let a = Tensor::zeros(&[2, 2, 1]).unwrap();
        assert!(matches!(
            confusion_counts(&a, &Tensor::zeros(&[2, 3, 1]).unwrap()),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            confusion_counts(&a, &Tensor::full(&[2, 2, 1], 0.5).unwrap()),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            metrics_from_counts(&ConfusionCounts::default()),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(evaluate_dataset::<f32>(&[]), Err(Error::Data(_))));
    }

    #[test]
    fn single_and_duplicated_pairs() {
        let mut rng = RngState::new(5).unwrap();
        let (p, g) = (random_mask(&mut rng, 8, 0.4), random_mask(&mut rng, 8, 0.4));
        let one = evaluate_dataset(&[(&p, &g)]).unwrap();
        assert_eq!(one.macro_avg, one.per_image[0]);
        assert_eq!(one.micro_avg, one.per_image[0]);
        let two = evaluate_dataset(&[(&p, &g), (&p, &g)]).unwrap();
        assert_eq!(two.micro_avg, one.micro_avg);
        for (a, b) in two.macro_avg.values().iter().zip(one.macro_avg.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn micro_pools_differently_sized_pairs() {
        let mut rng = RngState::new(6).unwrap();
        let (p1, g1) = (random_mask(&mut rng, 4, 0.5), random_mask(&mut rng, 4, 0.5));
        let (p2, g2) = (random_mask(&mut rng, 7, 0.3), random_mask(&mut rng, 7, 0.6));
        let ev = evaluate_dataset(&[(&p1, &g1), (&p2, &g2)]).unwrap();
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for (p, g) in [(&p1, &g1), (&p2, &g2)] {
            for (a, b) in p.data().iter().zip(g.data()) {
                match (*a == 1.0, *b == 1.0) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => tn += 1,
                }
            }
        }
        let total = (tp + fp + fn_ + tn) as f64;
        assert_eq!(ev.micro_avg.ac, (tp + tn) as f64 / total);
        assert_eq!(ev.micro_avg.ja, tp as f64 / (tp + fp + fn_) as f64);
    }

    #[test]
    fn table_row() {
        let r = MetricsReport::from_values([0.98, 0.954, 0.94, 0.96, 0.93]);
        let table = format_report(&[("Proposed", r)]);
        let row = table.lines().nth(1).unwrap();
        let cells: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cells, ["Proposed", "0.98", "0.954", "0.94", "0.96", "0.93"]);
        let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["Method", "AC", "SE", "SP", "DI", "JA"]);
    }

    #[test]
    fn table_all_ones_and_order() {
        let one = MetricsReport::from_values([1.0; 5]);
        let half = MetricsReport::from_values([0.5; 5]);
        let t = format_report(&[("b", one), ("a", half)]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[1].starts_with('b') && lines[2].starts_with('a'));
        assert_eq!(
            lines[1].split_whitespace().skip(1).collect::<Vec<_>>(),
            ["1.00"; 5]
        );
    }

    #[test]
    fn key_values() {
        let r = MetricsReport::from_values([0.75, 1.0, 2.0 / 3.0, 2.0 / 3.0, 0.5]);
        assert_eq!(
            format_key_values(&[("macro", r)]),
            "macro.ac=0.750000\nmacro.se=1.000000\nmacro.sp=0.666667\nmacro.di=0.666667\nmacro.ja=0.500000\n"
        );
    }

    proptest! {
        #[test]
        fn metric_properties(seed in 1u64.., p in 0.0f64..1.0, q in 0.0f64..1.0) {
            let mut rng = RngState::new(seed).unwrap();
            let (a, b) = (random_mask(&mut rng, 16, p), random_mask(&mut rng, 16, q));
            let r = metrics_from_counts(&confusion_counts(&a, &b).unwrap()).unwrap();
            let s = metrics_from_counts(&confusion_counts(&b, &a).unwrap()).unwrap();
            prop_assert!(r.values().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!((r.ac, r.di, r.ja), (s.ac, s.di, s.ja));
            prop_assert!(r.ja <= r.di);
            prop_assert!((r.ja - r.di / (2.0 - r.di)).abs() < 1e-9);
            let c = confusion_counts(&a, &b).unwrap();
            prop_assert_eq!(c.total(), 256);
        }
    }
}
