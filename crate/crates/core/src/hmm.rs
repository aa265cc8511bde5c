//! Temporal decoding of window posteriors with a first-order HMM.
//!
//! `π` and `ψ` come from smoothed counts over labeled window sequences.
//! Emissions are scaled likelihoods `P(a|x) / P(a)` built from network
//! posteriors, and decoding is log-space Viterbi. Log-probabilities of
//! impossible events are [`LOG_ZERO`].

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::dbn::{argmax, DbnModel};
use crate::ingest::Origin;
use crate::{Error, Result};

/// Log of probability zero.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// Laplace smoothing used unless configured otherwise.
pub const DEFAULT_SMOOTHING: f64 = 1.0;

const FILE_HEADER: &str = "deepact-hmm";
const FILE_VERSION: u32 = 1;
const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    pub pi: Array1<f64>,
    /// Row `i` holds `P(next | previous = i)`.
    pub psi: Array2<f64>,
    pub class_labels: Vec<String>,
    pub class_priors: Array1<f64>,
}

fn check_sequences(sequences: &[Vec<usize>], m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Invalid("an HMM needs at least one state".into()));
    }
    if let Some(bad) = sequences.iter().flatten().find(|&&l| l >= m) {
        return Err(Error::Invalid(format!("label {bad} outside {m} states")));
    }
    Ok(())
}

fn check_smoothing(eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!("smoothing must be a finite value >= 0, got {eps}")));
    }
    Ok(())
}

fn normalize_counts(counts: &[f64], eps: f64, what: &str) -> Result<Array1<f64>> {
    let total: f64 = counts.iter().sum::<f64>() + eps * counts.len() as f64;
    if total <= 0.0 {
        return Err(Error::Invalid(format!("no {what} observed and smoothing is zero")));
    }
    Ok(counts.iter().map(|c| (c + eps) / total).collect())
}

/// `(count_i + ε) / (Σ counts + Mε)` over first labels of non-empty sequences.
pub fn estimate_prior(sequences: &[Vec<usize>], m: usize, eps: f64) -> Result<Array1<f64>> {
    check_smoothing(eps)?;
    check_sequences(sequences, m)?;
    let mut counts = vec![0.0; m];
    let mut any = false;
    for s in sequences {
        if let Some(&first) = s.first() {
            counts[first] += 1.0;
            any = true;
        }
    }
    if !any {
        return Err(Error::Invalid("prior estimation needs a non-empty sequence".into()));
    }
    normalize_counts(&counts, eps, "start states")
}

/// Row-normalized smoothed bigram counts.
pub fn estimate_transitions(sequences: &[Vec<usize>], m: usize, eps: f64) -> Result<Array2<f64>> {
    check_smoothing(eps)?;
    check_sequences(sequences, m)?;
    let mut counts = Array2::<f64>::zeros((m, m));
    for s in sequences {
        for pair in s.windows(2) {
            counts[[pair[0], pair[1]]] += 1.0;
        }
    }
    let mut psi = Array2::zeros((m, m));
    for (i, row) in counts.rows().into_iter().enumerate() {
        let row = normalize_counts(row.as_slice().expect("standard layout"), eps, "transitions")
            .map_err(|_| Error::Invalid(format!("no transitions out of state {i} and smoothing is zero")))?;
        psi.row_mut(i).assign(&row);
    }
    Ok(psi)
}

/// Smoothed relative frequency of every label in the sequences.
pub fn estimate_class_priors(sequences: &[Vec<usize>], m: usize, eps: f64) -> Result<Array1<f64>> {
    check_smoothing(eps)?;
    check_sequences(sequences, m)?;
    let mut counts = vec![0.0; m];
    for &l in sequences.iter().flatten() {
        counts[l] += 1.0;
    }
    normalize_counts(&counts, eps, "labels")
}

impl HmmModel {
    /// Supervised estimate of `π`, `ψ` and class priors from label sequences.
    pub fn estimate(sequences: &[Vec<usize>], class_labels: Vec<String>, eps: f64) -> Result<Self> {
        let m = class_labels.len();
        let model = Self {
            pi: estimate_prior(sequences, m, eps)?,
            psi: estimate_transitions(sequences, m, eps)?,
            class_priors: estimate_class_priors(sequences, m, eps)?,
            class_labels,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn states(&self) -> usize {
        self.class_labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.states();
        if m == 0 {
            return Err(Error::Invalid("an HMM needs at least one state".into()));
        }
        if self.pi.len() != m || self.class_priors.len() != m {
            return Err(Error::dim(m, self.pi.len(), "HMM prior length"));
        }
        if self.psi.dim() != (m, m) {
            return Err(Error::dim(m, self.psi.nrows(), "HMM transition matrix"));
        }
        let stochastic = |v: ndarray::ArrayView1<f64>| {
            v.iter().all(|p| p.is_finite() && *p >= 0.0) && (v.sum() - 1.0).abs() < SIMPLEX_TOLERANCE
        };
        if !stochastic(self.pi.view()) {
            return Err(Error::Invalid("π is not a probability vector".into()));
        }
        for (i, row) in self.psi.rows().into_iter().enumerate() {
            if !stochastic(row) {
                return Err(Error::Invalid(format!("ψ row {i} is not a probability vector")));
            }
        }
        if self.class_priors.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::Invalid("class priors must be strictly positive".into()));
        }
        Ok(())
    }

    fn log_params(&self) -> (Array1<f64>, Array2<f64>) {
        (self.pi.mapv(f64::ln), self.psi.mapv(f64::ln))
    }
}

/// `score_i(t) = P(a_i | x_t) / P(a_i)` for `T × M` posteriors.
pub fn emission_scores(posteriors: ArrayView2<f64>, class_priors: &Array1<f64>) -> Result<Array2<f64>> {
    if posteriors.ncols() != class_priors.len() {
        return Err(Error::dim(class_priors.len(), posteriors.ncols(), "posterior width"));
    }
    if class_priors.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Invalid("class priors must be strictly positive".into()));
    }
    for (t, row) in posteriors.rows().into_iter().enumerate() {
        if row.iter().any(|p| !(*p >= 0.0)) || (row.sum() - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Invalid(format!("posterior {t} is not a probability vector")));
        }
    }
    Ok(&posteriors / &class_priors.view().insert_axis(Axis(0)))
}

fn check_scores(scores: ArrayView2<f64>, m: usize) -> Result<()> {
    if scores.ncols() != m {
        return Err(Error::dim(m, scores.ncols(), "score vector length"));
    }
    for (t, row) in scores.rows().into_iter().enumerate() {
        if row.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Invalid(format!("score vector {t} has negative or non-finite entries")));
        }
        if row.iter().all(|s| *s == 0.0) {
            return Err(Error::Invalid(format!("score vector {t} is all zeros")));
        }
    }
    Ok(())
}

/// Most probable state path for `T × M` scores. Ties go to the lower state
/// index, both when choosing predecessors and the final state.
pub fn viterbi(scores: ArrayView2<f64>, model: &HmmModel) -> Result<Vec<usize>> {
    model.validate()?;
    let m = model.states();
    check_scores(scores, m)?;
    let t_len = scores.nrows();
    if t_len == 0 {
        return Err(Error::Invalid("cannot decode an empty sequence".into()));
    }
    let (log_pi, log_psi) = model.log_params();
    let log_s = scores.mapv(f64::ln);

    let mut delta: Vec<f64> = (0..m).map(|i| log_pi[i] + log_s[[0, i]]).collect();
    let mut back = vec![0usize; t_len * m];
    let mut next = vec![0.0; m];
    for t in 1..t_len {
        for j in 0..m {
            let mut best = 0;
            let mut best_v = delta[0] + log_psi[[0, j]];
            for i in 1..m {
                let v = delta[i] + log_psi[[i, j]];
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            back[t * m + j] = best;
            next[j] = best_v + log_s[[t, j]];
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut state = argmax(ndarray::ArrayView1::from(&delta[..]));
    let mut path = vec![0; t_len];
    for t in (0..t_len).rev() {
        path[t] = state;
        state = back[t * m + state];
    }
    Ok(path)
}

fn check_path(path: &[usize], scores: ArrayView2<f64>, model: &HmmModel) -> Result<()> {
    if path.len() != scores.nrows() {
        return Err(Error::dim(scores.nrows(), path.len(), "path length"));
    }
    if path.is_empty() {
        return Err(Error::Invalid("empty path".into()));
    }
    if scores.ncols() != model.states() {
        return Err(Error::dim(model.states(), scores.ncols(), "score vector length"));
    }
    if let Some(bad) = path.iter().find(|&&s| s >= model.states()) {
        return Err(Error::Invalid(format!("state {bad} outside {} states", model.states())));
    }
    Ok(())
}

/// `ln(π(y₁) s₁(y₁) Π ψ(y_t|y_{t−1}) s_t(y_t))` as one product. The running
/// product is rescaled by powers of two so long paths do not underflow.
pub fn joint_log_direct(path: &[usize], scores: ArrayView2<f64>, model: &HmmModel) -> Result<f64> {
    check_path(path, scores, model)?;
    const SHIFT: i32 = 512;
    let (lo, hi) = (2f64.powi(-SHIFT), 2f64.powi(SHIFT));
    let mut mantissa = 1.0;
    let mut exponent = 0i64;
    let mut factor = |f: f64| {
        mantissa *= f;
        while mantissa != 0.0 && mantissa < lo {
            mantissa *= hi;
            exponent -= SHIFT as i64;
        }
        while mantissa > hi {
            mantissa *= lo;
            exponent += SHIFT as i64;
        }
    };
    factor(model.pi[path[0]]);
    factor(scores[[0, path[0]]]);
    for t in 1..path.len() {
        factor(model.psi[[path[t - 1], path[t]]]);
        factor(scores[[t, path[t]]]);
    }
    if mantissa == 0.0 {
        return Ok(LOG_ZERO);
    }
    Ok(mantissa.ln() + exponent as f64 * std::f64::consts::LN_2)
}

/// The same joint score accumulated step by step in log space:
/// `ℓ_t = ℓ_{t−1} + ln ψ(y_t|y_{t−1}) + ln s_t(y_t)`.
pub fn joint_log_recursive(path: &[usize], scores: ArrayView2<f64>, model: &HmmModel) -> Result<f64> {
    check_path(path, scores, model)?;
    let mut acc = model.pi[path[0]].ln() + scores[[0, path[0]]].ln();
    for t in 1..path.len() {
        if acc == LOG_ZERO {
            return Ok(LOG_ZERO);
        }
        acc += model.psi[[path[t - 1], path[t]]].ln() + scores[[t, path[t]]].ln();
    }
    Ok(acc)
}

/// Log joint score of a path, computed both ways. Fails if the two
/// disagree, which would point at a numerical problem in the inputs.
pub fn joint_probability(path: &[usize], scores: ArrayView2<f64>, model: &HmmModel) -> Result<f64> {
    let direct = joint_log_direct(path, scores, model)?;
    let recursive = joint_log_recursive(path, scores, model)?;
    let agree = (direct == LOG_ZERO && recursive == LOG_ZERO)
        || (direct - recursive).abs() <= 1e-9 * direct.abs().max(recursive.abs()).max(1.0);
    if !agree {
        return Err(Error::Invalid(format!(
            "direct ({direct}) and recursive ({recursive}) joint scores disagree"
        )));
    }
    Ok(recursive)
}

/// Splits ordered windows into runs of one recording, breaking wherever the
/// stream changes or the next start is not `stride` samples later.
pub fn adjacent_runs(origins: &[Origin], stride: u64) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=origins.len() {
        let breaks = i == origins.len()
            || origins[i].stream != origins[i - 1].stream
            || origins[i].start != origins[i - 1].start + stride;
        if breaks {
            runs.push(start..i);
            start = i;
        }
    }
    if origins.is_empty() {
        runs.clear();
    }
    runs
}

/// Runs of consecutive windows from the same recording, gaps allowed.
pub fn stream_segments(origins: &[Origin]) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=origins.len() {
        if i == origins.len() || origins[i].stream != origins[i - 1].stream {
            runs.push(start..i);
            start = i;
        }
    }
    if origins.is_empty() {
        runs.clear();
    }
    runs
}

/// Label sequences for estimation: windows must be adjacent and labeled.
pub fn label_sequences(origins: &[Origin], labels: &[Option<usize>], stride: u64) -> Result<Vec<Vec<usize>>> {
    if origins.len() != labels.len() {
        return Err(Error::dim(origins.len(), labels.len(), "label count"));
    }
    let mut out = Vec::new();
    for run in adjacent_runs(origins, stride) {
        let mut current = Vec::new();
        for l in &labels[run] {
            match l {
                Some(l) => current.push(*l),
                None if current.is_empty() => {}
                None => out.push(std::mem::take(&mut current)),
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecodeOptions {
    /// Divide posteriors by a uniform prior instead of the class priors.
    pub uniform_priors: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDecode {
    /// Row range of the segment in the feature matrix.
    pub rows: Range<usize>,
    pub framewise: Vec<usize>,
    pub viterbi: Vec<usize>,
}

/// Posteriors, emissions and Viterbi per segment. `features` must already be
/// standardized the way the network expects.
pub fn decode_dataset(
    features: ArrayView2<f64>,
    dbn: &DbnModel,
    hmm: &HmmModel,
    segments: &[Range<usize>],
    opts: DecodeOptions,
) -> Result<Vec<SegmentDecode>> {
    if dbn.class_labels != hmm.class_labels {
        return Err(Error::Invalid(format!(
            "class labels differ between network {:?} and HMM {:?}",
            dbn.class_labels, hmm.class_labels
        )));
    }
    hmm.validate()?;
    let m = hmm.states();
    let priors = if opts.uniform_priors {
        Array1::from_elem(m, 1.0 / m as f64)
    } else {
        hmm.class_priors.clone()
    };
    let mut out = Vec::with_capacity(segments.len());
    for seg in segments {
        if seg.is_empty() || seg.end > features.nrows() {
            return Err(Error::Invalid(format!("segment {seg:?} outside {} rows", features.nrows())));
        }
        let post = dbn.posterior_batch(features.slice(ndarray::s![seg.clone(), ..]))?;
        let framewise = post.rows().into_iter().map(argmax).collect();
        let scores = emission_scores(post.view(), &priors)?;
        out.push(SegmentDecode {
            rows: seg.clone(),
            framewise,
            viterbi: viterbi(scores.view(), hmm)?,
        });
    }
    Ok(out)
}

fn write_row(out: &mut String, key: &str, values: impl IntoIterator<Item = f64>) {
    out.push_str(key);
    for v in values {
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

/// Versioned text form; floats are written with round-trip precision.
pub fn encode_hmm(model: &HmmModel) -> Result<String> {
    model.validate()?;
    let mut out = format!("{FILE_HEADER} {FILE_VERSION}\nclasses {}\n", model.states());
    for label in &model.class_labels {
        if label.contains('\n') {
            return Err(Error::Invalid("class labels cannot contain newlines".into()));
        }
        let _ = writeln!(out, "label {label}");
    }
    write_row(&mut out, "pi", model.pi.iter().copied());
    for row in model.psi.rows() {
        write_row(&mut out, "psi", row.iter().copied());
    }
    write_row(&mut out, "priors", model.class_priors.iter().copied());
    Ok(out)
}

pub fn decode_hmm(text: &str) -> Result<HmmModel> {
    let mut lines = text.lines().enumerate();
    let mut next = |key: &str| -> Result<(usize, String)> {
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing `{key}` line")))?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| if r.is_empty() { Some(r) } else { r.strip_prefix(' ') })
            .ok_or_else(|| Error::Format(format!("line {}: expected `{key}`", no + 1)))?;
        Ok((no + 1, rest.to_string()))
    };
    let (_, version) = next(FILE_HEADER)?;
    if version.trim() != FILE_VERSION.to_string() {
        return Err(Error::Format(format!(
            "schema version {} is not supported (expected {FILE_VERSION})",
            version.trim()
        )));
    }
    let (no, m) = next("classes")?;
    let m: usize = m
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {no}: bad class count")))?;
    let mut class_labels = Vec::with_capacity(m);
    for _ in 0..m {
        class_labels.push(next("label")?.1);
    }
    let floats = |no: usize, s: &str| -> Result<Vec<f64>> {
        let v: Vec<f64> = s
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Format(format!("line {no}: bad number")))?;
        if v.len() != m {
            return Err(Error::Format(format!("line {no}: expected {m} values, found {}", v.len())));
        }
        Ok(v)
    };
    let (no, pi) = next("pi")?;
    let pi = floats(no, &pi)?;
    let mut psi = Vec::with_capacity(m * m);
    for _ in 0..m {
        let (no, row) = next("psi")?;
        psi.extend(floats(no, &row)?);
    }
    let (no, priors) = next("priors")?;
    let class_priors = floats(no, &priors)?;
    if let Some((no, line)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::Format(format!("line {}: unexpected `{line}`", no + 1)));
    }
    let model = HmmModel {
        pi: Array1::from(pi),
        psi: Array2::from_shape_vec((m, m), psi).expect("shape matches"),
        class_labels,
        class_priors: Array1::from(class_priors),
    };
    model.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(model)
}

pub fn save_hmm(model: &HmmModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_hmm(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_hmm(path: &Path) -> Result<HmmModel> {
    decode_hmm(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::StreamId;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("s{i}")).collect()
    }

    fn random_simplex<R: Rng>(rng: &mut R, m: usize) -> Array1<f64> {
        let v: Array1<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s = v.sum();
        v / s
    }

    fn random_model<R: Rng>(rng: &mut R, m: usize) -> HmmModel {
        let mut psi = Array2::zeros((m, m));
        for i in 0..m {
            psi.row_mut(i).assign(&random_simplex(rng, m));
        }
        HmmModel {
            pi: random_simplex(rng, m),
            psi,
            class_labels: names(m),
            class_priors: random_simplex(rng, m),
        }
    }

    fn brute_force(scores: ArrayView2<f64>, model: &HmmModel) -> (f64, Vec<usize>) {
        let (t_len, m) = scores.dim();
        let mut best = (f64::NEG_INFINITY, vec![]);
        for code in 0..m.pow(t_len as u32) {
            let mut c = code;
            let mut path = vec![0; t_len];
            for t in (0..t_len).rev() {
                path[t] = c % m;
                c /= m;
            }
            let mut v = model.pi[path[0]] * scores[[0, path[0]]];
            for t in 1..t_len {
                v *= model.psi[[path[t - 1], path[t]]] * scores[[t, path[t]]];
            }
            if v > best.0 {
                best = (v, path);
            }
        }
        best
    }

    #[test]
    fn prior_examples() {
        let p = estimate_prior(&[vec![0, 1], vec![0]], 3, 0.0).unwrap();
        assert_eq!(p, array![1.0, 0.0, 0.0]);
        let p = estimate_prior(&[vec![0], vec![1]], 2, 0.0).unwrap();
        assert_eq!(p, array![0.5, 0.5]);
        assert!(estimate_prior(&[], 2, 1.0).is_err());
        assert!(estimate_prior(&[vec![]], 2, 1.0).is_err());
        assert!(estimate_prior(&[vec![3]], 2, 1.0).is_err());
        assert!(estimate_prior(&[vec![0]], 2, -1.0).is_err());
    }

    #[test]
    fn transition_examples() {
        let seq = [vec![0, 0, 1]];
        let psi = estimate_transitions(&seq, 2, 1.0).unwrap();
        assert_eq!(psi.row(0), array![2.0 / 4.0, 2.0 / 4.0]);
        assert_eq!(psi.row(1), array![0.5, 0.5]);
        // Row b has no outgoing transitions.
        assert!(estimate_transitions(&seq, 2, 0.0).is_err());
        let psi = estimate_transitions(&[vec![0, 0, 1, 1]], 2, 0.0).unwrap();
        assert_eq!(psi.row(0), array![0.5, 0.5]);
        assert_eq!(psi.row(1), array![0.0, 1.0]);

        let wide = estimate_transitions(&[vec![0, 0, 0, 1]], 2, 1e12).unwrap();
        assert!(wide.iter().all(|p| (p - 0.5).abs() < 1e-9));

        let sticky = estimate_transitions(&[vec![0; 5000], vec![1; 5000], vec![2; 5000]], 3, 1.0).unwrap();
        for i in 0..3 {
            assert!(sticky[[i, i]] > 0.999);
        }
    }

    #[test]
    fn emission_examples() {
        let s = emission_scores(array![[0.9, 0.1]].view(), &array![0.5, 0.5]).unwrap();
        assert!((s[[0, 0]] - 1.8).abs() < 1e-15 && (s[[0, 1]] - 0.2).abs() < 1e-15);
        let priors = array![0.2, 0.3, 0.5];
        let s = emission_scores(priors.view().insert_axis(Axis(0)), &priors).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(emission_scores(array![[0.5, 0.5]].view(), &array![0.0, 1.0]).is_err());
        assert!(emission_scores(array![[0.7, 0.7]].view(), &array![0.5, 0.5]).is_err());
        assert!(emission_scores(array![[1.0]].view(), &array![0.5, 0.5]).is_err());
    }

    #[test]
    fn viterbi_examples() {
        let one = HmmModel {
            pi: array![1.0],
            psi: array![[1.0]],
            class_labels: names(1),
            class_priors: array![1.0],
        };
        assert_eq!(viterbi(Array2::from_elem((4, 1), 0.3).view(), &one).unwrap(), vec![0; 4]);

        let absorbing = HmmModel {
            pi: array![0.0, 1.0, 0.0],
            psi: Array2::eye(3),
            class_labels: names(3),
            class_priors: array![1.0, 1.0, 1.0] / 3.0,
        };
        assert_eq!(viterbi(Array2::ones((6, 3)).view(), &absorbing).unwrap(), vec![1; 6]);

        let mut zero_col = Array2::ones((3, 3));
        zero_col.row_mut(1).fill(0.0);
        assert!(viterbi(zero_col.view(), &absorbing).is_err());
        assert!(viterbi(Array2::ones((0, 3)).view(), &absorbing).is_err());
        assert!(viterbi(Array2::ones((2, 2)).view(), &absorbing).is_err());
    }

    #[test]
    fn viterbi_ties_go_low() {
        let m = HmmModel {
            pi: array![0.5, 0.5],
            psi: array![[0.5, 0.5], [0.5, 0.5]],
            class_labels: names(2),
            class_priors: array![0.5, 0.5],
        };
        assert_eq!(viterbi(Array2::ones((3, 2)).view(), &m).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn viterbi_matches_exhaustive_search_for_m3_t5() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(&mut rng, 3);
        let scores = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>() + 0.01);
        let (best, path) = brute_force(scores.view(), &model);
        assert_eq!(viterbi(scores.view(), &model).unwrap(), path);
        let v = joint_probability(&path, scores.view(), &model).unwrap();
        assert!((v - best.ln()).abs() < 1e-12);
    }

    #[test]
    fn joint_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_model(&mut rng, 3);
        let scores = array![[0.2, 0.5, 1.3]];
        let v = joint_probability(&[2], scores.view(), &model).unwrap();
        assert!((v - (model.pi[2] * 1.3).ln()).abs() < 1e-15);

        let mut blocked = model.clone();
        blocked.psi.row_mut(0).assign(&array![0.0, 1.0, 0.0]);
        let scores = Array2::ones((3, 3));
        assert_eq!(joint_probability(&[0, 0, 1], scores.view(), &blocked).unwrap(), LOG_ZERO);
        assert_eq!(joint_log_direct(&[0, 0, 1], scores.view(), &blocked).unwrap(), LOG_ZERO);
        assert!(joint_probability(&[0, 1], scores.view(), &model).is_err());
    }

    #[test]
    fn direct_joint_survives_long_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 4);
        let scores = Array2::from_shape_fn((5000, 4), |_| rng.random::<f64>() * 1e-3 + 1e-6);
        let path = viterbi(scores.view(), &model).unwrap();
        let d = joint_log_direct(&path, scores.view(), &model).unwrap();
        let r = joint_log_recursive(&path, scores.view(), &model).unwrap();
        assert!(d.is_finite() && d < -1e4);
        assert!((d - r).abs() / r.abs() < 1e-12);
    }

    #[test]
    fn runs_and_sequences() {
        let o = |user, start| Origin { stream: StreamId { user, recording: 0 }, start };
        let origins = [o(1, 0), o(1, 10), o(1, 30), o(2, 40), o(2, 50)];
        assert_eq!(adjacent_runs(&origins, 10), vec![0..2, 2..3, 3..5]);
        assert_eq!(stream_segments(&origins), vec![0..3, 3..5]);
        assert!(adjacent_runs(&[], 10).is_empty());
        let labels = [Some(0), Some(1), Some(2), None, Some(1)];
        assert_eq!(
            label_sequences(&origins, &labels, 10).unwrap(),
            vec![vec![0, 1], vec![2], vec![1]]
        );
    }

    #[test]
    fn estimate_full_model() {
        let hmm = HmmModel::estimate(&[vec![0, 0, 1], vec![1, 1]], names(2), 1.0).unwrap();
        assert_eq!(hmm.pi, array![0.5, 0.5]);
        assert_eq!(hmm.class_priors, array![3.0 / 7.0, 4.0 / 7.0]);
        assert_eq!(hmm.psi.row(1), array![1.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn decode_single_window_equals_argmax() {
        let mut dbn = DbnModel::random(3, &[4], 1).unwrap();
        dbn.init_head(names(3)).unwrap();
        dbn.head.as_mut().unwrap().weights = array![[1.0, -2.0, 0.5], [0.0, 1.0, 1.0], [2.0, 0.0, -1.0], [0.3, 0.3, 0.9]];
        for l in &mut dbn.layers {
            l.weights.mapv_inplace(|w| w * 300.0);
        }
        let hmm = HmmModel {
            pi: array![1.0, 1.0, 1.0] / 3.0,
            psi: random_model(&mut ChaCha8Rng::seed_from_u64(1), 3).psi,
            class_labels: names(3),
            class_priors: array![0.6, 0.3, 0.1],
        };
        let x = Array2::from_shape_fn((20, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let segments: Vec<_> = (0..20).map(|i| i..i + 1).collect();
        let out = decode_dataset(x.view(), &dbn, &hmm, &segments, DecodeOptions { uniform_priors: true }).unwrap();
        for seg in out {
            assert_eq!(seg.viterbi, seg.framewise);
        }

        let mut other = hmm.clone();
        other.class_labels.swap(0, 1);
        assert!(decode_dataset(x.view(), &dbn, &other, &segments, DecodeOptions::default()).is_err());
        assert!(decode_dataset(x.view(), &dbn, &hmm, &[15..25], DecodeOptions::default()).is_err());
    }

    #[test]
    fn text_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = random_model(&mut rng, 4);
        model.class_labels[2] = "open door".into();
        let text = encode_hmm(&model).unwrap();
        assert_eq!(decode_hmm(&text).unwrap(), model);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.txt");
        save_hmm(&model, &path).unwrap();
        assert_eq!(load_hmm(&path).unwrap(), model);

        let bumped = text.replacen("deepact-hmm 1", "deepact-hmm 2", 1);
        assert!(decode_hmm(&bumped).unwrap_err().to_string().contains("version"));
        let cut: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(decode_hmm(&cut).is_err());
        assert!(decode_hmm(&format!("{text}extra\n")).is_err());
        let bad_row = text.replacen("psi ", "psi 0.9 ", 1);
        assert!(decode_hmm(&bad_row).is_err());
    }

    fn tv_to_uniform(row: ndarray::ArrayView1<f64>) -> f64 {
        let m = row.len() as f64;
        row.iter().map(|p| (p - 1.0 / m).abs()).sum::<f64>() / 2.0
    }

    fn label_sets() -> impl Strategy<Value = (usize, Vec<Vec<usize>>)> {
        (1usize..5).prop_flat_map(|m| {
            (Just(m), prop::collection::vec(prop::collection::vec(0..m, 1..12), 1..5))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn viterbi_equals_brute_force(seed in 0u64..u64::MAX, m in 1usize..=4, t in 1usize..=7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, m);
            let scores = Array2::from_shape_fn((t, m), |_| rng.random::<f64>() + 1e-3);
            let path = viterbi(scores.view(), &model).unwrap();
            let (best, _) = brute_force(scores.view(), &model);
            let got = joint_log_recursive(&path, scores.view(), &model).unwrap();
            prop_assert!((got - best.ln()).abs() <= 1e-12 * best.ln().abs().max(1.0));
        }

        #[test]
        fn estimates_are_stochastic((m, seqs) in label_sets(), eps in prop::sample::select(vec![0.0, 0.5, 1.0, 10.0])) {
            let pi = estimate_prior(&seqs, m, eps).unwrap();
            prop_assert!((pi.sum() - 1.0).abs() < 1e-12);
            if let Ok(psi) = estimate_transitions(&seqs, m, eps) {
                for row in psi.rows() {
                    prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                    prop_assert!(row.iter().all(|p| *p >= 0.0));
                }
            } else {
                prop_assert_eq!(eps, 0.0);
            }
        }

        #[test]
        fn more_smoothing_is_closer_to_uniform((m, seqs) in label_sets(), eps in 0.01f64..5.0, extra in 0.01f64..5.0) {
            let a = estimate_transitions(&seqs, m, eps).unwrap();
            let b = estimate_transitions(&seqs, m, eps + extra).unwrap();
            for (ra, rb) in a.rows().into_iter().zip(b.rows()) {
                let (da, db) = (tv_to_uniform(ra), tv_to_uniform(rb));
                if da > 1e-12 {
                    prop_assert!(db < da);
                } else {
                    prop_assert!(db <= 1e-12);
                }
            }
        }

        #[test]
        fn scaling_a_time_step_keeps_the_path(seed in 0u64..u64::MAX, m in 1usize..=5, t in 1usize..=20, k in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, m);
            let mut scores = Array2::from_shape_fn((t, m), |_| rng.random::<f64>() + 1e-3);
            let before = viterbi(scores.view(), &model).unwrap();
            let step = rng.random_range(0..t);
            scores.row_mut(step).mapv_inplace(|s| s * k);
            prop_assert_eq!(viterbi(scores.view(), &model).unwrap(), before);
        }

        #[test]
        fn direct_and_recursive_joint_agree(seed in 0u64..u64::MAX) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, 4);
            let scores = Array2::from_shape_fn((8, 4), |_| rng.random::<f64>() * 0.999 + 1e-3);
            let path: Vec<usize> = (0..8).map(|_| rng.random_range(0..4)).collect();
            let d = joint_log_direct(&path, scores.view(), &model).unwrap();
            let r = joint_log_recursive(&path, scores.view(), &model).unwrap();
            prop_assert!((d - r).abs() <= 1e-12 * d.abs().max(r.abs()));
        }
    }
}
