//! Candidate features and the logistic-regression event classifier.
//!
//! Features contrast a candidate against its regional history (a timeline
//! snapshot) and against the rest of the current window:
//!
//! * temporal unusualness: `1 - cos(candidate, regional history)` in embedding space
//! * spatial unusualness: `1 - cos(candidate, whole window)`
//! * temporal burstiness: candidate keyword occurrences over `1 +` the
//!   history's kernel estimate of the same keywords at the pivot
//! * spatial burstiness: window occurrences of the candidate's keywords within
//!   one bandwidth of the pivot over `1 +` their occurrences in the whole window
//! * static: tweet count, distinct users, spatial spread (m), time span (s)

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::candidate::CandidateEvent;
use crate::embedding::{cosine, EmbeddingModel};
use crate::error::{Error, Result};
use crate::geo::{epanechnikov, haversine_m, SpatialGrid};
use crate::ingest::Tweet;
use crate::summarizer::TweetCluster;

pub const FEATURE_NAMES: [&str; 8] = [
    "temporal_unusualness",
    "spatial_unusualness",
    "temporal_burstiness",
    "spatial_burstiness",
    "tweet_count",
    "user_count",
    "spatial_std_m",
    "time_span_s",
];

pub const FEATURE_COUNT: usize = FEATURE_NAMES.len();

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub temporal_unusualness: f64,
    pub spatial_unusualness: f64,
    pub temporal_burstiness: f64,
    pub spatial_burstiness: f64,
    pub tweet_count: u64,
    pub user_count: u64,
    pub spatial_std_m: f64,
    pub time_span_s: u64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.temporal_unusualness,
            self.spatial_unusualness,
            self.temporal_burstiness,
            self.spatial_burstiness,
            self.tweet_count as f64,
            self.user_count as f64,
            self.spatial_std_m,
            self.time_span_s as f64,
        ]
    }
}

/// Window-level inputs shared by every candidate of one shift.
#[derive(Debug)]
pub struct WindowSummary {
    tweets: Vec<Arc<Tweet>>,
    grid: SpatialGrid<usize>,
    keyword_totals: HashMap<String, u64>,
    embedding: Option<Vec<f64>>,
    bandwidth_m: f64,
}

impl WindowSummary {
    pub fn new<'a>(
        tweets: impl IntoIterator<Item = &'a Arc<Tweet>>,
        model: &EmbeddingModel,
        bandwidth_m: f64,
    ) -> Self {
        let tweets: Vec<Arc<Tweet>> = tweets.into_iter().cloned().collect();
        let mut grid = SpatialGrid::new(bandwidth_m);
        let mut keyword_totals: HashMap<String, u64> = HashMap::new();
        let mut all_keywords: Vec<&str> = Vec::new();
        for (i, t) in tweets.iter().enumerate() {
            grid.insert(t.lat, t.lon, i);
            for k in &t.keywords {
                *keyword_totals.entry(k.clone()).or_insert(0) += 1;
                all_keywords.push(k);
            }
        }
        let embedding = model.embed_text(&all_keywords).ok().map(|(v, _)| v);
        Self {
            tweets,
            grid,
            keyword_totals,
            embedding,
            bandwidth_m,
        }
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }
}

/// A history snapshot digested against one embedding model: per-cluster
/// centers, embedding-weighted keyword sums and known-keyword mass. Built once
/// per shift and shared by every candidate.
#[derive(Debug)]
pub struct HistoryProfile<'h> {
    clusters: &'h [TweetCluster],
    centers: Vec<(f64, f64)>,
    sums: Vec<Vec<f64>>,
    mass: Vec<f64>,
}

impl<'h> HistoryProfile<'h> {
    pub fn new(clusters: &'h [TweetCluster], model: &EmbeddingModel) -> Self {
        let d = model.params().dimension;
        let mut sums = Vec::with_capacity(clusters.len());
        let mut mass = Vec::with_capacity(clusters.len());
        for tc in clusters {
            let mut acc = vec![0.0; d];
            let mut m = 0.0;
            for (kw, &c) in tc.keyword_counts() {
                if let Some(v) = model.vector(kw) {
                    let c = c as f64;
                    acc.iter_mut().zip(v).for_each(|(a, x)| *a += c * x);
                    m += c;
                }
            }
            sums.push(acc);
            mass.push(m);
        }
        Self {
            clusters,
            centers: clusters.iter().map(TweetCluster::center).collect(),
            sums,
            mass,
        }
    }

    fn kernels(&self, lat: f64, lon: f64, bandwidth_m: f64) -> Vec<f64> {
        self.centers
            .iter()
            .map(|&(clat, clon)| epanechnikov(haversine_m(clat, clon, lat, lon), bandwidth_m))
            .collect()
    }

    /// Kernel-weighted mean embedding of the regional history.
    fn regional_embedding(&self, kernels: &[f64]) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.sums.first().map_or(0, Vec::len)];
        let mut total = 0.0;
        for (i, &k) in kernels.iter().enumerate() {
            if k > 0.0 && self.mass[i] > 0.0 {
                acc.iter_mut().zip(&self.sums[i]).for_each(|(a, x)| *a += k * x);
                total += k * self.mass[i];
            }
        }
        if total == 0.0 {
            return None;
        }
        acc.iter_mut().for_each(|a| *a /= total);
        Some(acc)
    }

    fn expected(&self, kernels: &[f64], keyword: &str) -> f64 {
        self.clusters
            .iter()
            .zip(kernels)
            .filter(|(_, &k)| k > 0.0)
            .map(|(tc, &k)| tc.keyword_count(keyword) as f64 * k)
            .sum()
    }
}

/// Extracts the candidate's features. `history` is the regional snapshot;
/// `None` signals cold start.
pub fn extract_features(
    candidate: &CandidateEvent,
    history: Option<&[TweetCluster]>,
    model: &EmbeddingModel,
    window: &WindowSummary,
    estimation_bandwidth_m: f64,
) -> Result<FeatureVector> {
    let profile = history.map(|h| HistoryProfile::new(h, model));
    extract_features_with(candidate, profile.as_ref(), model, window, estimation_bandwidth_m)
}

/// As [`extract_features`], with the history already digested against `model`.
pub fn extract_features_with(
    candidate: &CandidateEvent,
    history: Option<&HistoryProfile<'_>>,
    model: &EmbeddingModel,
    window: &WindowSummary,
    estimation_bandwidth_m: f64,
) -> Result<FeatureVector> {
    let history = history.ok_or(Error::MissingHistory)?;
    if candidate.members.is_empty() {
        return Err(Error::InvalidParameter("candidate has no members".into()));
    }
    let (plat, plon) = (candidate.pivot.lat, candidate.pivot.lon);

    let mut observed: BTreeMap<&str, u64> = BTreeMap::new();
    for t in &candidate.members {
        for k in &t.keywords {
            *observed.entry(k.as_str()).or_insert(0) += 1;
        }
    }
    let cand_keywords: Vec<&str> = candidate
        .members
        .iter()
        .flat_map(|t| t.keywords.iter().map(String::as_str))
        .collect();
    let e_cand = model.embed_text(&cand_keywords).ok().map(|(v, _)| v);

    let kernels = history.kernels(plat, plon, estimation_bandwidth_m);
    let e_hist = history.regional_embedding(&kernels);
    let unusualness = |other: Option<&Vec<f64>>| match (e_cand.as_ref(), other) {
        (Some(a), Some(b)) => 1.0 - cosine(a, b),
        _ => 1.0,
    };
    let temporal_unusualness = unusualness(e_hist.as_ref());
    let spatial_unusualness = unusualness(window.embedding.as_ref());

    let observed_total: u64 = observed.values().sum();
    let expected: f64 = observed.keys().map(|k| history.expected(&kernels, k)).sum();
    let temporal_burstiness = observed_total as f64 / (1.0 + expected);

    let mut local_mass = 0u64;
    window.grid.for_each_candidate(plat, plon, |i| {
        let t = &window.tweets[i];
        if haversine_m(plat, plon, t.lat, t.lon) <= window.bandwidth_m {
            local_mass += t.keywords.iter().filter(|k| observed.contains_key(k.as_str())).count() as u64;
        }
    });
    let global_mass: u64 = observed
        .keys()
        .map(|k| window.keyword_totals.get(*k).copied().unwrap_or(0))
        .sum();
    let spatial_burstiness = local_mass as f64 / (1.0 + global_mass as f64);

    let members: Vec<&Tweet> = candidate.members.iter().map(|t| t.as_ref()).collect();
    let users: BTreeSet<&str> = members.iter().map(|t| t.user_id.as_str()).collect();
    let spread = TweetCluster::from_tweets(members.iter().copied())
        .map(|tc| tc.spatial_std_m())
        .unwrap_or(0.0);
    let tmin = members.iter().map(|t| t.timestamp).min().unwrap_or(0);
    let tmax = members.iter().map(|t| t.timestamp).max().unwrap_or(0);

    Ok(FeatureVector {
        temporal_unusualness,
        spatial_unusualness,
        temporal_burstiness,
        spatial_burstiness,
        tweet_count: members.len() as u64,
        user_count: users.len() as u64,
        spatial_std_m: spread,
        time_span_s: tmax - tmin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegParams {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Train on z-scored features and fold the scaling back into the weights.
    pub standardize: bool,
}

impl Default for LogRegParams {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            epochs: 1_000,
            learning_rate: 0.5,
            standardize: true,
        }
    }
}

/// Logistic regression over raw features; the last weight is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub threshold: f64,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn margin(weights: &[f64], x: &[f64]) -> f64 {
    let k = x.len();
    weights[..k].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + weights[k]
}

/// Mean logistic loss plus `l2 / 2 * |w|^2` (bias unregularized), and its
/// gradient.
pub fn loss_and_gradient(weights: &[f64], xs: &[Vec<f64>], ys: &[bool], l2: f64) -> (f64, Vec<f64>) {
    let k = weights.len() - 1;
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; k + 1];
    for (x, &y) in xs.iter().zip(ys) {
        let z = margin(weights, x);
        let y = if y { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for j in 0..k {
            grad[j] += r * x[j];
        }
        grad[k] += r;
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    for j in 0..k {
        loss += 0.5 * l2 * weights[j] * weights[j];
        grad[j] += l2 * weights[j];
    }
    (loss, grad)
}

impl LogRegModel {
    pub fn zeros(features: usize) -> Self {
        Self {
            weights: vec![0.0; features + 1],
            threshold: 0.5,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.weights.len() - 1
    }

    /// Full-batch gradient descent on the regularized logistic loss.
    pub fn train(instances: &[(Vec<f64>, bool)], params: &LogRegParams) -> Result<Self> {
        let positives = instances.iter().filter(|(_, y)| *y).count();
        let negatives = instances.len() - positives;
        if positives == 0 || negatives == 0 {
            return Err(Error::SingleClass { positives, negatives });
        }
        let k = instances[0].0.len();
        if let Some((x, _)) = instances.iter().find(|(x, _)| x.len() != k) {
            return Err(Error::FeatureLength {
                expected: k,
                got: x.len(),
            });
        }
        let n = instances.len() as f64;
        let (mean, scale): (Vec<f64>, Vec<f64>) = (0..k)
            .map(|j| {
                if !params.standardize {
                    return (0.0, 1.0);
                }
                let m = instances.iter().map(|(x, _)| x[j]).sum::<f64>() / n;
                let v = instances.iter().map(|(x, _)| (x[j] - m).powi(2)).sum::<f64>() / n;
                (m, if v > 0.0 { v.sqrt() } else { 1.0 })
            })
            .unzip();
        let xs: Vec<Vec<f64>> = instances
            .iter()
            .map(|(x, _)| (0..k).map(|j| (x[j] - mean[j]) / scale[j]).collect())
            .collect();
        let ys: Vec<bool> = instances.iter().map(|(_, y)| *y).collect();

        let mut w = vec![0.0; k + 1];
        for _ in 0..params.epochs {
            let (_, grad) = loss_and_gradient(&w, &xs, &ys, params.l2);
            w.iter_mut().zip(&grad).for_each(|(wi, g)| *wi -= params.learning_rate * g);
        }

        let mut weights = vec![0.0; k + 1];
        let mut bias = w[k];
        for j in 0..k {
            weights[j] = w[j] / scale[j];
            bias -= w[j] * mean[j] / scale[j];
        }
        weights[k] = bias;
        Ok(Self {
            weights,
            threshold: 0.5,
        })
    }

    pub fn probability(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_count() {
            return Err(Error::FeatureLength {
                expected: self.feature_count(),
                got: features.len(),
            });
        }
        Ok(sigmoid(margin(&self.weights, features)))
    }

    /// `(probability, probability >= threshold)`.
    pub fn classify(&self, features: &[f64]) -> Result<(f64, bool)> {
        let p = self.probability(features)?;
        Ok((p, p >= self.threshold))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("radar-logreg v1\nthreshold {}\n", self.threshold);
        for w in &self.weights {
            out.push_str(&format!("{w}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let corrupt = |msg: &str| Error::Corrupt("classifier".into(), msg.into());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| corrupt("empty file"))?;
        if header != "radar-logreg v1" {
            return Err(Error::VersionMismatch {
                file: "classifier".into(),
                found: header.into(),
                expected: "radar-logreg v1".into(),
            });
        }
        let threshold = lines
            .next()
            .and_then(|l| l.strip_prefix("threshold "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("bad threshold line"))?;
        let weights = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| corrupt("bad weight")))
            .collect::<Result<Vec<_>>>()?;
        if weights.is_empty() {
            return Err(corrupt("no weights"));
        }
        Ok(Self { weights, threshold })
    }
}

/// Parses `label,f1,...,fK` lines (`#` comments allowed). Labels are 0 or 1.
pub fn parse_instances(text: &str) -> Result<Vec<(Vec<f64>, bool)>> {
    let mut out = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::InvalidParameter(format!("instances line {}: {what}", lineno + 1));
        let mut fields = line.split(',').map(str::trim);
        let label = match fields.next() {
            Some("1") => true,
            Some("0") => false,
            _ => return Err(bad("label must be 0 or 1")),
        };
        let x = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad("bad feature value")))
            .collect::<Result<Vec<_>>>()?;
        if x.is_empty() || *width.get_or_insert(x.len()) != x.len() {
            return Err(bad("inconsistent feature count"));
        }
        out.push((x, label));
    }
    Ok(out)
}

pub fn format_instances(instances: &[(Vec<f64>, bool)]) -> String {
    let mut out = format!("# label,{}\n", FEATURE_NAMES.join(","));
    for (x, y) in instances {
        out.push_str(if *y { "1" } else { "0" });
        for v in x {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingParams;
    use crate::ingest::Stopwords;
    use crate::summarizer::TweetCluster;

    fn tw(id: &str, user: &str, ts: u64, lat: f64, lon: f64, text: &str) -> Arc<Tweet> {
        Arc::new(Tweet::new(id, user, ts, lat, lon, text, &Stopwords::empty()).unwrap())
    }

    #[test]
    fn zero_epochs_gives_half() {
        let data = vec![(vec![0.0, 1.0], false), (vec![1.0, 0.0], true)];
        let m = LogRegModel::train(
            &data,
            &LogRegParams {
                epochs: 0,
                ..LogRegParams::default()
            },
        )
        .unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert_eq!(m.classify(&[3.0, -2.0]).unwrap(), (0.5, true));
    }

    #[test]
    fn two_separable_points() {
        let data = vec![(vec![0.0], false), (vec![1.0], true)];
        let m = LogRegModel::train(&data, &LogRegParams::default()).unwrap();
        assert!(!m.classify(&[0.0]).unwrap().1);
        assert!(m.classify(&[1.0]).unwrap().1);
    }

    #[test]
    fn single_class_and_length_errors() {
        let data = vec![(vec![0.0], true), (vec![1.0], true)];
        assert!(matches!(
            LogRegModel::train(&data, &LogRegParams::default()),
            Err(Error::SingleClass { positives: 2, negatives: 0 })
        ));
        let m = LogRegModel::zeros(2);
        assert!(matches!(m.classify(&[1.0]), Err(Error::FeatureLength { expected: 2, got: 1 })));
    }

    #[test]
    fn large_margin_saturates() {
        let m = LogRegModel {
            weights: vec![1.0, 0.0],
            threshold: 0.5,
        };
        assert_eq!(m.probability(&[800.0]).unwrap(), 1.0);
        assert_eq!(m.probability(&[-800.0]).unwrap(), 0.0);
    }

    #[test]
    fn text_round_trip_and_version_check() {
        let m = LogRegModel {
            weights: vec![0.1, -2.5e-7, 3.0],
            threshold: 0.5,
        };
        let back = LogRegModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let wrong = m.to_text().replace("v1", "v9");
        assert!(matches!(LogRegModel::from_text(&wrong), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn instances_file() {
        let data = vec![(vec![1.0, 2.5], true), (vec![0.0, -1.0], false)];
        let text = format_instances(&data);
        assert_eq!(parse_instances(&text).unwrap(), data);
        assert!(parse_instances("2,1.0\n").is_err());
        assert!(parse_instances("1,1.0\n0,1.0,2.0\n").is_err());
    }

    #[test]
    fn missing_history_is_cold_start() {
        let t = tw("a", "u", 0, 1.0, 1.0, "kk");
        let cand = CandidateEvent {
            pivot: Arc::clone(&t),
            members: vec![t],
            created_at: 0,
        };
        let model = EmbeddingModel::new(EmbeddingParams::default());
        let win = WindowSummary::new(std::iter::empty(), &model, 2000.0);
        assert!(matches!(
            extract_features(&cand, None, &model, &win, 2000.0),
            Err(Error::MissingHistory)
        ));
    }

    /// Hand-built three-tweet candidate with a one-cluster history.
    #[test]
    fn hand_computed_features() {
        let mut model = EmbeddingModel::new(EmbeddingParams {
            dimension: 4,
            ..EmbeddingParams::default()
        });
        model.set_learning_rate(0.0);
        model.train_step(&[vec!["fire", "smoke", "coffee"]]);

        let members = vec![
            tw("c1", "u1", 100, 0.0, 0.0, "fire smoke"),
            tw("c2", "u2", 160, 0.0, 0.0, "fire"),
            tw("c3", "u1", 130, 0.0, 0.0, "smoke fire"),
        ];
        let far = tw("f1", "u9", 120, 0.0, 1.0, "fire coffee");
        let cand = CandidateEvent {
            pivot: Arc::clone(&members[0]),
            members: members.clone(),
            created_at: 200,
        };
        // history: one cluster 1000 m from the pivot with coffee x3, fire x1
        let hist_lat = (1000.0 / crate::geo::EARTH_RADIUS_M).to_degrees();
        let history = TweetCluster::from_tweets([
            &*tw("h1", "h", 0, hist_lat, 0.0, "coffee fire"),
            &*tw("h2", "h", 0, hist_lat, 0.0, "coffee"),
            &*tw("h3", "h", 0, hist_lat, 0.0, "coffee"),
        ])
        .unwrap();
        let mut all = members.clone();
        all.push(far);
        let window = WindowSummary::new(&all, &model, 2000.0);
        let f = extract_features(&cand, Some(&[history]), &model, &window, 2000.0).unwrap();

        let v = |k: &str| model.vector(k).unwrap().to_vec();
        let mix = |parts: &[(&str, f64)]| {
            let total: f64 = parts.iter().map(|p| p.1).sum();
            (0..4)
                .map(|i| parts.iter().map(|(k, w)| w * v(k)[i]).sum::<f64>() / total)
                .collect::<Vec<_>>()
        };
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (na * nb)
        };
        // the tc center sits exactly at hist_lat up to fixed-point rounding
        let k = 1.0 - (haversine_m(0.0, 0.0, history_center_lat(hist_lat), 0.0) / 2000.0).powi(2);
        let e_cand = mix(&[("fire", 3.0), ("smoke", 2.0)]);
        let e_hist = mix(&[("coffee", 3.0 * k), ("fire", k)]);
        let e_win = mix(&[("fire", 4.0), ("smoke", 2.0), ("coffee", 1.0)]);
        assert!((f.temporal_unusualness - (1.0 - cos(&e_cand, &e_hist))).abs() < 1e-12);
        assert!((f.spatial_unusualness - (1.0 - cos(&e_cand, &e_win))).abs() < 1e-12);
        // observed fire 3 + smoke 2 = 5; history estimate fire k*1 + smoke 0
        assert!((f.temporal_burstiness - 5.0 / (1.0 + k)).abs() < 1e-12);
        // local: the three members (5 occurrences); global adds f1's "fire"
        assert!((f.spatial_burstiness - 5.0 / (1.0 + 6.0)).abs() < 1e-15);
        assert_eq!(f.tweet_count, 3);
        assert_eq!(f.user_count, 2);
        assert_eq!(f.spatial_std_m, 0.0);
        assert_eq!(f.time_span_s, 60);
    }

    fn history_center_lat(lat: f64) -> f64 {
        (lat * 1e7).round() * 3.0 / 1e7 / 3.0
    }

    #[test]
    fn orthogonal_window_gives_unit_unusualness() {
        let mut model = EmbeddingModel::new(EmbeddingParams {
            dimension: 2,
            ..EmbeddingParams::default()
        });
        model.set_learning_rate(0.0);
        model.train_step(&[vec!["aa"], vec!["bb"]]);
        let a = model.vector("aa").unwrap().to_vec();
        let b = model.vector("bb").unwrap().to_vec();
        let t = tw("a", "u", 0, 0.0, 0.0, "aa");
        let cand = CandidateEvent {
            pivot: Arc::clone(&t),
            members: vec![Arc::clone(&t)],
            created_at: 0,
        };
        let other = tw("b", "u", 0, 5.0, 5.0, "bb");
        let window = WindowSummary::new(&[other], &model, 2000.0);
        let f = extract_features(&cand, Some(&[]), &model, &window, 2000.0).unwrap();
        assert!((f.spatial_unusualness - (1.0 - cosine(&a, &b))).abs() < 1e-15);
        // with no regional history the candidate counts as fully unusual
        assert_eq!(f.temporal_unusualness, 1.0);
        assert_eq!(f.temporal_burstiness, 1.0);
    }
}
