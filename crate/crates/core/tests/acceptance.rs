//! One test per acceptance criterion. Each prints a single `PASS`/`FAIL` line
//! with the measured numbers before asserting. Tests hold a shared lock so
//! their output stays readable and the timing criterion runs alone.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radar_core::candidate::{form_candidates, geographic_influence, seek_pivots, ClusterParams, WindowTweet};
use radar_core::classifier::{loss_and_gradient, LogRegModel, LogRegParams};
use radar_core::engine::{DetectionMode, Engine, EngineConfig};
use radar_core::ingest::{Stopwords, Tweet};
use radar_core::keyword_graph::{semantic_score, KeywordBag, KeywordGraph, KeywordId, RwrParams, VicinityCache};
use radar_core::store::{sort_results, Area, EventQuery, EventRecord, EventStore, StoredEvent};
use radar_core::summarizer::{PyramidStore, Snapshot, TweetCluster};
use radar_core::synth::{evaluate, SynthParams, SynthStream};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(name: &str, pass: bool, detail: String) {
    // Written past the test harness capture so the line shows without --nocapture.
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::Write::write_all(&mut std::io::stdout().lock(), line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

fn tweet(id: String, ts: u64, lat: f64, lon: f64, text: &str) -> Arc<Tweet> {
    Arc::new(Tweet::new(&id, &format!("u-{id}"), ts, lat, lon, text, &Stopwords::empty()).unwrap())
}

#[test]
fn batch_online_equivalence() {
    let _guard = serial();
    let started = Instant::now();
    let window_s = 6 * 3600;
    let step_s = 600;
    let shifts = 20;
    let params = SynthParams {
        seed: 2024,
        duration_s: window_s + shifts * step_s,
        background_tweets: 1_900,
        bursts: 5,
        burst_warmup_s: 2 * 3600,
        ..SynthParams::default()
    };
    let stream = SynthStream::generate(&params);
    let history = SynthStream::generate(&params.history(48 * 3600));
    let stream = &stream.tweets[..stream.tweets.len().min(2_000)];

    let engine = |mode| {
        let config = EngineConfig {
            window_s,
            step_s,
            mode,
            ..EngineConfig::default()
        };
        let mut e = Engine::new(config, LogRegModel::zeros(8), params.start_ts - 48 * 3600).unwrap();
        e.prime(&history.tweets).unwrap();
        e
    };
    let mut inc = engine(DetectionMode::Incremental);
    let mut bat = engine(DetectionMode::Batch);

    let fill_end = params.start_ts + window_s;
    let fill = &stream[..stream.partition_point(|t| t.timestamp < fill_end)];
    inc.step(fill_end, fill).unwrap();
    bat.step(fill_end, fill).unwrap();

    let mut mismatches = Vec::new();
    let (mut t_inc, mut t_bat) = (Duration::ZERO, Duration::ZERO);
    let mut timed = 0;
    for shift in 1..=shifts {
        let ri = inc.step_stream(stream).unwrap();
        let rb = bat.step_stream(stream).unwrap();
        let same = inc.assignments() == bat.assignments()
            && inc.last_candidates() == bat.last_candidates()
            && inc.events() == bat.events();
        if !same {
            mismatches.push(shift);
        }
        let churn = (ri.inserted + ri.removed) as f64 / ri.window_tweets.max(1) as f64;
        if churn <= 0.10 {
            t_inc += ri.timings.detection();
            t_bat += rb.timings.detection();
            timed += 1;
        }
    }
    let ratio = t_inc.as_secs_f64() / t_bat.as_secs_f64();
    let elapsed = started.elapsed();
    let labels: usize = inc.last_candidates().iter().filter(|c| c.is_event).count();
    verdict(
        "batch/online equivalence",
        mismatches.is_empty() && timed > 0 && ratio <= 0.5 && elapsed < Duration::from_secs(60),
        format!(
            "{} tweets, {shifts} shifts, mismatching shifts {mismatches:?}, {} final candidates ({labels} events), \
             incremental/batch detection time {ratio:.3} over {timed} low-churn shifts, total {:.1}s",
            stream.len(),
            inc.last_candidates().len(),
            elapsed.as_secs_f64()
        ),
    );
}

fn random_graph(rng: &mut ChaCha8Rng) -> KeywordGraph {
    let nodes = rng.gen_range(2..=50);
    let mut g = KeywordGraph::new();
    for _ in 0..rng.gen_range(1..=120) {
        let k = rng.gen_range(2..=5);
        let bag: Vec<String> = (0..k).map(|_| format!("k{}", rng.gen_range(0..nodes))).collect();
        g.observe(&bag);
    }
    g
}

/// Power iteration on `pi = alpha e_q + (1 - alpha) P^T pi` until the L1
/// change falls below 1e-12.
fn exact_rwr(g: &KeywordGraph, q: KeywordId, alpha: f64) -> Vec<f64> {
    let n = g.len();
    let mut pi = vec![0.0; n];
    loop {
        let mut next = vec![0.0; n];
        next[q as usize] = alpha;
        for u in 0..n {
            let s = g.strength(u as KeywordId) as f64;
            if s == 0.0 {
                continue;
            }
            for (v, w) in g.neighbors(u as KeywordId) {
                next[v as usize] += (1.0 - alpha) * (w as f64 / s) * pi[u];
            }
        }
        let change: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if change < 1e-12 {
            return pi;
        }
    }
}

#[test]
fn rwr_accuracy() {
    let _guard = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let alpha = RwrParams::default().alpha;
    let mut worst = [0.0f64; 2];
    let mut overshoot = 0.0f64;
    for _ in 0..100 {
        let g = random_graph(&mut rng);
        let q = rng.gen_range(0..g.len()) as KeywordId;
        let exact = exact_rwr(&g, q, alpha);
        for (i, eps) in [1e-3, 1e-4].into_iter().enumerate() {
            let approx = g.approximate_rwr(q, alpha, eps).unwrap();
            for v in 0..g.len() as KeywordId {
                let (a, e) = (approx.score(v), exact[v as usize]);
                worst[i] = worst[i].max((a - e).abs() / eps);
                overshoot = overshoot.max(a - e);
            }
        }
    }
    let elapsed = started.elapsed();
    verdict(
        "RWR accuracy",
        worst[0] <= 1.0 && worst[1] <= 1.0 && overshoot <= 1e-12 && elapsed < Duration::from_secs(10),
        format!(
            "max error / eps = {:.3} (1e-3), {:.3} (1e-4); max overshoot {overshoot:.1e}; {:.2}s",
            worst[0],
            worst[1],
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn authority_ascent_soundness() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let words = ["fire", "smoke", "truck", "siren", "coffee", "latte", "music", "stage", "rain", "wind"];
    let params = ClusterParams::default();
    let mut failures = Vec::new();
    let mut max_hops = 0;
    for case in 0..100 {
        let n = rng.gen_range(1..=50);
        let tweets: Vec<Arc<Tweet>> = (0..n)
            .map(|i| {
                let k = rng.gen_range(1..=3);
                let text: Vec<&str> = (0..k).map(|_| words[rng.gen_range(0..words.len())]).collect();
                tweet(
                    format!("d{i:02}"),
                    i as u64,
                    41.0 + rng.gen_range(-0.03..0.03),
                    -87.0 + rng.gen_range(-0.03..0.03),
                    &text.join(" "),
                )
            })
            .collect();
        let mut graph = KeywordGraph::new();
        tweets.iter().for_each(|t| graph.observe(&t.keywords));
        let mut cache = VicinityCache::new(RwrParams::default(), 0.1);
        let ids: Vec<KeywordId> = (0..graph.len() as KeywordId).collect();
        cache.refresh(&graph, ids);
        let window: Vec<WindowTweet> = tweets
            .iter()
            .map(|t| WindowTweet {
                tweet: Arc::clone(t),
                bag: KeywordBag::resolve(&graph, &t.keywords).unwrap(),
            })
            .collect();
        let state = seek_pivots(&window, &cache, &params);

        // Oracle: all pairs, ids in order, direct pointer chasing.
        let term = |c: usize, d: usize| -> Option<f64> {
            let s = semantic_score(&cache, &window[c].bag, &window[d].bag).unwrap();
            if c == d {
                return Some(s);
            }
            let g = geographic_influence(&tweets[c], &tweets[d], params.bandwidth_m);
            (g > 0.0 && s > params.delta).then_some(g * s)
        };
        let auth: Vec<f64> = (0..n)
            .map(|d| (0..n).filter_map(|c| term(c, d)).fold(0.0, |a, t| a + t))
            .collect();
        let local: Vec<usize> = (0..n)
            .map(|d| {
                (0..n)
                    .filter(|&c| term(c, d).is_some())
                    .fold(d, |best, c| if auth[c] > auth[best] || (auth[c] == auth[best] && c < best) { c } else { best })
            })
            .collect();
        let mut pivots = Vec::with_capacity(n);
        let mut ok = true;
        for d in 0..n {
            let mut cur = d;
            let mut hops = 0;
            while local[cur] != cur {
                cur = local[cur];
                hops += 1;
                if hops > n {
                    ok = false;
                    break;
                }
            }
            max_hops = max_hops.max(hops);
            pivots.push(cur);
        }
        for d in 0..n {
            let p = pivots[d];
            let nb: Vec<usize> = (0..n).filter(|&c| term(c, p).is_some()).collect();
            ok &= nb.iter().all(|&c| auth[c] < auth[p] || (auth[c] == auth[p] && c >= p));
        }
        let expected: BTreeMap<String, (f64, String, String)> = (0..n)
            .map(|d| {
                (
                    tweets[d].id.clone(),
                    (auth[d], tweets[local[d]].id.clone(), tweets[pivots[d]].id.clone()),
                )
            })
            .collect();
        let got: BTreeMap<String, (f64, String, String)> = state
            .assignments()
            .into_iter()
            .map(|(id, a)| (id, (a.authority, a.local_pivot, a.pivot)))
            .collect();
        ok &= got == expected;
        ok &= (0..n).all(|i| state.hops(i) <= n);
        let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for d in 0..n {
            groups.entry(pivots[d]).or_default().insert(tweets[d].id.clone());
        }
        let oracle_groups: BTreeSet<BTreeSet<String>> = groups.into_values().filter(|g| g.len() >= params.min_support).collect();
        let got_groups: BTreeSet<BTreeSet<String>> = form_candidates(&state, params.min_support, 0)
            .into_iter()
            .map(|c| c.members.iter().map(|t| t.id.clone()).collect())
            .collect();
        ok &= oracle_groups == got_groups;
        if !ok {
            failures.push(case);
        }
    }
    verdict(
        "authority-ascent soundness",
        failures.is_empty(),
        format!("100 windows, failing cases {failures:?}, longest ascent {max_hops} hops"),
    );
}

fn random_tweets(rng: &mut ChaCha8Rng, n: usize) -> Vec<Tweet> {
    let words = ["aa", "bb", "cc", "dd", "ee"];
    (0..n)
        .map(|i| {
            let text: Vec<&str> = (0..rng.gen_range(1..=3)).map(|_| words[rng.gen_range(0..5)]).collect();
            Tweet::new(
                &format!("x{i}"),
                "u",
                rng.gen_range(1_600_000_000..1_700_000_000),
                rng.gen_range(-89.0..89.0),
                rng.gen_range(-179.0..179.0),
                &text.join(" "),
                &Stopwords::empty(),
            )
            .unwrap()
        })
        .collect()
}

/// Relative error against the magnitude of the summed terms, so sums that
/// cancel to near zero are not penalized for rounding in their parts.
fn rel(got: f64, want: f64, magnitude: f64) -> f64 {
    let scale = magnitude.max(got.abs()).max(want.abs());
    if scale == 0.0 {
        0.0
    } else {
        (got - want).abs() / scale
    }
}

fn quantized(deg: f64) -> f64 {
    (deg * 1e7).round() / 1e7
}

#[test]
fn tweet_cluster_algebra() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    let mut worst = 0.0f64;
    let mut worst_offset = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..30);
        let tweets = random_tweets(&mut rng, n);
        let cut = rng.gen_range(1..n);
        let a = TweetCluster::from_tweets(&tweets[..cut]).unwrap();
        let b = TweetCluster::from_tweets(&tweets[cut..]).unwrap();
        let whole = TweetCluster::from_tweets(&tweets).unwrap();
        let mut shuffled: Vec<&Tweet> = tweets.iter().collect();
        shuffled.shuffle(&mut rng);
        let mut seq = TweetCluster::from_tweet(shuffled[0]);
        shuffled[1..].iter().for_each(|t| seq.absorb(t));
        let exact = a.merge(&b) == whole && b.merge(&a) == whole && seq == whole;

        let nf = n as f64;
        let lats: Vec<f64> = tweets.iter().map(|t| quantized(t.lat)).collect();
        let lons: Vec<f64> = tweets.iter().map(|t| quantized(t.lon)).collect();
        let times: Vec<f64> = tweets.iter().map(|t| t.timestamp as f64).collect();
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / nf;
        let var = |xs: &[f64]| {
            let m = mean(xs);
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / nf
        };
        let magnitude = |xs: &[f64]| xs.iter().map(|x| x.abs()).sum::<f64>() / nf;
        let spread = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>() / nf;
        let (clat, clon) = whole.center();
        let [vlat, vlon] = whole.location_variance();
        let err = [
            rel(clat, mean(&lats), magnitude(&lats)),
            rel(clon, mean(&lons), magnitude(&lons)),
            rel(vlat, var(&lats), spread(&lats)),
            rel(vlon, var(&lons), spread(&lons)),
            rel(whole.mean_time(), mean(&times), magnitude(&times)),
            rel(whole.time_variance(), var(&times), spread(&times)),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let raw_lat = tweets.iter().map(|t| t.lat).sum::<f64>() / nf;
        let offset = (clat - raw_lat).abs();
        worst = worst.max(err);
        worst_offset = worst_offset.max(offset);
        if !exact || err > 1e-9 || offset > 5e-8 {
            failures += 1;
        }
    }
    verdict(
        "tweet-cluster algebra",
        failures == 0,
        format!(
            "1000 cases, {failures} failing; worst relative error on floating summaries {worst:.2e}, \
             worst fixed-point offset of the center {worst_offset:.1e} degrees"
        ),
    );
}

#[test]
fn pyramidal_time_frame() {
    let _guard = serial();
    let ticks: u64 = 100_000;
    let mut store = PyramidStore::new(2, 1);
    for tick in 1..=ticks {
        store.insert(Snapshot {
            tick,
            timestamp: tick * 60,
            clusters: Arc::new(Vec::new()),
        });
    }
    // Independent retention rule: order i keeps its three newest ticks.
    let mut kept: Vec<u64> = Vec::new();
    for order in 0..=17u32 {
        let of_order: Vec<u64> = (1..=ticks).filter(|t| t.trailing_zeros() == order).collect();
        kept.extend(of_order.iter().rev().take(3));
    }
    kept.sort_unstable();
    let bound = 3 * (ticks as f64).log2().ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut wrong = 0;
    for _ in 0..1000 {
        let t = rng.gen_range(0..ticks * 60 + 600);
        let expect = kept.iter().rev().find(|&&k| k * 60 <= t).copied();
        let got = store.retrieve(t).ok().map(|s| s.tick);
        if got != expect {
            wrong += 1;
        }
    }
    verdict(
        "pyramidal time frame",
        store.len() <= bound && store.stored_ticks() == kept && wrong == 0,
        format!("{} snapshots stored (bound {bound}), {wrong}/1000 wrong retrievals", store.len()),
    );
}

#[test]
fn classifier_numerics() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dim = 8;
        let xs: Vec<Vec<f64>> = (0..50).map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let ys: Vec<bool> = (0..50).map(|_| rng.gen_bool(0.5)).collect();
        let w: Vec<f64> = (0..=dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grad) = loss_and_gradient(&w, &xs, &ys, 1e-2);
        let h = 1e-5;
        for j in 0..w.len() {
            let mut up = w.clone();
            let mut down = w.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (loss_and_gradient(&up, &xs, &ys, 1e-2).0 - loss_and_gradient(&down, &xs, &ys, 1e-2).0) / (2.0 * h);
            let err = (fd - grad[j]).abs() / fd.abs().max(grad[j].abs()).max(1e-8);
            worst = worst.max(err);
        }
    }

    let truth: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut data = Vec::new();
    while data.len() < 200 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let m: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + 0.5;
        if m.abs() > 0.25 {
            data.push((x, m > 0.0));
        }
    }
    let model = LogRegModel::train(&data, &LogRegParams::default()).unwrap();
    let correct = data.iter().filter(|(x, y)| model.classify(x).unwrap().1 == *y).count();
    let accuracy = correct as f64 / data.len() as f64;
    verdict(
        "classifier numerics",
        worst <= 1e-4 && accuracy >= 0.95,
        format!("max relative gradient error {worst:.2e}, training accuracy {accuracy:.3} on 200 separable instances"),
    );
}

fn labelled_run(stream: &SynthStream, model: LogRegModel) -> (Engine, Vec<(Vec<f64>, bool)>) {
    let mut engine = Engine::new(EngineConfig::default(), model, stream.tweets[0].timestamp).unwrap();
    let mut instances = Vec::new();
    while !engine.exhausted(&stream.tweets) {
        engine.step_stream(&stream.tweets).unwrap();
        for c in engine.last_candidates() {
            if let Some(f) = &c.features {
                let planted = stream.majority_burst(c.candidate.members.iter().map(|t| t.id.as_str())).is_some();
                instances.push((f.to_array().to_vec(), planted));
            }
        }
    }
    (engine, instances)
}

#[test]
fn planted_event_recovery() {
    let _guard = serial();
    let started = Instant::now();
    let train = SynthStream::generate(&SynthParams {
        seed: 101,
        ..SynthParams::default()
    });
    let test = SynthStream::generate(&SynthParams {
        seed: 202,
        ..SynthParams::default()
    });
    let (_, instances) = labelled_run(&train, LogRegModel::zeros(8));
    let model = LogRegModel::train(&instances, &LogRegParams::default()).unwrap();
    let (engine, _) = labelled_run(&test, model);
    let r = evaluate(&test, engine.events().iter().map(|e| &e.record));
    verdict(
        "planted-event recovery",
        r.precision >= 0.9 && r.recall >= 0.9,
        format!(
            "precision {:.3} ({}/{} events), recall {:.3} ({}/{} bursts), {} training instances, {:.1}s",
            r.precision,
            r.correct_events,
            r.events,
            r.recall,
            r.recovered_bursts,
            r.bursts,
            instances.len(),
            started.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn query_correctness() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let vocab = ["fire", "parade", "concert", "storm", "marathon", "protest", "game", "market"];
    let mut store = EventStore::new();
    let mut all = Vec::new();
    for i in 0..10_000 {
        let start = rng.gen_range(0..100_000u64);
        let k = rng.gen_range(1..4);
        let record = EventRecord {
            event_id: format!("ev-{i:05}"),
            pivot_id: format!("{i:05}"),
            lat: 41.88 + rng.gen_range(-0.5..0.5),
            lon: -87.63 + rng.gen_range(-0.5..0.5),
            start,
            end: start + rng.gen_range(0..7_200),
            top_keywords: vocab.choose_multiple(&mut rng, k).map(|s| s.to_string()).collect(),
            score: (rng.gen_range(0.5..1.0f64) * 20.0).round() / 20.0,
            member_ids: vec![format!("t{i}")],
            detected_at: start,
            updated_at: start,
        };
        all.push(record.clone());
        store.upsert(StoredEvent {
            record,
            members: Vec::new(),
        });
    }
    let queries: Vec<EventQuery> = (0..500)
        .map(|_| {
            let from = rng.gen_range(0..110_000u64);
            EventQuery {
                from,
                to: from + rng.gen_range(0..20_000),
                keyword: rng.gen_bool(0.5).then(|| vocab[rng.gen_range(0..vocab.len())].to_string()),
                area: rng.gen_bool(0.5).then(|| Area {
                    lat: 41.88 + rng.gen_range(-0.5..0.5),
                    lon: -87.63 + rng.gen_range(-0.5..0.5),
                    radius_m: rng.gen_range(100.0..30_000.0),
                }),
            }
        })
        .collect();
    let scan = |q: &EventQuery| {
        let mut hits: Vec<EventRecord> = all
            .iter()
            .filter(|e| {
                e.start <= q.to
                    && e.end >= q.from
                    && q.keyword.as_ref().is_none_or(|k| e.top_keywords.contains(k))
                    && q.area.is_none_or(|a| radar_core::geo::haversine_m(a.lat, a.lon, e.lat, e.lon) <= a.radius_m)
            })
            .cloned()
            .collect();
        sort_results(&mut hits);
        hits
    };
    let mut log = Vec::new();
    store.write_log(&mut log).unwrap();
    let reloaded = EventStore::read_log(&log[..]).unwrap();
    let mut mismatches = 0;
    let mut reload_mismatches = 0;
    let mut hits = 0;
    for q in &queries {
        let got = store.query(q).unwrap();
        hits += got.len();
        if got != scan(q) {
            mismatches += 1;
        }
        if reloaded.query(q).unwrap() != got {
            reload_mismatches += 1;
        }
    }
    verdict(
        "query correctness",
        mismatches == 0 && reload_mismatches == 0,
        format!(
            "10000 events, 500 queries ({hits} hits), {mismatches} differ from scan, {reload_mismatches} differ after reload"
        ),
    );
}
