//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero when a criterion that ran did not pass.
//!
//! Criteria 1-3 need the Cora citation dataset (`cora.content`,
//! `cora.cites`) in `$CORA_DIR` or `data/cora/` under the workspace root.
//! Without it they report FAIL with the reason; set `ACCEPTANCE_STRICT=1`
//! to make that fatal too.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use rand::Rng;
use spade_gnn::cli::{cmd_run, CommonArgs, RunArgs};
use spade_gnn::dataset::{load_cora_dir, make_split, Dataset};
use spade_gnn::gcn::{init_model, loss_and_gradients, GcnHyperParams, SparseRows};
use spade_gnn::graph::{laplacian, normalized_adjacency};
use spade_gnn::knn::{knn_graph, KnnConfig, Metric};
use spade_gnn::pipeline::{robust_stage, run_shared_stages, PipelineConfig};
use spade_gnn::spade::spade_scores;
use spade_gnn::spectral::pencil_topk;
use spade_gnn::{par, Error};

enum Outcome {
    Pass(String),
    Fail(String),
    Unavailable(String),
}

type Check = fn() -> Outcome;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("baseline reproduction on Cora", baseline_reproduction),
        (
            "directional improvement on robust nodes",
            directional_improvement,
        ),
        ("robustness-correctness correlation", robustness_correlation),
        ("spectral oracle equivalence", spectral_oracle_equivalence),
        ("self-pencil identity and scaling", self_pencil_and_scaling),
        (
            "score formula equivalence and trace identity",
            score_formula,
        ),
        ("GCN gradient check", gradient_check),
        ("kNN exactness", knn_exactness),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let strict = std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v != "0");
    let (mut passed, mut failed, mut unavailable) = (0, 0, 0);
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Outcome::Pass(d) => {
                passed += 1;
                ("PASS", d.as_str())
            }
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d.as_str())
            }
            Outcome::Unavailable(d) => {
                unavailable += 1;
                ("FAIL", d.as_str())
            }
        };
        println!("criterion {} [{name}]: {tag} ({secs:.1}s) {detail}", i + 1);
    }
    println!("acceptance: {passed} passed, {failed} failed, {unavailable} failed for missing data");
    if failed > 0 || (strict && unavailable > 0) {
        std::process::exit(1);
    }
}

fn cora_dir() -> Option<PathBuf> {
    std::env::var_os("CORA_DIR")
        .map(PathBuf::from)
        .into_iter()
        .chain([Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cora")])
        .find(|dir| dir.join("cora.content").is_file() && dir.join("cora.cites").is_file())
}

fn load_cora() -> Result<Dataset, Outcome> {
    let Some(dir) = cora_dir() else {
        return Err(Outcome::Unavailable(
            "Cora not found: set CORA_DIR to a directory with cora.content and cora.cites".into(),
        ));
    };
    load_cora_dir(&dir).map_err(|e| Outcome::Fail(format!("loading {}: {e}", dir.display())))
}

fn cora_cfg(seed: u64) -> PipelineConfig {
    PipelineConfig {
        seed,
        ..PipelineConfig::default()
    }
}

fn baseline_reproduction() -> Outcome {
    let ds = match load_cora() {
        Ok(ds) => ds,
        Err(o) => return o,
    };
    let mut accs = Vec::new();
    let mut slowest: f64 = 0.0;
    for seed in SEEDS {
        let t = Instant::now();
        let split = match make_split(&ds, 20, seed) {
            Ok(s) => s,
            Err(e) => return Outcome::Fail(e.to_string()),
        };
        match spade_gnn::pipeline::run_baseline(&ds, &split, &cora_cfg(seed)) {
            Ok(b) => accs.push(b.accuracy),
            Err(e) => return Outcome::Fail(e.to_string()),
        }
        slowest = slowest.max(t.elapsed().as_secs_f64());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let detail = format!(
        "mean test accuracy {mean:.4} over seeds {accs:.4?}, slowest seed {slowest:.1}s (target [0.75, 0.85], < 60 s/seed)"
    );
    if (0.75..=0.85).contains(&mean) && slowest < 60.0 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn directional_improvement() -> Outcome {
    let ds = match load_cora() {
        Ok(ds) => ds,
        Err(o) => return o,
    };
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let cfg = cora_cfg(seed);
        let run = make_split(&ds, 20, seed).and_then(|split| {
            let shared = run_shared_stages(&ds, &split, &cfg)?;
            robust_stage(
                &ds,
                &split,
                &cfg,
                &shared.prepared,
                &shared.baseline,
                &shared.stage_one,
            )
        });
        let report = match run {
            Ok(r) => r,
            Err(e) => return Outcome::Fail(format!("seed {seed}: {e}")),
        };
        let acc = &report.accuracy;
        let (Some(robust), Some(base)) = (acc.robust_subset, acc.baseline_on_robust) else {
            return Outcome::Fail(format!("seed {seed}: no robust test nodes"));
        };
        if robust - base >= 0.02 {
            wins += 1;
        }
        lines.push(format!(
            "seed {seed}: robust-only {robust:.4} vs baseline-on-robust {base:.4}, combined {:.4}, baseline {:.4}",
            acc.combined, acc.baseline
        ));
    }
    let detail = format!("{wins}/5 seeds with >= 2 pp gain; {}", lines.join("; "));
    if wins >= 3 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn robustness_correlation() -> Outcome {
    let ds = match load_cora() {
        Ok(ds) => ds,
        Err(o) => return o,
    };
    let mut holds = 0;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let cfg = cora_cfg(seed);
        let shared = match make_split(&ds, 20, seed)
            .and_then(|s| run_shared_stages(&ds, &s, &cfg).map(|sh| (s, sh)))
        {
            Ok(x) => x,
            Err(e) => return Outcome::Fail(format!("seed {seed}: {e}")),
        };
        let (split, shared) = shared;
        let scores = &shared.stage_one.scores.scores;
        let mut test = split.test_ids.clone();
        test.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let q = test.len() / 4;
        let acc = |ids: &[usize]| {
            ids.iter()
                .filter(|&&i| shared.baseline.predictions[i] == ds.labels[i])
                .count() as f64
                / ids.len() as f64
        };
        let low = acc(&test[..q]);
        let high = acc(&test[test.len() - q..]);
        if low >= high {
            holds += 1;
        }
        lines.push(format!(
            "seed {seed}: low-score quartile {low:.4}, high-score quartile {high:.4}"
        ));
    }
    let detail = format!("{holds}/5 seeds hold; {}", lines.join("; "));
    if holds >= 4 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn spectral_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(4040);
    let mut worst_val: f64 = 0.0;
    let mut worst_angle: f64 = 0.0;
    for case in 0..50 {
        let n = r.random_range(10..=60);
        let k = r.random_range(1..=6);
        let e_in = random_connected_edges(&mut r, n, n, 0.5, 2.0);
        let e_out = random_connected_edges(&mut r, n, 2 * n, 0.5, 2.0);
        let es = match pencil_topk(
            &laplacian(&graph(n, &e_in)),
            &laplacian(&graph(n, &e_out)),
            k,
        ) {
            Ok(es) => es,
            Err(e) => return Outcome::Fail(format!("case {case}: {e}")),
        };
        let (vals, vecs) = pencil_oracle(
            &dense_laplacian(n, &e_in),
            &dense_laplacian(n, &e_out),
            1,
            k,
        );
        for (a, b) in es.eigenvalues.iter().zip(&vals) {
            worst_val = worst_val.max(rel_err(*a, *b));
        }
        worst_angle = worst_angle.max(max_principal_angle_sine(&to_dense(&es.eigenvectors), &vecs));
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "50 pairs: worst eigenvalue rel err {worst_val:.2e} (<= 1e-8), worst principal angle sine {worst_angle:.2e} (<= 1e-6), {secs:.2}s (< 30 s)"
    );
    if worst_val <= 1e-8 && worst_angle <= 1e-6 && secs < 30.0 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn self_pencil_and_scaling() -> Outcome {
    let mut r = rng(5050);
    let mut worst_self: f64 = 0.0;
    let mut worst_val: f64 = 0.0;
    let mut worst_score: f64 = 0.0;
    let mut rank_changes = 0;
    for case in 0..20 {
        let n = r.random_range(10..=60);
        let k = r.random_range(1..=6);
        let e_in = random_connected_edges(&mut r, n, n, 0.5, 2.0);
        let g_in = graph(n, &e_in);
        let l_in = laplacian(&g_in);
        let es = match pencil_topk(&l_in, &l_in, k) {
            Ok(es) => es,
            Err(e) => return Outcome::Fail(format!("self case {case}: {e}")),
        };
        for v in &es.eigenvalues {
            worst_self = worst_self.max((v - 1.0).abs());
        }

        let e_out = random_connected_edges(&mut r, n, 2 * n, 0.5, 2.0);
        let l_out = laplacian(&graph(n, &e_out));
        let base = pencil_topk(&l_in, &l_out, k).expect("base pencil");
        let base_scores = spade_scores(base.v_k.view(), &g_in).expect("base scores");
        for c in [0.5, 2.0, 10.0] {
            let scaled = match pencil_topk(&l_in.scaled(c).expect("positive c"), &l_out, k) {
                Ok(es) => es,
                Err(e) => return Outcome::Fail(format!("scaled case {case}: {e}")),
            };
            for (a, b) in scaled.eigenvalues.iter().zip(&base.eigenvalues) {
                worst_val = worst_val.max(rel_err(*a, c * b));
            }
            let s = spade_scores(scaled.v_k.view(), &g_in).expect("scaled scores");
            for (a, b) in s.scores.iter().zip(&base_scores.scores) {
                worst_score = worst_score.max(rel_err(*a, c * b));
            }
            if s.ranking != base_scores.ranking {
                rank_changes += 1;
            }
        }
    }
    let detail = format!(
        "20 graphs: self-pencil max |λ-1| {worst_self:.2e} (<= 1e-8); scaling eigenvalue rel err {worst_val:.2e}, score rel err {worst_score:.2e}, ranking changes {rank_changes}"
    );
    if worst_self <= 1e-8 && worst_val <= 1e-8 && worst_score <= 1e-8 && rank_changes == 0 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn score_formula() -> Outcome {
    let mut r = rng(6060);
    let mut worst_score: f64 = 0.0;
    let mut worst_trace: f64 = 0.0;
    for case in 0..20 {
        let n = r.random_range(10..=60);
        let k = r.random_range(1..=6);
        let e_in: Vec<Edge> = random_connected_edges(&mut r, n, n, 1.0, 1.0 + f64::EPSILON)
            .into_iter()
            .map(|(i, j, _)| (i, j, 1.0))
            .collect();
        let e_out = random_connected_edges(&mut r, n, 2 * n, 0.5, 2.0);
        let g_in = graph(n, &e_in);
        let es = match pencil_topk(&laplacian(&g_in), &laplacian(&graph(n, &e_out)), k) {
            Ok(es) => es,
            Err(e) => return Outcome::Fail(format!("case {case}: {e}")),
        };
        let fast = spade_scores(es.v_k.view(), &g_in).expect("scores");
        let vk = to_dense(&es.v_k);
        let slow = spade_oracle(&vk, n, &e_in);
        for (a, b) in fast.scores.iter().zip(&slow) {
            worst_score = worst_score.max((a - b).abs() / b.abs().max(1.0));
        }
        let edge_sum: f64 = e_in
            .iter()
            .map(|&(i, j, _)| (0..k).map(|m| (vk[i][m] - vk[j][m]).powi(2)).sum::<f64>())
            .sum();
        let lam_sq: f64 = es.eigenvalues.iter().map(|l| l * l).sum();
        worst_trace = worst_trace.max(rel_err(edge_sum, lam_sq));
    }
    let detail = format!(
        "20 instances: score deviation {worst_score:.2e} (<= 1e-10), trace identity rel err {worst_trace:.2e} (<= 1e-6)"
    );
    if worst_score <= 1e-10 && worst_trace <= 1e-6 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn gradient_check() -> Outcome {
    let mut r = rng(7070);
    let (n, d, h, c) = (12, 6, 5, 3);
    let edges = random_connected_edges(&mut r, n, 8, 1.0, 1.0 + f64::EPSILON)
        .into_iter()
        .map(|(i, j, _)| (i, j, 1.0))
        .collect::<Vec<_>>();
    let x = random_points(&mut r, n, d);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let train: Vec<usize> = vec![0, 1, 2, 4, 5, 7, 9, 10];
    let hp = GcnHyperParams {
        hidden: h,
        weight_decay: 5e-4,
        dropout: 0.0,
        seed: 11,
        ..Default::default()
    };
    let mut model = init_model(d, h, c, 11).expect("model");
    model.hp = hp;
    let a_hat = normalized_adjacency(&graph(n, &edges));
    let xs = SparseRows::from_dense(from_dense(&x).view());
    let analytic = loss_and_gradients(&model, &a_hat, &xs, &labels, &train, None).expect("grads");
    let oracle_a = dense_a_hat(n, &edges);
    let w0 = to_dense(&model.w0);
    let w1 = to_dense(&model.w1);
    let loss =
        |w0: &Dense, w1: &Dense| gcn_loss(&oracle_a, &x, w0, w1, &labels, &train, hp.weight_decay);
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (which, shape) in [(0, (d, h)), (1, (h, c))] {
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let (mut p, mut m) = ((w0.clone(), w1.clone()), (w0.clone(), w1.clone()));
                if which == 0 {
                    p.0[i][j] += step;
                    m.0[i][j] -= step;
                } else {
                    p.1[i][j] += step;
                    m.1[i][j] -= step;
                }
                let fd = (loss(&p.0, &p.1) - loss(&m.0, &m.1)) / (2.0 * step);
                let an = if which == 0 {
                    analytic.grad_w0[[i, j]]
                } else {
                    analytic.grad_w1[[i, j]]
                };
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
                count += 1;
            }
        }
    }
    let loss_gap = rel_err(analytic.loss, loss(&w0, &w1));
    let detail = format!(
        "{count} parameters: worst relative error {worst:.2e} (<= 1e-4); loss vs dense oracle {loss_gap:.2e}"
    );
    if worst <= 1e-4 && loss_gap <= 1e-12 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn knn_exactness() -> Outcome {
    let mut r = rng(8080);
    let mut mismatches = Vec::new();
    for cloud in 0..30 {
        let k = r.random_range(1..=15);
        let n = r.random_range(k + 1..=300);
        let d = r.random_range(1..=8);
        let mut pts = random_points(&mut r, n, d);
        if cloud % 3 == 0 {
            // integer grid: many exact distance ties
            for row in pts.iter_mut() {
                for v in row.iter_mut() {
                    *v = (*v * 3.0).round();
                }
            }
        }
        let g = match knn_graph(
            from_dense(&pts).view(),
            KnnConfig::new(k, Metric::Euclidean),
        ) {
            Ok(g) => g,
            Err(e) => return Outcome::Fail(format!("cloud {cloud}: {e}")),
        };
        if edge_set(&g) != knn_oracle(&pts, k) {
            mismatches.push(cloud);
        }
    }
    if mismatches.is_empty() {
        Outcome::Pass(
            "30 clouds (N <= 300, k <= 15, every third on an integer grid): edge sets identical"
                .into(),
        )
    } else {
        Outcome::Fail(format!("edge sets differ for clouds {mismatches:?}"))
    }
}

fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove("timing");
            map.remove("timestamps");
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn run_args(out: &Path) -> RunArgs {
    RunArgs {
        common: CommonArgs {
            dataset: "synthetic:3".into(),
            seed: 5,
            per_class_train: 20,
            knn_k: 10,
            spade_k: None,
            robust_subgraph_space: Default::default(),
            centroid_space: Default::default(),
            g_input: Default::default(),
            metric: Metric::Euclidean,
            hidden: 16,
            epochs: 100,
            lr: 0.01,
            dropout: 0.5,
            weight_decay: 5e-4,
            no_normalize: false,
            raw_sum: false,
            out: out.to_path_buf(),
        },
        fraction: None,
        fractions: vec!["orig".into(), "0.4".into(), "0.7".into()],
    }
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dirs = [
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("seq"),
    ];
    for (i, dir) in dirs.iter().enumerate() {
        let args = run_args(dir);
        let res: Result<_, Error> = if i == 2 {
            par::run_sequential(|| cmd_run(&args))
        } else {
            cmd_run(&args)
        };
        if let Err(e) = res {
            return Outcome::Fail(format!("run {i}: {e}"));
        }
    }
    let mut files: Vec<String> = std::fs::read_dir(&dirs[0])
        .expect("output dir")
        .map(|e| e.expect("entry").file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    let mut differing = Vec::new();
    for f in &files {
        let read = |d: &Path| std::fs::read(d.join(f)).unwrap_or_default();
        let a = read(&dirs[0]);
        for other in &dirs[1..] {
            let b = read(other);
            let same = if f.ends_with(".json") {
                let mut ja: serde_json::Value = serde_json::from_slice(&a).expect("json");
                let mut jb: serde_json::Value = serde_json::from_slice(&b).expect("json");
                strip_timing(&mut ja);
                strip_timing(&mut jb);
                ja == jb
            } else {
                a == b
            };
            if !same {
                differing.push(format!(
                    "{f} vs {}",
                    other.file_name().unwrap().to_string_lossy()
                ));
            }
        }
    }
    if differing.is_empty() && files.len() >= 4 {
        Outcome::Pass(format!(
            "{} files identical across two runs and a single-threaded run: {}",
            files.len(),
            files.join(", ")
        ))
    } else {
        Outcome::Fail(format!("outputs {files:?}; differing: {differing:?}"))
    }
}
