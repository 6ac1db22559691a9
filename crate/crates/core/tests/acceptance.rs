mod common;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use astpath::abstraction::{distinct_count, AbstractionKind};
use astpath::crf::{
    infer_map, score_assignment, train_scores, FactorGraph, InferenceMode, TIE_TOLERANCE,
};
use astpath::embed::{pair_gradient, pair_loss, train_sgns, SgnsConfig};
use astpath::eval::{exact_match, subtoken_f1, Evaluator};
use astpath::paths::{extract_leafwise, path_between, path_length, path_width, AstPath, ExtractionConfig};
use astpath::pipeline::{evaluate, predict, train, Document, RunConfig};
use astpath::synth::{cooccurrence_pairs, random_tree, separable_corpus};
use astpath::tree::SyntaxTree;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn path_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let limits = [(7, 3), (4, 1), (2, 0), (usize::MAX / 2, usize::MAX / 2)];
    let mut pairs = 0;
    for i in 0..100 {
        let tree = random_tree(&mut rng, 30);
        for &(l, w) in &limits {
            let got: Vec<Vec<_>> = {
                let mut v: Vec<Vec<_>> = extract_leafwise(&tree, &ExtractionConfig::new(l, w))
                    .iter()
                    .map(|c| c.path.nodes().to_vec())
                    .collect();
                v.sort();
                v
            };
            let want = oracle_leafwise(&tree, l, w);
            if got != want {
                return Err(format!("tree {i} at ({l}, {w}): {} paths vs {} expected", got.len(), want.len()));
            }
            pairs += want.len();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 10.0, format!("100 trees, {pairs} paths matched, {secs:.2}s"))
}

fn figure() -> Outcome {
    let tree = var_abcd();
    let a = find_terminal(&tree, "a");
    let d = find_terminal(&tree, "d");
    let path = path_between(&tree, a, d).map_err(|e| e.to_string())?;
    let (len, width) = (path_length(&path), path_width(&tree, &path));
    let has_ad = |w| {
        extract_leafwise(&tree, &ExtractionConfig::new(7, w))
            .iter()
            .any(|c| c.start_node() == a && c.end_node() == d)
    };
    let (at2, at3) = (has_ad(2), has_ad(3));
    check(
        len == 4 && width == 3 && !at2 && at3,
        format!("length {len}, width {width}, present at width 2: {at2}, at width 3: {at3}"),
    )
}

fn lattice() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut trees: Vec<SyntaxTree> = Vec::new();
    let mut total = 0;
    while total < 1500 {
        let t = random_tree(&mut rng, 30);
        total += extract_leafwise(&t, &ExtractionConfig::new(100, 100)).len();
        trees.push(t);
    }
    let paths: Vec<(&SyntaxTree, AstPath)> = trees
        .iter()
        .flat_map(|t| {
            extract_leafwise(t, &ExtractionConfig::new(100, 100))
                .into_iter()
                .map(move |c| (t, c.path))
        })
        .collect();
    use AbstractionKind::*;
    let chains = [(Id, NoArrows), (NoArrows, ForgetOrder), (Id, FirstTopLast), (FirstTopLast, FirstLast), (FirstTopLast, Top), (Top, NoPaths)];
    let mut violations = 0;
    let mut batches = 0;
    let mut counts_full = BTreeMap::new();
    for (b, batch) in std::iter::once(&paths[..]).chain(paths.chunks(50)).enumerate() {
        batches += 1;
        let counts: HashMap<AbstractionKind, usize> = AbstractionKind::ALL
            .iter()
            .map(|&k| (k, distinct_count(batch.iter().map(|(t, p)| (*t, p)), k)))
            .collect();
        violations += chains.iter().filter(|(hi, lo)| counts[hi] < counts[lo]).count();
        if counts[&NoPaths] != 1 {
            violations += 1;
        }
        if b == 0 {
            counts_full = counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        }
    }
    check(
        violations == 0,
        format!("{} paths, {batches} sets, {violations} violations, full-set counts {counts_full:?}", paths.len()),
    )
}

fn nref(n: &[Vec<f64>]) -> Vec<&[f64]> {
    n.iter().map(Vec::as_slice).collect()
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn numeric(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..at.len())
        .map(|i| {
            let mut plus = at.to_vec();
            let mut minus = at.to_vec();
            plus[i] += h;
            minus[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

fn sgns() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = rng.gen_range(2..12);
        let k = rng.gen_range(0..6);
        let vec = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect::<Vec<f64>>();
        let w = vec(&mut rng);
        let c = vec(&mut rng);
        let negs: Vec<Vec<f64>> = (0..k).map(|_| vec(&mut rng)).collect();
        let g = pair_gradient(&w, &c, &nref(&negs));
        worst = worst.max(rel_error(&g.word, &numeric(|x| pair_loss(x, &c, &nref(&negs)), &w)));
        worst = worst.max(rel_error(&g.context, &numeric(|x| pair_loss(&w, x, &nref(&negs)), &c)));
        for j in 0..k {
            let num = numeric(
                |x| {
                    let mut n = negs.clone();
                    n[j] = x.to_vec();
                    pair_loss(&w, &c, &nref(&n))
                },
                &negs[j],
            );
            worst = worst.max(rel_error(&g.negatives[j], &num));
        }
    }

    let (words, contexts) = (12, 12);
    let pairs = cooccurrence_pairs(&mut rng, words, contexts, 40);
    let cfg = SgnsConfig {
        dim: 24,
        epochs: 40,
        seed: 13,
        ..Default::default()
    };
    let (model, _) = train_sgns(&pairs, &cfg).map_err(|e| e.to_string())?;
    let mut cell: HashMap<(&str, &str), f64> = HashMap::new();
    let mut wc: HashMap<&str, f64> = HashMap::new();
    let mut cc: HashMap<&str, f64> = HashMap::new();
    for (w, c) in &pairs {
        *cell.entry((w, c)).or_default() += 1.0;
        *wc.entry(w).or_default() += 1.0;
        *cc.entry(c).or_default() += 1.0;
    }
    let n = pairs.len() as f64;
    let (mut dots, mut pmis) = (Vec::new(), Vec::new());
    for (&(w, c), &count) in &cell {
        pmis.push((count * n / (wc[w] * cc[c])).ln());
        let wv = model.word_vector(w).ok_or("missing word")?;
        let cv = model.context_vector(c).ok_or("missing context")?;
        dots.push(wv.iter().zip(cv).map(|(a, b)| (*a as f64) * (*b as f64)).sum());
    }
    let rho = spearman(&dots, &pmis);
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && rho >= 0.8 && secs < 60.0,
        format!("max gradient relative error {worst:.2e}, Spearman {rho:.3} over {} cells, {secs:.2}s", dots.len()),
    )
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn crf() -> Outcome {
    let labels = ["p", "q", "r", "s", "t"];
    let paths = ["X", "Y", "Z", "W"];
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut instances = 0;
    let mut sweeps = 0;
    let mut worst_z = 0.0f64;
    while instances < 300 {
        let training: Vec<FactorGraph> = (0..rng.gen_range(1..6))
            .map(|_| {
                let n = rng.gen_range(1..=4);
                let l = rng.gen_range(2..=5);
                random_graph(&mut rng, n, &labels[..l], &paths)
            })
            .collect();
        let scores = train_scores(&training, rng.gen_range(0.1..2.0)).map_err(|e| e.to_string())?;
        let vocab = scores.vocab();
        for _ in 0..10 {
            let n = rng.gen_range(1..=4);
            let graph = random_graph(&mut rng, n, &labels, &paths);
            let all = all_labelings(&graph, &vocab);
            let scored: Vec<f64> = all
                .iter()
                .map(|y| score_assignment(&graph, &scores, y))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let best = scored.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

            let exact = infer_map(&graph, &scores, InferenceMode::Exact).map_err(|e| e.to_string())?;
            let exact_score = score_assignment(&graph, &scores, &exact.labeling).map_err(|e| e.to_string())?;
            if (exact_score - best).abs() > TIE_TOLERANCE {
                return Err(format!("instance {instances}: exact {exact_score} vs exhaustive {best}"));
            }
            let first_best = all
                .iter()
                .zip(&scored)
                .find(|(_, &s)| s >= best - TIE_TOLERANCE)
                .map(|(y, _)| y)
                .expect("non-empty");
            if &exact.labeling != first_best {
                return Err(format!("instance {instances}: exact labeling differs from the first maximizer"));
            }

            let greedy = infer_map(&graph, &scores, InferenceMode::Greedy).map_err(|e| e.to_string())?;
            if greedy.score > exact_score + TIE_TOLERANCE {
                return Err(format!("instance {instances}: greedy {} above exact {exact_score}", greedy.score));
            }
            if greedy.trace.windows(2).any(|w| w[1] < w[0]) {
                return Err(format!("instance {instances}: trace {:?} decreases", greedy.trace));
            }
            sweeps += greedy.trace.len().saturating_sub(1);

            let log_z = log_sum_exp(&scored);
            let total: f64 = scored.iter().map(|s| (s - log_z).exp()).sum();
            worst_z = worst_z.max((total - 1.0).abs());
            instances += 1;
        }
    }
    check(
        worst_z <= 1e-9,
        format!("{instances} instances, exact = exhaustive, greedy <= exact, {sweeps} monotone sweeps, max |Z - 1| {worst_z:.1e}"),
    )
}

fn synthetic_docs(seed: u64, n: usize, prefix: &str) -> Vec<Document> {
    separable_corpus(&mut ChaCha8Rng::seed_from_u64(seed), n)
        .into_iter()
        .enumerate()
        .map(|(i, t)| Document::new(format!("{prefix}{i:05}"), t))
        .collect()
}

fn run_cell(train_docs: &[Document], test_docs: &[Document], cfg: &RunConfig) -> Result<(f64, usize, usize), String> {
    let trained = train(train_docs, cfg).map_err(|e| e.to_string())?;
    let report = evaluate(&predict(&trained, test_docs, cfg).map_err(|e| e.to_string())?);
    Ok((report.accuracy, trained.summary.extracted, trained.summary.kept))
}

fn separability(train_docs: &[Document], test_docs: &[Document]) -> Outcome {
    let start = Instant::now();
    let id = RunConfig::default();
    let nopaths = RunConfig {
        abstraction: AbstractionKind::NoPaths,
        ..Default::default()
    };
    let (id_acc, _, _) = run_cell(train_docs, test_docs, &id)?;
    let (np_acc, _, _) = run_cell(train_docs, test_docs, &nopaths)?;
    let secs = start.elapsed().as_secs_f64();
    check(
        id_acc >= 0.9 && np_acc <= 0.6 && secs < 300.0,
        format!(
            "{} train / {} held-out programs: id {:.1}%, no-paths {:.1}%, {secs:.1}s",
            train_docs.len(),
            test_docs.len(),
            100.0 * id_acc,
            100.0 * np_acc
        ),
    )
}

fn downsampling(train_docs: &[Document], test_docs: &[Document]) -> Outcome {
    let full = RunConfig::default();
    let sampled = RunConfig {
        keep_prob: 0.8,
        seed: 5,
        ..Default::default()
    };
    let (acc_full, _, _) = run_cell(train_docs, test_docs, &full)?;
    let (acc_sampled, extracted, kept) = run_cell(train_docs, test_docs, &sampled)?;
    let ratio = kept as f64 / extracted as f64;
    let delta = (acc_full - acc_sampled).abs();
    check(
        (ratio - 0.8).abs() <= 0.02 && delta <= 0.02,
        format!(
            "kept {kept}/{extracted} = {:.2}%, accuracy {:.2}% vs {:.2}%",
            100.0 * ratio,
            100.0 * acc_sampled,
            100.0 * acc_full
        ),
    )
}

fn metrics() -> Outcome {
    let snake = exact_match("totalCount", "total_count");
    let f = subtoken_f1("getFoo", "get<UNK>");
    let f_ok = [f.precision, f.recall, f.f1].iter().all(|v| (v - 0.5).abs() < 1e-12);
    let mut ev = Evaluator::new();
    let unk_hits = [("<UNK>", "<UNK>"), ("foo", "<UNK>"), ("getFoo", "get<UNK>")]
        .iter()
        .filter(|(p, g)| exact_match(p, g) || ev.add(Some(p), g))
        .count();
    check(
        snake && f_ok && unk_hits == 0 && ev.report().exact_matches == 0,
        format!(
            "snake/camel match {snake}, f1 ({}, {}, {}), gold-UNK hits {unk_hits}",
            f.precision, f.recall, f.f1
        ),
    )
}

fn astpath(cwd: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_astpath"))
        .current_dir(cwd)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("astpath {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

/// Runs the whole command sequence in `cwd` with relative paths.
fn pipeline_run(cwd: &Path) -> Result<(), String> {
    let common = ["--out", "runs", "--threads", "1", "--seed", "3"];
    let with = |extra: &[&str]| -> Vec<String> {
        common.iter().chain(extra).map(|s| s.to_string()).collect()
    };
    let run = |cmd: &str, extra: &[&str]| -> Result<String, String> {
        let mut args = vec![cmd.to_string()];
        args.extend(with(extra));
        astpath(cwd, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let synth = run("synth", &["--programs", "150"])?;
    let corpus = format!("{synth}/corpus");
    let manifest = format!("{}/manifest.tsv", run("manifest", &["--corpus", &corpus])?);
    let base = ["--corpus", corpus.as_str(), "--manifest", manifest.as_str(), "--keep-prob", "0.8"];
    run("extract", &base)?;
    for learner in [["--learner", "crf"], ["--learner", "sgns"]] {
        let mut args: Vec<&str> = base.to_vec();
        args.extend(learner);
        args.extend(["--dim", "16", "--epochs", "3"]);
        let model = run("train", &args)?;
        let mut pargs = args.clone();
        pargs.extend(["--model", model.as_str()]);
        let predictions = format!("{}/predictions.tsv", run("predict", &pargs)?);
        run("evaluate", &["--predictions", &predictions])?;
    }
    let mut args: Vec<&str> = base.to_vec();
    args.extend(["--grid-abstractions", "id,top", "--grid-keep-probs", "1.0,0.8", "--grid-limits", "7x3,4x1"]);
    run("ablate", &args)?;
    Ok(())
}

fn artifacts(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap().to_path_buf();
            let mut bytes = fs::read(e.path()).unwrap();
            if rel.file_name().is_some_and(|n| n == "ablation.tsv") {
                // Wall time is the only nondeterministic column.
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .map(|l| l.rsplit_once('\t').map_or(l, |(head, _)| head))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes();
            }
            (rel, bytes)
        })
        .collect()
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline_run(a.path())?;
    pipeline_run(b.path())?;
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    if fa.keys().ne(fb.keys()) {
        return Err("runs produced different file sets".into());
    }
    let differing: Vec<_> = fa.iter().filter(|(k, v)| fb[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    check(
        differing.is_empty() && fa.len() > 10,
        format!("{} artifacts compared, differing: {differing:?}", fa.len()),
    )
}

fn main() {
    let docs = synthetic_docs(20, 2500, "prog");
    let (train_docs, test_docs) = docs.split_at(2000);
    let criteria: Vec<Criterion> = vec![
        ("path oracle equivalence", Box::new(path_oracle)),
        ("length/width figure", Box::new(figure)),
        ("abstraction lattice", Box::new(lattice)),
        ("sgns gradient and pmi rank", Box::new(sgns)),
        ("crf oracles", Box::new(crf)),
        ("end-to-end separability", Box::new(|| separability(train_docs, test_docs))),
        ("downsampling", Box::new(|| downsampling(train_docs, test_docs))),
        ("metric conformance", Box::new(metrics)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
