use std::path::{Path, PathBuf};
use std::process::Command;

use spherefactor::cli::{compare_ranks, diagnose_chains, run};
use spherefactor::dataio::{load_chain, load_vote_matrix, save_vote_matrix, simulate_scenario, ScenarioSpec, VoteFormat};
use spherefactor::diagnostics::dic;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spherefactor"))
}

fn sf(args: &[&str]) -> i32 {
    run(std::iter::once("spherefactor").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

fn small_dataset(dir: &Path) -> PathBuf {
    assert_eq!(
        sf(&["simulate", "--scenario", "sphere2", "--subjects", "10", "--items", "20", "--k", "1", "--seed", "3", "--out-dir", s(dir)]),
        0
    );
    dir.join("sim_votes.csv")
}

#[test]
fn simulate_shapes_and_seed_repeat() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let code = sf(&["simulate", "--scenario", "sphere2", "--subjects", "100", "--items", "700", "--seed", "11", "--out-dir", s(d)]);
        assert_eq!(code, 0);
    }
    let y = load_vote_matrix(&a.path().join("sim_votes.csv"), VoteFormat::CsvWide).unwrap();
    assert_eq!((y.n_subjects(), y.n_items()), (100, 700));
    for f in ["sim_votes.csv", "sim_truth.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("sim_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 11);
    assert_eq!(m["seed_generated"], false);
}

#[test]
fn exit_codes_from_the_binary() {
    let d = tempfile::tempdir().unwrap();
    let st = bin().args(["simulate", "--k", "0", "--seed", "1", "--out-dir", s(d.path())]).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let st = bin().args(["fit", "--votes", "/does/not/exist.csv", "--out-dir", s(d.path())]).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let st = bin().args(["fit", "--votes", "x.csv", "--k", "0", "--out-dir", s(d.path())]).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let st = bin().args(["--help"]).status().unwrap();
    assert_eq!(st.code(), Some(0));
}

#[test]
fn generated_seed_is_recorded_and_reproduces() {
    let d = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["simulate", "--subjects", "5", "--items", "6", "--name", "a"])
        .env("SPHEREFACTOR_OUT_DIR", d.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("a_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed_generated"], true);
    let seed = m["seed"].as_u64().unwrap().to_string();
    assert_eq!(sf(&["simulate", "--subjects", "5", "--items", "6", "--name", "b", "--seed", &seed, "--out-dir", s(d.path())]), 0);
    assert_eq!(
        std::fs::read(d.path().join("a_votes.csv")).unwrap(),
        std::fs::read(d.path().join("b_votes.csv")).unwrap()
    );
}

#[test]
fn config_file_and_flag_precedence() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("sim.cfg");
    std::fs::write(&cfg, "subjects = 7\nitems = 9\nseed = 4\nname = fromcfg\n").unwrap();
    assert_eq!(sf(&["simulate", "--config", s(&cfg), "--items", "3", "--out-dir", s(d.path())]), 0);
    let y = load_vote_matrix(&d.path().join("fromcfg_votes.csv"), VoteFormat::CsvWide).unwrap();
    assert_eq!((y.n_subjects(), y.n_items()), (7, 3));
}

#[test]
fn fit_smoke_diagnose_and_dic_equivalence() {
    let d = tempfile::tempdir().unwrap();
    let votes = small_dataset(d.path());
    let t = std::time::Instant::now();
    let code = sf(&[
        "fit", "--votes", s(&votes), "--k", "1", "--iterations", "200", "--burn-in", "50", "--seed", "5",
        "--chains", "2", "--out-dir", s(d.path()),
    ]);
    assert_eq!(code, 0);
    assert!(t.elapsed().as_secs() < 60);
    let c0 = d.path().join("fit_spherical_k1_chain0.csv");
    let c1 = d.path().join("fit_spherical_k1_chain1.csv");
    for f in ["fit_spherical_k1_summary.csv", "fit_spherical_k1_acceptance.json", "fit_spherical_k1_manifest.json"] {
        assert!(d.path().join(f).exists(), "{f}");
    }
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("fit_spherical_k1_manifest.json")).unwrap()).unwrap();
    assert!(m["convergence_warning"].is_boolean());
    assert_eq!(m["chain_seeds"], serde_json::json!([5, 6]));

    // the same chain twice gives R-hat of exactly one
    let code = sf(&[
        "diagnose", "--votes", s(&votes), "--chains", &format!("{},{}", s(&c0), s(&c0)), "--name", "same",
        "--out-dir", s(d.path()),
    ]);
    assert_eq!(code, 0);
    let rows = read_csv(&d.path().join("same.csv"));
    let rhat: f64 = rows.iter().find(|r| r[2] == "rhat_loglik").unwrap()[3].parse().unwrap();
    assert_eq!(rhat, 1.0);

    // single-chain DIC equals the library value bit for bit
    assert_eq!(sf(&["diagnose", "--votes", s(&votes), "--chains", s(&c1), "--out-dir", s(d.path())]), 0);
    let rows = read_csv(&d.path().join("diagnostics.csv"));
    let cli_dic: f64 = rows.iter().find(|r| r[2] == "dic").unwrap()[3].parse().unwrap();
    let y = load_vote_matrix(&votes, VoteFormat::CsvWide).unwrap();
    let chain = load_chain(&c1).unwrap();
    assert_eq!(cli_dic.to_bits(), dic(&chain, &y).unwrap().dic.to_bits());
    let keys: std::collections::HashSet<_> = rows.iter().map(|r| (r[0].clone(), r[1].clone(), r[2].clone())).collect();
    assert_eq!(keys.len(), rows.len(), "one row per (model, K, metric)");

    // a chain from other data is rejected
    let other = d.path().join("other.csv");
    let sim = simulate_scenario(&ScenarioSpec::sphere(1, 10, 20), 99).unwrap();
    save_vote_matrix(&sim.votes, &other, VoteFormat::CsvWide).unwrap();
    assert!(diagnose_chains(&sim.votes, &[chain]).is_err());
    assert_eq!(sf(&["diagnose", "--votes", s(&other), "--chains", s(&c1), "--out-dir", s(d.path())]), 1);
}

#[test]
fn fit_is_byte_identical_single_thread() {
    let d = tempfile::tempdir().unwrap();
    let votes = small_dataset(d.path());
    for (name, body) in [("a", "csv"), ("b", "csv"), ("c", "binary"), ("e", "binary")] {
        let code = sf(&[
            "fit", "--votes", s(&votes), "--k", "2", "--iterations", "60", "--burn-in", "60", "--seed", "17",
            "--threads", "1", "--body", body, "--name", name, "--out-dir", s(d.path()),
        ]);
        assert_eq!(code, 0);
    }
    let read = |n: &str| std::fs::read(d.path().join(n)).unwrap();
    assert_eq!(read("a_spherical_k2_chain0.csv"), read("b_spherical_k2_chain0.csv"));
    assert_eq!(read("c_spherical_k2_chain0.bin"), read("e_spherical_k2_chain0.bin"));
}

#[test]
fn prior_study_grid_and_errors() {
    let d = tempfile::tempdir().unwrap();
    let args = ["prior-study", "--k-max", "3", "--n", "200", "--seed", "8", "--histogram-k", "1,2", "--bins", "4"];
    for name in ["p1", "p2"] {
        let mut a = args.to_vec();
        a.extend(["--name", name, "--out-dir", s(d.path())]);
        assert_eq!(sf(&a), 0);
    }
    let rows = read_csv(&d.path().join("p1.csv"));
    let series: std::collections::HashSet<_> = rows.iter().map(|r| (r[1].clone(), r[2].clone())).collect();
    assert_eq!(series.len(), 9);
    assert_eq!(rows.len(), 27);
    assert_eq!(std::fs::read(d.path().join("p1.csv")).unwrap(), std::fs::read(d.path().join("p2.csv")).unwrap());
    let hist = read_csv(&d.path().join("p1_histogram.csv"));
    assert_eq!(hist.len(), 8);
    assert_eq!(sf(&["prior-study", "--n", "0", "--out-dir", s(d.path())]), 2);
    assert_eq!(sf(&["prior-study", "--omegas=-1", "--out-dir", s(d.path())]), 2);
}

#[test]
fn compare_ranks_permutations_and_errors() {
    let d = tempfile::tempdir().unwrap();
    let votes = small_dataset(d.path());
    for (model, k) in [("spherical", "1"), ("euclidean", "1"), ("spherical", "2")] {
        let code = sf(&[
            "fit", "--votes", s(&votes), "--model", model, "--k", k, "--iterations", "100", "--burn-in", "50",
            "--seed", "2", "--out-dir", s(d.path()),
        ]);
        assert_eq!(code, 0);
    }
    let sph = d.path().join("fit_spherical_k1_chain0.csv");
    let euc = d.path().join("fit_euclidean_k1_chain0.csv");
    assert_eq!(sf(&["compare-ranks", "--spherical", s(&sph), "--euclidean", s(&euc), "--out-dir", s(d.path())]), 0);
    let rows = read_csv(&d.path().join("ranks.csv"));
    assert_eq!(rows.len(), 10);
    for col in [3, 4] {
        let mut r: Vec<usize> = rows.iter().map(|x| x[col].parse().unwrap()).collect();
        r.sort();
        assert_eq!(r, (1..=10).collect::<Vec<_>>());
    }
    let k2 = d.path().join("fit_spherical_k2_chain0.csv");
    assert_eq!(sf(&["compare-ranks", "--spherical", s(&k2), "--euclidean", s(&euc), "--out-dir", s(d.path())]), 1);
    assert_eq!(sf(&["compare-ranks", "--spherical", s(&euc), "--euclidean", s(&sph), "--out-dir", s(d.path())]), 1);

    // the same chain on both sides ranks identically
    let c = load_chain(&sph).unwrap();
    let a = spherefactor::postprocess::circular_ranks(&spherefactor::postprocess::align_chain(&c, 0).unwrap().configs).unwrap();
    let b = spherefactor::postprocess::circular_ranks(&spherefactor::postprocess::align_chain(&c, 0).unwrap().configs).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ranks_agree_on_one_dimensional_data() {
    let d = tempfile::tempdir().unwrap();
    let sim = simulate_scenario(&ScenarioSpec::euclidean(1, 12, 120), 21).unwrap();
    let votes = d.path().join("v.csv");
    save_vote_matrix(&sim.votes, &votes, VoteFormat::CsvWide).unwrap();
    for model in ["spherical", "euclidean"] {
        let code = sf(&[
            "fit", "--votes", s(&votes), "--model", model, "--k", "1", "--iterations", "600", "--burn-in", "600",
            "--seed", "4", "--out-dir", s(d.path()),
        ]);
        assert_eq!(code, 0);
    }
    let sph = load_chain(&d.path().join("fit_spherical_k1_chain0.csv")).unwrap();
    let euc = load_chain(&d.path().join("fit_euclidean_k1_chain0.csv")).unwrap();
    let (rs, re) = compare_ranks(&sph, &euc).unwrap();
    let rho = spherefactor::postprocess::spearman(&rs, &re);
    assert!(rho > 0.99, "spearman {rho}");
}
