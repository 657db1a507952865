//! End-to-end tests against the built binary.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use modesim::auth_state::AccountId;
use modesim::workload::{synth_institution, synthesize, RawTransfer, Trace};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modesim"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn run_expect_code(args: &[&str], code: i32) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert_eq!(
        out.status.code(),
        Some(code),
        "command {args:?}: stderr {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn scratch_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("modesim-cli-test-{}", std::process::id()));
    fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

fn write_trace_csv(name: &str, trace: &Trace) -> PathBuf {
    let mut text = String::from("block_number,tx_index,from,to,value_wei\n");
    for r in trace.rows() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.block,
            r.tx_index,
            r.from.to_hex(),
            r.to.to_hex(),
            r.value
        ));
    }
    let path = scratch_dir().join(name);
    fs::write(&path, text).expect("write trace");
    path
}

#[test]
fn cost_reproduces_published_figures() {
    let out = run_ok(&[
        "cost", "--preset", "istanbul", "--nw", "12.30", "--nr", "34.76", "--l", "1", "--mode",
        "m2",
    ]);
    assert!(out.contains("18135"), "{out}");
    assert!(out.contains("saves 13.64%"), "{out}");

    let out = run_ok(&[
        "cost", "--preset", "legacy", "--nw", "1.49", "--nr", "10.89", "--l", "1", "--mode", "m3",
    ]);
    assert!(out.contains("66698"), "{out}");
    assert!(out.contains("costs 217.61% more"), "{out}");

    let out = run_ok(&["cost", "--nw", "3", "--nr", "4", "--mode", "m1"]);
    assert!(out.contains("21000"), "{out}");
    assert!(out.contains("saves 0.00%"), "{out}");
}

#[test]
fn cost_rejects_bad_usage() {
    run_expect_code(&["cost", "--nw", "0", "--nr", "0", "--mode", "m2"], 2);
    run_expect_code(&["cost", "--nw", "1", "--nr", "0", "--mode", "m9"], 2);
    run_expect_code(&["cost", "--nw", "x", "--nr", "0", "--mode", "m1"], 2);
    run_expect_code(
        &[
            "cost",
            "--preset",
            "byzantium",
            "--nw",
            "1",
            "--nr",
            "0",
            "--mode",
            "m1",
        ],
        2,
    );
}

#[test]
fn identical_invocations_are_byte_identical() {
    let args = [
        "cost", "--preset", "istanbul", "--nw", "4.65", "--nr", "9.00", "--mode", "m3",
    ];
    assert_eq!(run_ok(&args), run_ok(&args));
}

#[test]
fn schedule_file_matches_its_preset() {
    let config = "\
base_fee = 21000
calldata_byte = 16
internal_transfer = 7500
hash_op = 222
digest_update = 5000
sig_verify = 6600
addr_bytes = 20
value_bytes_m2 = 32
payload_bytes_m3 = 36
sig_bytes = 65
digest_bytes = 32
base_tree_depth = 20
";
    let path = scratch_dir().join("istanbul-copy.conf");
    fs::write(&path, config).unwrap();
    let from_file = run_ok(&[
        "cost",
        "--schedule-file",
        path.to_str().unwrap(),
        "--nw",
        "12.30",
        "--nr",
        "34.76",
        "--mode",
        "m2",
        "--format",
        "csv",
    ]);
    assert!(from_file.contains("18135"), "{from_file}");

    let broken = scratch_dir().join("broken.conf");
    fs::write(&broken, "base_fee = 21000\nhash_op = zero\n").unwrap();
    run_expect_code(
        &[
            "cost",
            "--schedule-file",
            broken.to_str().unwrap(),
            "--nw",
            "1",
            "--nr",
            "0",
            "--mode",
            "m1",
        ],
        2,
    );
}

/// Fixture whose 5-block window statistics are exactly (59.64, 168.60):
/// 125 blocks, 1491 funding and 4215 spend transfers.
fn delayed_stats_fixture() -> Trace {
    let institution = synth_institution();
    let mut rows = Vec::new();
    let spenders: Vec<AccountId> = (0..12)
        .map(|n| AccountId::derived("sweep-spender", n))
        .collect();
    for block in 1..=125u64 {
        let mut idx = 0u32;
        let fundings = if block <= 116 { 12 } else { 11 };
        for _ in 0..fundings {
            let fresh = AccountId::derived("sweep-recipient", block * 1000 + idx as u64);
            let receiver = if block == 1 && (idx as usize) < spenders.len() {
                spenders[idx as usize]
            } else {
                fresh
            };
            rows.push(RawTransfer {
                block,
                tx_index: idx,
                from: institution,
                to: receiver,
                value: 1_000_000_000,
            });
            idx += 1;
        }
        // Spend rows follow the block's funding rows, so even the block-1
        // spenders are funded by the time they send.
        let spends = if block <= 90 { 34 } else { 33 };
        for s in 0..spends {
            rows.push(RawTransfer {
                block,
                tx_index: idx,
                from: spenders[(s as usize) % spenders.len()],
                to: AccountId::derived("sweep-sink", block),
                value: 1,
            });
            idx += 1;
        }
    }
    // 116*12 + 9*11 = 1491 fundings; 90*34 + 35*33 = 4215 spends.
    Trace::from_rows(rows).unwrap()
}

#[test]
fn sweep_reproduces_the_delayed_case_study() {
    let trace = delayed_stats_fixture();
    let path = write_trace_csv("sweep.csv", &trace);
    let out = run_ok(&[
        "sweep",
        "--trace",
        path.to_str().unwrap(),
        "--institution",
        &synth_institution().to_hex(),
        "--k-from",
        "5",
        "--k-to",
        "5",
        "--format",
        "csv",
    ]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("k,m2_amortized,m3_amortized"));
    assert_eq!(lines.next(), Some("5,17781,23640"));
}

#[test]
fn stats_and_classify_report_window_means() {
    let trace = synthesize(2, 1, 10, 7).unwrap();
    let path = write_trace_csv("stats.csv", &trace);
    let inst = synth_institution().to_hex();
    let out = run_ok(&[
        "stats",
        "--trace",
        path.to_str().unwrap(),
        "--institution",
        &inst,
        "--window",
        "5",
        "--format",
        "csv",
    ]);
    assert!(out.contains("5,10.0000,5.0000"), "{out}");

    let out = run_ok(&[
        "classify",
        "--trace",
        path.to_str().unwrap(),
        "--institution",
        &inst,
        "--format",
        "csv",
    ]);
    assert!(out.contains("1,20,10,20,1,10,2.0000,1.0000"), "{out}");
}

#[test]
fn simulate_emits_the_report_schema() {
    let trace = synthesize(2, 1, 6, 3).unwrap();
    let path = write_trace_csv("simulate.csv", &trace);
    let inst = synth_institution().to_hex();
    let out = run_ok(&[
        "simulate",
        "--trace",
        path.to_str().unwrap(),
        "--institution",
        &inst,
        "--mode",
        "m3",
        "--k",
        "2",
        "--format",
        "json",
    ]);
    for key in ["per_block", "totals", "total_gas", "delays", "proof_bytes"] {
        assert!(out.contains(key), "missing {key} in {out}");
    }

    // Table format summarizes and matches the dedicated-mode arithmetic.
    let out = run_ok(&[
        "simulate",
        "--trace",
        path.to_str().unwrap(),
        "--institution",
        &inst,
        "--mode",
        "m1",
        "--format",
        "csv",
    ]);
    // 18 transfers at the base fee.
    assert!(out.contains("378000"), "{out}");
}

#[test]
fn policy_rows_are_deterministic_and_bounded() {
    let trace = synthesize(10, 1, 12, 3).unwrap();
    let path = write_trace_csv("policy.csv", &trace);
    let inst = synth_institution().to_hex();
    let args = [
        "policy",
        "--trace",
        path.to_str().unwrap(),
        "--institution",
        &inst,
        "--preset",
        "legacy",
        "--policies",
        "max_0,max_5,optimize_cost,every_1",
        "--format",
        "csv",
    ];
    let out = run_ok(&args);
    assert_eq!(run_ok(&args), out, "policy output must be deterministic");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(
        lines[0],
        "policy,preset,normalized_cost,average_delay,max_delay,write_intensive_fraction"
    );
    assert!(lines[1].starts_with("max_0,legacy,"));
    assert!(
        lines[1].contains(",0.00,0,"),
        "max_0 must have zero delay: {out}"
    );
    let optimize: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(optimize[0], "optimize_cost");
    let normalized: f64 = optimize[2].parse().unwrap();
    assert!(normalized < 1.0, "optimizer should beat baseline: {out}");

    run_expect_code(
        &[
            "policy",
            "--trace",
            path.to_str().unwrap(),
            "--institution",
            &inst,
            "--policies",
            "warp_9",
        ],
        2,
    );
}

#[test]
fn discover_handles_fixtures_and_empty_input() {
    let trace = synthesize(3, 2, 5, 1).unwrap();
    let path = write_trace_csv("discover.csv", &trace);
    let out = run_ok(&[
        "discover",
        "--trace",
        path.to_str().unwrap(),
        "--top",
        "1",
        "--format",
        "csv",
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2, "header plus one row: {out}");
    assert!(lines[1].contains(&synth_institution().to_hex()));

    let empty = scratch_dir().join("empty.csv");
    fs::write(&empty, "block_number,tx_index,from,to,value_wei\n").unwrap();
    let out = run_ok(&["discover", "--trace", empty.to_str().unwrap()]);
    assert_eq!(
        out.lines().count(),
        1,
        "empty trace lists no senders: {out}"
    );

    run_expect_code(&["discover", "--trace", "/nonexistent/trace.csv"], 1);
}

#[test]
fn output_flag_writes_the_file() {
    let target = scratch_dir().join("cost-out.csv");
    let _ = fs::remove_file(&target);
    run_ok(&[
        "cost",
        "--nw",
        "12.30",
        "--nr",
        "34.76",
        "--mode",
        "m2",
        "--format",
        "csv",
        "--output",
        target.to_str().unwrap(),
    ]);
    let written = fs::read_to_string(&target).unwrap();
    assert!(written.contains("18135"));
}

/// Trace built to the published top-sender proportions: 10,000 transfers
/// with the heaviest sender at exactly 4.81% of them.
fn ranking_fixture_csv() -> PathBuf {
    let listed: [(&str, u64, u128); 10] = [
        ("ethermine", 481, 5306),
        ("coinbase-3", 208, 18816),
        ("coinbase-4", 208, 19127),
        ("coinbase-5", 205, 24248),
        ("coinbase-6", 205, 20667),
        ("f2pool-old", 113, 2440),
        ("crypto-com", 92, 5732),
        ("ftx-exchange-2", 81, 24320),
        ("hiveon-spreader-2", 78, 680),
        ("hiveon-spreader", 76, 672),
    ];
    const WEI: u128 = 1_000_000_000_000_000_000;
    let mut rows = Vec::new();
    let mut position = 0u64;
    let mut push = |sender: AccountId, count: u64, total_eth: u128, rows: &mut Vec<RawTransfer>| {
        let total_wei = total_eth * WEI;
        for i in 0..count {
            rows.push(RawTransfer {
                block: position / 50,
                tx_index: (position % 50) as u32,
                from: sender,
                to: AccountId::derived("fixture-recipient", position),
                value: total_wei / count as u128
                    + if i == 0 { total_wei % count as u128 } else { 0 },
            });
            position += 1;
        }
    };
    for (label, count, eth) in listed {
        push(AccountId::derived(label, 0), count, eth, &mut rows);
    }
    let mut remaining = 10_000u64 - rows.len() as u64;
    let mut tail = 0u64;
    while remaining > 0 {
        let count = remaining.min(60);
        push(
            AccountId::derived("fixture-tail", tail),
            count,
            2_000,
            &mut rows,
        );
        tail += 1;
        remaining -= count;
    }
    write_trace_csv("ranking.csv", &Trace::from_rows(rows).unwrap())
}

#[test]
fn discover_ranks_the_fixture_like_the_published_table() {
    let path = ranking_fixture_csv();
    let out = run_ok(&[
        "discover",
        "--trace",
        path.to_str().unwrap(),
        "--top",
        "10",
        "--format",
        "csv",
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 11);
    let top: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(top[0], "1");
    assert_eq!(top[1], AccountId::derived("ethermine", 0).to_hex());
    assert_eq!(top[2], "481");
    assert_eq!(top[3], "4.81");
    assert_eq!(top[4], "5306.00");
}

#[test]
fn sweep_first_row_agrees_with_the_cost_command() {
    let trace = synthesize(3, 1, 8, 4).unwrap();
    let path = write_trace_csv("sweep-consistency.csv", &trace);
    let inst = synth_institution().to_hex();
    let sweep_out = run_ok(&[
        "sweep",
        "--trace",
        path.to_str().unwrap(),
        "--institution",
        &inst,
        "--k-from",
        "1",
        "--k-to",
        "3",
        "--format",
        "csv",
    ]);
    let k1: Vec<&str> = sweep_out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(k1[0], "1");

    // The k=1 row must equal the cost command at the same per-block shape.
    let cost_m2 = run_ok(&[
        "cost", "--nw", "3", "--nr", "1", "--l", "1", "--mode", "m2", "--format", "csv",
    ]);
    let cost_m3 = run_ok(&[
        "cost", "--nw", "3", "--nr", "1", "--l", "1", "--mode", "m3", "--format", "csv",
    ]);
    let amortized = |out: &str| -> String {
        out.lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(3)
            .unwrap()
            .to_string()
    };
    assert_eq!(k1[1], amortized(&cost_m2), "{sweep_out} vs {cost_m2}");
    assert_eq!(k1[2], amortized(&cost_m3), "{sweep_out} vs {cost_m3}");
}
