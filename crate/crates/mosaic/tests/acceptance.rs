//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its runtime. Tolerances are pinned in the assertions.

use std::collections::BTreeMap;
use std::time::Instant;

use mosaic::agent::{
    run_design_loop, Message, ReplayGenerator, MAX_BASIC_GENERATIONS, MAX_COMPOSITE_GENERATIONS,
};
use mosaic::bench::{
    pass_at_k, run_benchmark, score_ledger, wilson_interval, BenchConfig, TrialLedger,
};
use mosaic::checks::{
    adder_epsilon, assess_oscillator, run_function_check, verify_circuit, VerifyOptions,
};
use mosaic::library::{archive_design, ToolLibrary};
use mosaic::netlist::{parse_netlist, DeviceModel, Polarity};
use mosaic::report::Stage;
use mosaic::sim::{ac_gain, device_current, solve_op, transient, Region};
use mosaic::tasks::benchmark_task;

fn done(name: &str, start: Instant, budget_s: f64) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < budget_s,
        "{name} took {elapsed:.2}s, budget {budget_s}s"
    );
    println!("ACCEPTANCE {name}: PASS ({elapsed:.2}s)");
}

// -------------------------------------------------------------------
// 1. Pass@k reproduces the printed one-decimal table values exactly.

#[test]
fn criterion_1_pass_at_k_reproduction() {
    let start = Instant::now();
    let cases = [
        (21u64, 70.0, 99.9),
        (1, 3.3, 16.7),
        (9, 30.0, 85.7),
        (15, 50.0, 97.9),
        (3, 10.0, 43.3),
    ];
    for (c, expect1, expect5) in cases {
        let p1 = (pass_at_k(30, c, 1).unwrap() * 1000.0).round() / 10.0;
        let p5 = (pass_at_k(30, c, 5).unwrap() * 1000.0).round() / 10.0;
        assert_eq!(p1, expect1, "pass@1 for c={c}");
        assert_eq!(p5, expect5, "pass@5 for c={c}");
    }
    done("criterion-1 pass@k reproduction", start, 1.0);
}

// -------------------------------------------------------------------
// 2. Linear simulator oracles: divider, RC step, RC pole.

#[test]
fn criterion_2_simulator_linear_oracles() {
    let start = Instant::now();

    let divider = parse_netlist("V1 in 0 5\nR1 in mid 1k\nR2 mid 0 1k\n").unwrap();
    let op = solve_op(&divider).unwrap();
    assert!((op.voltage("mid").unwrap() - 2.5).abs() < 1e-9);

    let rc = parse_netlist("Vin in 0 PULSE(0 1 0 1u 1u 0.1 0.2)\nR1 in out 1k\nC1 out 0 1u\n").unwrap();
    let wave = transient(&rc, 1e-6, 5e-3).unwrap();
    let idx = wave
        .time_s
        .iter()
        .position(|&t| (t - 1e-3).abs() < 1e-12)
        .unwrap();
    let v = wave.signal("out").unwrap()[idx];
    let expect = 1.0 - (-1.0f64).exp();
    assert!(
        (v - expect).abs() / expect < 5e-3,
        "RC step at t=RC: {v} vs {expect}"
    );

    let r = 1e3;
    let c = 1.0 / (2.0 * std::f64::consts::PI * r * 1000.0);
    let lp = parse_netlist(&format!("Vin in 0 1\nR1 in out 1k\nC1 out 0 {c:e}\n")).unwrap();
    let mut excitation = BTreeMap::new();
    excitation.insert("vin".to_string(), num_complex::Complex64::new(1.0, 0.0));
    let gain = ac_gain(&lp, &excitation, "out", 1000.0).unwrap();
    assert!((gain.norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);

    done("criterion-2 simulator linear oracles", start, 1.0);
}

// -------------------------------------------------------------------
// 3. Device model against an independent brute-force evaluation.

#[test]
fn criterion_3_device_model_oracle() {
    let start = Instant::now();

    // Brute-force piecewise evaluation, written straight from the level-1
    // equations, independent of the library's implementation path.
    fn brute_id(kp: f64, vto: f64, lambda: f64, wl: f64, vgs: f64, vds: f64) -> f64 {
        let vov = vgs - vto;
        if vov <= 0.0 {
            0.0
        } else if vds < vov {
            kp * wl * (vov * vds - 0.5 * vds * vds) * (1.0 + lambda * vds)
        } else {
            0.5 * kp * wl * vov * vov * (1.0 + lambda * vds)
        }
    }

    for lambda in [0.0, 0.02] {
        let model = DeviceModel {
            name: "nm".into(),
            polarity: Polarity::Nmos,
            kp: 100e-6,
            vto: 0.5,
            lambda,
        };
        let (w, l) = (50e-6, 1e-6);
        let wl = w / l;
        let h = 1e-6;
        let mut region_seen = [false; 3];
        for i in 0..100 {
            for j in 0..100 {
                let vgs = i as f64 * 5.0 / 99.0;
                let vds = j as f64 * 5.0 / 99.0;
                let state = device_current(&model, w, l, vgs, vds);
                let expect = brute_id(100e-6, 0.5, lambda, wl, vgs, vds);
                assert!(
                    (state.id - expect).abs() <= 1e-15 * expect.abs().max(state.id.abs()),
                    "id at ({vgs},{vds}) lambda={lambda}: {} vs {expect}",
                    state.id
                );
                region_seen[match state.region {
                    Region::Cutoff => 0,
                    Region::Triode => 1,
                    Region::Saturation => 2,
                }] = true;

                let gm_fd = (device_current(&model, w, l, vgs + h, vds).id
                    - device_current(&model, w, l, vgs - h, vds).id)
                    / (2.0 * h);
                let gds_fd = (device_current(&model, w, l, vgs, vds + h).id
                    - device_current(&model, w, l, vgs, vds - h).id)
                    / (2.0 * h);
                let tol = |fd: f64| 1e-6 * fd.abs().max(1e-12);
                assert!(
                    (state.gm - gm_fd).abs() <= tol(gm_fd),
                    "gm at ({vgs},{vds}) lambda={lambda}: {} vs {gm_fd}",
                    state.gm
                );
                assert!(
                    (state.gds - gds_fd).abs() <= tol(gds_fd),
                    "gds at ({vgs},{vds}) lambda={lambda}: {} vs {gds_fd}",
                    state.gds
                );
            }
        }
        assert!(region_seen.iter().all(|&s| s), "grid must span all regions");
    }
    done("criterion-3 device-model oracle", start, 5.0);
}

// -------------------------------------------------------------------
// 4. The two-stage amplifier reference netlist passes all four stages.

const TWO_STAGE_AMP: &str = "\
* Two-Stage Amplifier
.model nmos_model nmos level=1 kp=100e-6 vto=0.5
.model pmos_model pmos level=1 kp=50e-6 vto=-0.5
Vdd Vdd 0 5.0
Vin Vin 0 1.0
Vbias Vbias 0 4.0
M1 Drain1 Vin 0 0 nmos_model w=50e-6 l=1e-6
M2 Drain1 Vbias Vdd Vdd pmos_model w=100e-6 l=1e-6
M3 Vout Drain1 0 0 nmos_model w=100e-6 l=1e-6
R1 Vout Vdd 1k
.end
";

#[test]
fn criterion_4_end_to_end_reference_fixture() {
    use mosaic::tasks::{CircuitType, Difficulty, TaskSpec};
    let start = Instant::now();
    let circuit = parse_netlist(TWO_STAGE_AMP).unwrap();
    // the fixture's own design brief: a two-stage amplifier driven at Vin
    // with a Vbias rail, measured at Vout
    let task = TaskSpec {
        id: 0,
        circuit_type: CircuitType::Amplifier,
        description: "a 2-stage amplifier (first stage: a common-source stage with current-source load, second stage: a common-source stage with resistor load)".into(),
        input_nodes: vec!["Vin".into(), "Vbias".into()],
        output_nodes: vec!["Vout".into()],
        composite: false,
        difficulty: Difficulty::Medium,
    };
    let outcome = verify_circuit(&circuit, &task, &VerifyOptions::default());
    assert_eq!(outcome.stages.len(), 4, "all four stages must execute");
    for stage in &outcome.stages {
        assert!(
            stage.passed,
            "stage {} failed: {}",
            stage.stage, stage.feedback
        );
    }
    assert!(outcome.final_pass);
    assert!(
        !outcome.bias_substitutions.is_empty(),
        "the sweep stage must substitute a bias"
    );
    let gain_db = outcome.stages[3].measurements["gain_db"];
    assert!(gain_db.is_finite());
    let min_id = outcome.stages[3].measurements["min_id_amps"];
    assert!(min_id > 0.0, "every device conducts at the biased point");
    done("criterion-4 end-to-end reference fixture", start, 5.0);
}

// -------------------------------------------------------------------
// 5. Criteria matrix: pass and perturbed-fail fixture per circuit type,
//    plus synthetic-waveform verification of the analytics.

#[test]
fn criterion_5_criteria_pass_fail_matrix() {
    let start = Instant::now();
    let matrix: [(u32, &str, &str); 12] = [
        (1, include_str!("fixtures/task01_amp.sp"), include_str!("fixtures/task01_amp_shorted.sp")),
        (8, include_str!("fixtures/task08_mirror.sp"), include_str!("fixtures/task08_mirror_triode.sp")),
        (6, include_str!("fixtures/task06_follower.sp"), include_str!("fixtures/task06_nmos_inverter.sp")),
        (11, include_str!("fixtures/task11_opamp.sp"), include_str!("fixtures/task11_opamp_dead_tail.sp")),
        (16, include_str!("fixtures/task16_rc_oscillator.sp"), include_str!("fixtures/task16_rc_oscillator_latched.sp")),
        (18, include_str!("fixtures/task18_integrator.sp"), include_str!("fixtures/task18_integrator_passive.sp")),
        (19, include_str!("fixtures/task19_differentiator.sp"), include_str!("fixtures/task19_differentiator_passive.sp")),
        (20, include_str!("fixtures/task20_adder.sp"), include_str!("fixtures/task20_adder_lowgain.sp")),
        (21, include_str!("fixtures/task21_subtractor.sp"), include_str!("fixtures/task21_subtractor_skewed.sp")),
        (22, include_str!("fixtures/task22_schmitt.sp"), include_str!("fixtures/task22_plain_inverter.sp")),
        (23, include_str!("fixtures/task23_vco.sp"), include_str!("fixtures/task23_vco_fixed_bias.sp")),
        (24, include_str!("fixtures/task24_pll.sp"), include_str!("fixtures/task24_pll_stuck.sp")),
    ];
    let opts = VerifyOptions::default();
    for (task_id, pass_fixture, fail_fixture) in matrix {
        let task = benchmark_task(task_id).unwrap();
        let pass = run_function_check(
            &parse_netlist(pass_fixture).unwrap().flatten().unwrap(),
            &task,
            &opts,
        );
        assert!(
            pass.passed,
            "{} pass fixture failed: {}",
            task.circuit_type, pass.feedback
        );
        let fail = run_function_check(
            &parse_netlist(fail_fixture).unwrap().flatten().unwrap(),
            &task,
            &opts,
        );
        assert!(
            !fail.passed,
            "{} perturbed fixture unexpectedly passed",
            task.circuit_type
        );
        assert!(!fail.feedback.is_empty());
    }

    // synthetic-waveform analytics: a pure 1 kHz sine over 10 ms is a
    // textbook oscillation; an ideal adder has zero error
    let dt = 10e-6;
    let (time, signal): (Vec<f64>, Vec<f64>) = (0..=1000)
        .map(|k| {
            let t = k as f64 * dt;
            (t, (2.0 * std::f64::consts::PI * 1000.0 * t).sin())
        })
        .unzip();
    let osc = assess_oscillator(&time, &signal);
    assert!(osc.passed(), "{:?}", osc.findings);
    assert_eq!(osc.measurements["peak_count"], 10.0);
    assert!((osc.measurements["amplitude_v"] - 1.0).abs() < 1e-3);
    assert!(osc.measurements["period_variability"] < 1e-12);
    for vin1 in [0.25, 0.5, 0.75] {
        assert_eq!(adder_epsilon(vin1, 0.9, -(vin1 + 0.9)), 0.0);
    }

    done("criterion-5 criteria pass/fail matrix", start, 60.0);
}

// -------------------------------------------------------------------
// 6. Agent retry policy under scripted generators.

const GOOD_AMP_REPLY: &str = "\
Here is the corrected design.

```
* common-source amplifier
.model nmos_model nmos level=1 kp=100e-6 vto=0.5
Vdd Vdd 0 5.0
Vin Vin 0 0.9
M1 Vout Vin 0 0 nmos_model w=5u l=1u
RD Vdd Vout 10k
.end
```
";

const FLOATING_AMP_REPLY: &str = "\
First attempt:

```
* amplifier with a dangling internal node
.model nmos_model nmos level=1 kp=100e-6 vto=0.5
Vdd Vdd 0 5.0
Vin Vin 0 0.9
M1 Vout Vin 0 0 nmos_model w=5u l=1u
RD Vdd Vout 10k
Rdangle lonely mid2 1k
Rdangle2 mid2 0 1k
.end
```
";

#[test]
fn criterion_6_agent_retry_policy() {
    let start = Instant::now();
    let opts = VerifyOptions::default();

    // (a) failure -> feedback -> success within the cap
    let task = benchmark_task(1).unwrap();
    let mut lib = ToolLibrary::new();
    let mut gen = ReplayGenerator::new(vec![FLOATING_AMP_REPLY.into(), GOOD_AMP_REPLY.into()]);
    let record = run_design_loop(&task, &mut gen, &mut lib, &opts);
    assert!(record.success);
    assert_eq!(record.attempts.len(), 2);

    // (d) the repair prompt carries the exact stage diagnostic text
    let failing_outcome = record.attempts[0].outcome.as_ref().unwrap();
    let diagnostic = failing_outcome.first_failure().unwrap().feedback.clone();
    let repair: &Message = record.attempts[1].prompt_messages.last().unwrap();
    assert!(
        repair.content.contains(&diagnostic),
        "repair prompt must quote the stage diagnostic verbatim:\n{diagnostic}\n---\n{}",
        repair.content
    );

    // (b) cap enforcement on persistent failure
    let mut gen = ReplayGenerator::new(vec![
        FLOATING_AMP_REPLY.into(),
        FLOATING_AMP_REPLY.into(),
        FLOATING_AMP_REPLY.into(),
        FLOATING_AMP_REPLY.into(),
        FLOATING_AMP_REPLY.into(),
    ]);
    let record = run_design_loop(&task, &mut gen, &mut lib, &opts);
    assert!(!record.success);
    assert_eq!(record.attempts.len(), MAX_BASIC_GENERATIONS);

    // (c) composite tasks cap at two generations
    let composite = benchmark_task(18).unwrap();
    let mut gen = ReplayGenerator::new(vec![
        "no netlist here".into(),
        "still no netlist".into(),
        "unused".into(),
    ]);
    let mut empty_lib = ToolLibrary::new();
    let record = run_design_loop(&composite, &mut gen, &mut empty_lib, &opts);
    assert!(!record.success);
    assert_eq!(record.attempts.len(), MAX_COMPOSITE_GENERATIONS);

    done("criterion-6 agent retry policy", start, 10.0);
}

// -------------------------------------------------------------------
// 7. Tool-library composite flow: archive an opamp, reuse it for the
//    integrator, verify the flattened composite.

#[test]
fn criterion_7_tool_library_composite_flow() {
    let start = Instant::now();
    let opts = VerifyOptions::default();

    // archive the verified differential opamp (task 11)
    let opamp = parse_netlist(include_str!("fixtures/task11_opamp.sp")).unwrap();
    let task11 = benchmark_task(11).unwrap();
    let outcome = verify_circuit(&opamp, &task11, &opts);
    assert!(outcome.final_pass, "opamp fixture must verify");
    let mut lib = ToolLibrary::new();
    assert!(archive_design(&mut lib, &task11, &opamp, &outcome).unwrap());
    let entry = lib.get(11).unwrap().clone();
    assert_eq!(entry.subckt.name, "opamp11");
    assert_eq!(entry.subckt.ports, vec!["vinp", "vinn", "vout"]);

    // a scripted composite run: retrieval picks tool 11, then the design
    // instantiates it as an inverting integrator
    let integrator_reply = "\
Using the provided subcircuit:

```
* opamp integrator around the library tool
Vin Vin 0 2.5
Vp vp 0 2.5
X1 vp n1 Vout opamp11
R1 Vin n1 10k
Cf n1 Vout 100n
Rdc n1 Vout 10meg
.end
```
";
    let task18 = benchmark_task(18).unwrap();
    let mut gen = ReplayGenerator::new(vec!["[11]".into(), integrator_reply.into()]);
    let record = run_design_loop(&task18, &mut gen, &mut lib, &opts);

    assert!(record.success, "composite trial must succeed");
    assert_eq!(record.attempts.len(), 1, "one design generation");
    let prompt = &record.attempts[0].prompt_messages.last().unwrap().content;
    assert!(
        prompt.contains(".subckt opamp11 vinp vinn vout"),
        "prompt must carry the tool declaration"
    );
    assert!(
        prompt.contains("X1 vinp vinn vout opamp11"),
        "prompt must carry the instance line"
    );
    let outcome = record.attempts[0].outcome.as_ref().unwrap();
    assert!(outcome.final_pass);
    let function = outcome.stages.iter().find(|s| s.stage == Stage::Function).unwrap();
    let slope_err = function.measurements["slope_error"];
    assert!(slope_err <= 0.3, "slope error {slope_err}");
    assert!(function.measurements["r_squared"] > 0.9);
    assert!(function.measurements["peak_count"] > 2.0);
    // composite successes never mutate the library
    assert_eq!(lib.entries.len(), 1);

    done("criterion-7 tool-library composite flow", start, 30.0);
}

// -------------------------------------------------------------------
// 8. Wilson statistics: exact center and empirical coverage.

#[test]
fn criterion_8_wilson_statistics() {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let start = Instant::now();

    let (lo, hi) = wilson_interval(15, 30, 0.90).unwrap();
    assert!(
        ((lo + hi) / 2.0 - 0.5).abs() < 1e-12,
        "symmetric counts center the interval at 1/2"
    );

    let mut rng = StdRng::seed_from_u64(0x5eed);
    for n in [15u64, 30] {
        for p in [0.1, 0.5, 0.9] {
            let mut covered = 0usize;
            let replicates = 10_000;
            for _ in 0..replicates {
                let c = (0..n).filter(|_| rng.random::<f64>() < p).count() as u64;
                let (lo, hi) = wilson_interval(c, n, 0.90).unwrap();
                if lo <= p && p <= hi {
                    covered += 1;
                }
            }
            let coverage = covered as f64 / replicates as f64;
            assert!(
                coverage >= 0.88,
                "coverage {coverage:.3} at n={n}, p={p}"
            );
        }
    }
    done("criterion-8 wilson statistics", start, 30.0);
}

// -------------------------------------------------------------------
// 9. Harness durability: a run killed mid-way resumes to the identical
//    ledger.

#[test]
fn criterion_9_harness_durability() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    // scripted outcomes: trials alternate pass/fail deterministically
    let factory = |_task: u32, trial: u32| -> Box<dyn mosaic::agent::Generator> {
        let reply = if trial.is_multiple_of(3) {
            FLOATING_AMP_REPLY
        } else {
            GOOD_AMP_REPLY
        };
        Box::new(ReplayGenerator::new(vec![
            reply.into(),
            reply.into(),
            reply.into(),
        ]))
    };
    let tasks = vec![benchmark_task(1).unwrap(), benchmark_task(6).unwrap()];
    let config = |path: std::path::PathBuf| BenchConfig {
        n: 6,
        concurrency: 2,
        ledger_path: Some(path),
        freeze_library: false,
        verify: VerifyOptions::default(),
    };

    // uninterrupted reference run
    let ref_path = dir.path().join("reference.ledger");
    let mut lib = ToolLibrary::new();
    let (reference, ref_report) =
        run_benchmark(&tasks, &factory, &config(ref_path.clone()), &mut lib).unwrap();

    // interrupted run: keep a prefix of the ledger plus a torn line, as a
    // kill mid-write would leave, then resume
    let resumed_path = dir.path().join("resumed.ledger");
    let full = std::fs::read_to_string(&ref_path).unwrap();
    let lines: Vec<&str> = full.lines().collect();
    let keep = lines.len() / 2;
    let mut partial = lines[..keep].join("\n");
    partial.push('\n');
    partial.push_str(&lines[keep][..lines[keep].len() / 3]);
    std::fs::write(&resumed_path, partial).unwrap();

    let mut lib = ToolLibrary::new();
    let (resumed, resumed_report) =
        run_benchmark(&tasks, &factory, &config(resumed_path.clone()), &mut lib).unwrap();

    assert_eq!(resumed.records, reference.records, "ledgers must match");
    assert_eq!(resumed_report, ref_report);
    // and the persisted files load back to the same records
    let from_disk = TrialLedger::load(&resumed_path, 6).unwrap();
    assert_eq!(from_disk.records, reference.records);
    let rescored = score_ledger(&from_disk, &[1, 6]).unwrap();
    assert_eq!(rescored, ref_report);

    done("criterion-9 harness durability", start, 30.0);
}
